use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ergi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ergi")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = ergi(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, text).unwrap();
    p
}

/// Data rows: everything but the header and the trailing metadata line.
fn data_rows(path: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.last().unwrap().starts_with("# ergi "), "{}: no metadata line", path.display());
    lines[1..lines.len() - 1].iter().map(|s| s.to_string()).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_rv(path: &Path, values: &[f64]) {
    let mut text = String::from("day_index,rv,k_window,truncated_count,error\n");
    for (i, v) in values.iter().enumerate() {
        text.push_str(&format!("{i},{v},19,0,\n"));
    }
    std::fs::write(path, text).unwrap();
}

/// Deterministic positive series with some persistence.
fn synthetic_rv(n: usize) -> Vec<f64> {
    let mut x = 0.0_f64;
    (0..n)
        .map(|i| {
            let shock = ((i as f64 * 12.9898).sin() * 43758.5453).fract() - 0.5;
            x = 0.6 * x + shock;
            (1.0 + x).exp()
        })
        .collect()
}

#[test]
fn simulate_row_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["simulate", "--seed", "11", "--out", s(&a)]);
    ok(&["simulate", "--seed", "11", "--out", s(&b)]);
    assert_eq!(data_rows(&a.join("ticks.csv")).len(), 100 * 390);
    let iv = data_rows(&a.join("true_iv.csv"));
    assert_eq!(iv.len(), 100);
    for f in ["ticks.csv", "true_iv.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let jumps: f64 = iv.iter().map(|r| r.split(',').nth(4).unwrap().parse::<f64>().unwrap()).sum();
    assert!((jumps - 1000.0).abs() <= 3.0 * 1000f64.sqrt(), "total jumps {jumps}");
}

#[test]
fn rv_flags_empty_days_and_is_insensitive_to_truncation_without_jumps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[simulation]\nn_days = 20\njump_intensity = 0.0\n");
    let sim = dir.path().join("sim");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&sim)]);

    // Drop day 5 entirely to leave a gap.
    let ticks = sim.join("ticks.csv");
    let text = std::fs::read_to_string(&ticks).unwrap();
    let kept: Vec<&str> = text.lines().filter(|l| !l.starts_with("5,")).collect();
    let gapped = dir.path().join("gapped.csv");
    std::fs::write(&gapped, kept.join("\n")).unwrap();
    // No trailing newline after the metadata comment, on purpose.
    let r4 = dir.path().join("r4");
    ok(&["rv", "--ticks", s(&gapped), "--out", s(&r4)]);
    let rows = data_rows(&r4.join("rv.csv"));
    assert_eq!(rows.len(), 20);
    assert!(rows[5].ends_with("empty day"), "{}", rows[5]);
    assert!(rows[6].ends_with(','));

    let r10 = dir.path().join("r10");
    ok(&["rv", "--ticks", s(&gapped), "--out", s(&r10), "--c-tau-multiplier", "10"]);
    let parse = |rows: &[String]| -> Vec<Option<f64>> {
        rows.iter().map(|r| r.split(',').nth(1).unwrap().parse().ok()).collect()
    };
    let a = parse(&rows);
    let b = parse(&data_rows(&r10.join("rv.csv")));
    // Bursts of intraday volatility can still trip the tighter threshold on
    // an odd day, so compare the series average.
    let pairs: Vec<(f64, f64)> = a.iter().zip(&b).filter_map(|(x, y)| Some(((*x)?, (*y)?))).collect();
    assert_eq!(pairs.len(), 19);
    let (sa, sb) = pairs.iter().fold((0.0, 0.0), |(p, q), (x, y)| (p + x, q + y));
    assert!(((sa - sb) / sb).abs() < 0.01, "{sa} vs {sb}");
    let same = pairs.iter().filter(|(x, y)| x == y).count();
    assert!(same >= 17, "{same} of 19 days unchanged");
}

#[test]
fn fit_report_model_file_and_warm_start() {
    let dir = tempfile::tempdir().unwrap();
    let rv = dir.path().join("rv.csv");
    write_rv(&rv, &synthetic_rv(400));
    let first = dir.path().join("first");
    let out = ok(&["fit", "--rv", s(&rv), "--out", s(&first)]);
    let report = String::from_utf8(out.stdout).unwrap();
    assert!(report.contains("omega_g") && report.contains("p-value"));
    let model = first.join("model.toml");
    let m1 = ergi_cli::model_file::ModelFile::load(&model).unwrap();

    let second = dir.path().join("second");
    ok(&["fit", "--rv", s(&rv), "--out", s(&second), "--warm-start", s(&model)]);
    let m2 = ergi_cli::model_file::ModelFile::load(&second.join("model.toml")).unwrap();
    for (a, b) in m1.fit.theta_hat.to_array().iter().zip(m2.fit.theta_hat.to_array()) {
        assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
    }
    assert_eq!(m1.data_sha256, m2.data_sha256);
}

#[test]
fn malformed_csv_is_a_data_error_naming_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let rv = dir.path().join("rv.csv");
    std::fs::write(&rv, "day_index,rv,k_window,truncated_count,error\n0,1.5,19,0,\n1,oops,19,0,\n").unwrap();
    let out = ergi(&["fit", "--rv", s(&rv), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad_key = write_config(dir.path(), "[simulation]\nn_dayz = 3\n");
    assert_eq!(ergi(&["simulate", "--config", s(&bad_key)]).status.code(), Some(2));
    let zero = write_config(dir.path(), "[study]\nreplications = 0\n");
    assert_eq!(ergi(&["mc-study", "--config", s(&zero)]).status.code(), Some(2));
    assert_eq!(ergi(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn domain_and_numerical_failures_have_their_own_codes() {
    let dir = tempfile::tempdir().unwrap();
    // |beta| >= 1 is rejected while reading the config.
    let cfg = write_config(dir.path(), "[model]\nomega = 0.0\ngamma = 0.3\nbeta = 1.5\nnu = 1.0\n");
    assert_eq!(ergi(&["simulate", "--config", s(&cfg)]).status.code(), Some(2));
    // Valid structural parameters whose GARCH image is non-stationary.
    let cfg = write_config(
        dir.path(),
        "[model]\nomega = 0.0\ngamma = 0.9\nbeta = 0.9\nnu = 0.1\n[mgf]\nmethod = \"riccati\"\n",
    );
    let out = ergi(&["mc-study", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    // Too few days to fit is a data problem.
    let rv = dir.path().join("rv.csv");
    write_rv(&rv, &[1.0; 10]);
    assert_eq!(ergi(&["fit", "--rv", s(&rv), "--out", s(dir.path())]).status.code(), Some(3));
}

#[test]
fn backtest_counts_forecasts_per_model() {
    let dir = tempfile::tempdir().unwrap();
    let rv = dir.path().join("rv.csv");
    write_rv(&rv, &synthetic_rv(1762));
    let cfg = write_config(
        dir.path(),
        "[backtest]\nwindow = 500\nrefit_every = 200\nmodels = [\"ERGI\", \"RealGARCH\", \"HAR\", \"MeanRV\", \"PRV\"]\n",
    );
    let out = dir.path().join("bt");
    ok(&["backtest", "--config", s(&cfg), "--rv", s(&rv), "--out", s(&out)]);
    let rows = data_rows(&out.join("forecasts.csv"));
    for model in ["ERGI", "RealGARCH", "HAR", "MeanRV", "PRV"] {
        let n = rows.iter().filter(|r| r.split(',').nth(1) == Some(model)).count();
        assert_eq!(n, 1262, "{model}");
    }
    assert_eq!(data_rows(&out.join("metrics.csv")).len(), 5);
    assert_eq!(data_rows(&out.join("dm.csv")).len(), 10);
}

#[test]
fn identical_models_surface_dm_errors() {
    let dir = tempfile::tempdir().unwrap();
    let rv = dir.path().join("rv.csv");
    write_rv(&rv, &synthetic_rv(200));
    let cfg = write_config(dir.path(), "[backtest]\nwindow = 100\nmodels = [\"MeanRV\", \"MeanRV\"]\n");
    let out = dir.path().join("bt");
    ok(&["backtest", "--config", s(&cfg), "--rv", s(&rv), "--out", s(&out)]);
    let dm = data_rows(&out.join("dm.csv"));
    assert_eq!(dm.len(), 1);
    assert!(dm[0].ends_with("identical forecasts"), "{}", dm[0]);
}

#[test]
fn mc_study_writes_all_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[mgf]\nmethod = \"riccati\"\n[simulation]\ngrid_steps_per_day = 1170\n\
         [study]\nreplications = 3\nn_values = [60]\nm_values = [390]\nforecast_days = 2\n",
    );
    let out = dir.path().join("mc");
    ok(&["mc-study", "--config", s(&cfg), "--out", s(&out), "--jobs", "1"]);
    assert_eq!(data_rows(&out.join("mc_mse.csv")).len(), 1);
    assert_eq!(data_rows(&out.join("mc_zstats.csv")).len(), 3);
    assert_eq!(data_rows(&out.join("mc_forecast_mse.csv")).len(), 3);
    assert!(data_rows(&out.join("mc_qq.csv")).len() <= 9);
}

#[test]
fn full_study_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[simulation]\ngrid_steps_per_day = 1170\n[backtest]\nwindow = 100\nrefit_every = 25\nsimulated_days = 160\n",
    );
    let out = dir.path().join("full");
    ok(&["full-study", "--config", s(&cfg), "--out", s(&out)]);
    for f in ["ticks.csv", "true_iv.csv", "rv.csv", "returns.csv", "forecasts.csv", "metrics.csv", "dm.csv", "ranks.csv"] {
        data_rows(&out.join(f));
    }
    assert!(out.join("model.toml").exists());
    let ranks = data_rows(&out.join("ranks.csv"));
    assert_eq!(ranks.len(), 6);
    // Average ranks over k models sum to k(k+1)/2.
    let total: f64 = ranks.iter().map(|r| r.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 21.0).abs() < 1e-9, "{total}");
}
