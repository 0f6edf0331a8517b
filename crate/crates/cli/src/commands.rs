//! The pipeline stages behind each subcommand.

use std::path::{Path, PathBuf};

use ergi_core::estimation::{fit_qmle, fit_qmle_warm, z_statistics, FitResult};
use ergi_core::forecast_eval::{
    average_ranks, daily_squared_errors, dm_between, mspe, osr, rmspe, rolling_backtest, ForecastSeries, ModelTag,
    RankSummary,
};
use ergi_core::model_core::{floor_rv, GarchParams};
use ergi_core::realized_vol::prv_with;
use ergi_core::simulator::{simulate_observations, SimulatedData};
use ergi_core::stats;
use ergi_core::study::{run_cell, summarize, CellSummary, Truth, FORECAST_MODELS};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::io::{self, fmt_f64, Meta, RvRow};
use crate::model_file::ModelFile;

const PARAM_NAMES: [&str; 3] = ["omega_g", "gamma", "beta_g"];

pub struct Context {
    pub cfg: ExperimentConfig,
    pub meta: Meta,
}

impl Context {
    pub fn new(cfg: ExperimentConfig) -> Self {
        let meta = Meta { seed: cfg.seed, config_hash: cfg.hash() };
        Self { cfg, meta }
    }

    pub fn out(&self, name: &str) -> CliResult<PathBuf> {
        let dir = &self.cfg.out_dir;
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(dir.join(name))
    }
}

pub struct SimulateOutput {
    pub ticks_path: PathBuf,
    pub iv_path: PathBuf,
    pub data: SimulatedData,
}

pub fn simulate(ctx: &Context) -> CliResult<SimulateOutput> {
    simulate_days(ctx, ctx.cfg.simulation.n_days)
}

fn simulate_days(ctx: &Context, n_days: usize) -> CliResult<SimulateOutput> {
    let sim = ergi_core::simulator::SimConfig { n_days, ..ctx.cfg.simulation };
    let data = simulate_observations(&ctx.cfg.model, &sim)?;
    let ticks_path = ctx.out("ticks.csv")?;
    io::write_csv(&ticks_path, &io::TICK_HEADER, io::tick_rows(&data.ticks), &ctx.meta)?;
    let iv_path = ctx.out("true_iv.csv")?;
    let rows = data.days.iter().map(|d| {
        [
            d.day.to_string(),
            fmt_f64(d.true_iv),
            fmt_f64(d.b_start),
            fmt_f64(d.b_end),
            d.jump_count.to_string(),
            fmt_f64(d.lemma_residual),
        ]
    });
    let header = ["day", "true_iv", "b_start", "b_end", "jump_count", "lemma_residual"];
    io::write_csv(&iv_path, &header, rows, &ctx.meta)?;
    log::info!("simulated {} days into {}", data.days.len(), ticks_path.display());
    Ok(SimulateOutput { ticks_path, iv_path, data })
}

pub struct RvOutput {
    pub rv_path: PathBuf,
    pub returns_path: PathBuf,
    pub rows: Vec<RvRow>,
}

/// Per-day RV and open-to-close returns from a tick file. Days whose
/// estimate fails get a row with the error message and the run continues.
pub fn rv(ctx: &Context, ticks: &Path) -> CliResult<RvOutput> {
    let days = io::read_ticks(ticks)?;
    let opts = ctx.cfg.rv.options();
    let rows: Vec<RvRow> = days
        .par_iter()
        .map(|d| match prv_with(d, opts) {
            Ok(e) => RvRow {
                day_index: d.day_index,
                rv: Some(e.value),
                k_window: e.k_window,
                truncated_count: e.truncated_count,
                error: String::new(),
            },
            Err(e) => RvRow {
                day_index: d.day_index,
                rv: None,
                k_window: 0,
                truncated_count: 0,
                error: if d.is_empty() { "empty day".into() } else { e.to_string() },
            },
        })
        .collect();
    let failed = rows.iter().filter(|r| r.rv.is_none()).count();
    if failed > 0 {
        log::warn!("{failed} of {} days have no RV estimate", rows.len());
    }
    let rv_path = ctx.out("rv.csv")?;
    let out = rows.iter().map(|r| {
        [
            r.day_index.to_string(),
            r.rv.map_or(String::new(), fmt_f64),
            r.k_window.to_string(),
            r.truncated_count.to_string(),
            r.error.clone(),
        ]
    });
    io::write_csv(&rv_path, &io::RV_HEADER, out, &ctx.meta)?;
    let returns_path = ctx.out("returns.csv")?;
    let rets = days.iter().filter_map(|d| io::open_to_close(d).map(|r| [d.day_index.to_string(), fmt_f64(r)]));
    io::write_csv(&returns_path, &io::RETURNS_HEADER, rets, &ctx.meta)?;
    Ok(RvOutput { rv_path, returns_path, rows })
}

/// Days with an RV estimate, in file order.
fn usable_rv(rows: &[RvRow]) -> (Vec<i64>, Vec<f64>) {
    let skipped = rows.iter().filter(|r| r.rv.is_none()).count();
    if skipped > 0 {
        log::warn!("skipping {skipped} days without an RV estimate");
    }
    rows.iter().filter_map(|r| r.rv.map(|v| (r.day_index, v))).unzip()
}

pub struct FitOutput {
    pub model_path: PathBuf,
    pub report_path: PathBuf,
    pub model: ModelFile,
    pub report: String,
}

pub fn fit(ctx: &Context, rv_path: &Path, warm: Option<&Path>) -> CliResult<FitOutput> {
    let bytes = std::fs::read(rv_path).map_err(|e| CliError::io(rv_path, e))?;
    let (_, values) = usable_rv(&io::read_rv(rv_path)?);
    let fit = match warm {
        Some(p) => fit_qmle_warm(&values, &ctx.cfg.optimizer, &ModelFile::load(p)?.fit.theta_hat)?,
        None => fit_qmle(&values, &ctx.cfg.optimizer)?,
    };
    if !fit.converged {
        log::warn!("optimizer did not report convergence");
    }
    let model = ModelFile::new(fit, ctx.cfg.seed, &bytes, None);
    let model_path = ctx.out("model.toml")?;
    model.save(&model_path)?;
    let report = fit_report(&model.fit);
    let report_path = ctx.out("fit_report.txt")?;
    std::fs::write(&report_path, &report).map_err(|e| CliError::io(&report_path, e))?;
    Ok(FitOutput { model_path, report_path, model, report })
}

/// Estimates, standard errors and Z-tests of each parameter against zero.
pub fn fit_report(fit: &FitResult) -> String {
    let zero = GarchParams::new(0.0, 0.0, 0.0).expect("origin is stationary");
    let z = z_statistics(fit, &zero);
    let est = fit.theta_hat.to_array();
    let mut s = String::new();
    s.push_str("ERGI quasi-maximum likelihood fit\n");
    s.push_str(&format!(
        "days: {}  converged: {}  iterations: {}  quasi-likelihood: {:.6}\n",
        fit.n_days, fit.converged, fit.iterations, fit.objective
    ));
    s.push_str(&format!(
        "A-hat: {:.6}  floored RV days: {}  singular V-hat: {}\n\n",
        fit.a_hat, fit.floored, fit.singular_v
    ));
    s.push_str(&format!("{:<10}{:>12}{:>12}{:>10}{:>10}\n", "parameter", "estimate", "std.err", "Z", "p-value"));
    for i in 0..3 {
        s.push_str(&format!(
            "{:<10}{:>12.4}{:>12.4}{:>10.2}{:>10.2}\n",
            PARAM_NAMES[i], est[i], fit.std_errors[i], z[i].z, z[i].p_value
        ));
    }
    let cells: Vec<String> = (0..3).map(|i| format!("{:.2} ({:.2})", est[i], z[i].p_value)).collect();
    s.push_str(&format!("\nestimate (p-value): {}\n", cells.join("  ")));
    s
}

pub fn truth(ctx: &Context) -> CliResult<Truth> {
    let log_mgf = ctx.cfg.log_mgf()?;
    let t = Truth::new(ctx.cfg.model, log_mgf)?;
    log::info!("log E[exp D] = {log_mgf:.5}, GARCH parameters {:?}", t.theta_g.to_array());
    Ok(t)
}

pub fn mc_study(ctx: &Context) -> CliResult<Vec<CellSummary>> {
    let cfg = &ctx.cfg;
    let truth = truth(ctx)?;
    let mut summaries = Vec::new();
    let mut z_rows = Vec::new();
    let mut qq_rows = Vec::new();
    for cell in cfg.study.cells() {
        let (ok, failed) = run_cell(&truth, &cfg.simulation, &cfg.optimizer, &cfg.study, cell, cfg.seed);
        if !failed.is_empty() {
            log::warn!("cell {cell:?}: {} replications failed and are excluded", failed.len());
        }
        let summary = summarize(cell, &ok, failed.len(), &truth)?;
        log::info!("cell {cell:?}: MSE {:?}", summary.mse);
        for o in &ok {
            let mut row = vec![cell.0.to_string(), cell.1.to_string(), o.replication.to_string()];
            row.extend(o.z.iter().map(|v| fmt_f64(*v)));
            z_rows.push(row);
        }
        for (p, name) in PARAM_NAMES.iter().enumerate() {
            let mut z = ergi_core::study::usable_z(&ok, p);
            z.sort_by(f64::total_cmp);
            let k = z.len() as f64;
            for (i, v) in z.iter().enumerate() {
                let q = stats::normal_quantile((i as f64 + 0.5) / k);
                qq_rows.push(vec![cell.0.to_string(), cell.1.to_string(), name.to_string(), fmt_f64(*v), fmt_f64(q)]);
            }
        }
        summaries.push(summary);
    }
    let mse_rows = summaries.iter().map(|s| {
        vec![
            s.n_days.to_string(),
            s.obs_per_day.to_string(),
            s.replications.to_string(),
            s.failures.to_string(),
            fmt_f64(s.mse[0]),
            fmt_f64(s.mse[1]),
            fmt_f64(s.mse[2]),
            fmt_f64(s.mean_rv_error),
        ]
    });
    let header = ["n", "m", "replications", "failures", "mse_omega_g", "mse_gamma", "mse_beta_g", "rv_rel_error"];
    io::write_csv(&ctx.out("mc_mse.csv")?, &header, mse_rows, &ctx.meta)?;
    let header = ["n", "m", "replication", "z_omega_g", "z_gamma", "z_beta_g"];
    io::write_csv(&ctx.out("mc_zstats.csv")?, &header, z_rows, &ctx.meta)?;
    let header = ["n", "m", "parameter", "empirical_quantile", "normal_quantile"];
    io::write_csv(&ctx.out("mc_qq.csv")?, &header, qq_rows, &ctx.meta)?;
    let fc_rows = summaries.iter().flat_map(|s| {
        FORECAST_MODELS.iter().enumerate().map(move |(j, m)| {
            vec![
                s.n_days.to_string(),
                s.obs_per_day.to_string(),
                m.to_string(),
                fmt_f64(s.forecast_mse[j]),
                fmt_f64(s.forecast_mse[j].ln()),
            ]
        })
    });
    let header = ["n", "m", "model", "forecast_mse", "log_forecast_mse"];
    io::write_csv(&ctx.out("mc_forecast_mse.csv")?, &header, fc_rows, &ctx.meta)?;
    Ok(summaries)
}

pub struct BacktestOutput {
    pub series: Vec<ForecastSeries>,
    pub mspe_ranks: RankSummary,
    pub rmspe_ranks: RankSummary,
}

pub fn backtest(ctx: &Context, rv_path: &Path, returns_path: Option<&Path>) -> CliResult<BacktestOutput> {
    let (days, rv) = usable_rv(&io::read_rv(rv_path)?);
    let rv = floor_rv(&rv).values;
    let mut models = ctx.cfg.backtest.models.clone();
    let returns = match returns_path {
        Some(p) => {
            let by_day: std::collections::HashMap<i64, f64> = io::read_returns(p)?.into_iter().collect();
            let aligned: Option<Vec<f64>> = days.iter().map(|d| by_day.get(d).copied()).collect();
            Some(aligned.ok_or_else(|| CliError::Data(format!("{}: missing returns for some RV days", p.display())))?)
        }
        None => {
            if models.contains(&ModelTag::Ugarch) {
                log::warn!("no returns supplied; UGARCH dropped");
                models.retain(|m| *m != ModelTag::Ugarch);
            }
            None
        }
    };
    let series = rolling_backtest(&rv, returns.as_deref(), &models, &ctx.cfg.backtest_config())?;
    write_backtest(ctx, &days, &series)
}

fn write_backtest(ctx: &Context, days: &[i64], series: &[ForecastSeries]) -> CliResult<BacktestOutput> {
    let fc_rows = series.iter().flat_map(|s| {
        (0..s.len()).map(move |i| {
            vec![
                days[s.horizon_days[i]].to_string(),
                s.model_tag.to_string(),
                fmt_f64(s.forecasts[i]),
                fmt_f64(s.realized[i]),
            ]
        })
    });
    io::write_csv(&ctx.out("forecasts.csv")?, &["day", "model", "forecast", "realized"], fc_rows, &ctx.meta)?;

    let sq = daily_squared_errors(series)?;
    let realized: Vec<f64> = {
        let s = &series[0];
        (0..s.len()).filter(|&i| series.iter().all(|x| x.forecasts[i].is_finite())).map(|i| s.realized[i]).collect()
    };
    let rel: Vec<Vec<f64>> = sq.iter().zip(&realized).map(|(row, r)| row.iter().map(|v| v / (r * r)).collect()).collect();
    let mspe_ranks = average_ranks(&sq)?;
    let rmspe_ranks = average_ranks(&rel)?;

    let mut header: Vec<String> = ["model", "mspe", "rmspe", "failures"].map(String::from).to_vec();
    header.extend(series.iter().map(|s| format!("osr_vs_{}", s.model_tag)));
    header.extend(["avg_rank_mspe", "first_mspe", "avg_rank_rmspe", "first_rmspe"].map(String::from));
    let metric_rows: Vec<Vec<String>> = series
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut row = vec![
                s.model_tag.to_string(),
                mspe(s).map_or(String::new(), fmt_f64),
                rmspe(s).map_or(String::new(), fmt_f64),
                s.failures.len().to_string(),
            ];
            row.extend(series.iter().map(|c| osr(s, c).map_or(String::new(), fmt_f64)));
            row.extend([
                fmt_f64(mspe_ranks.average_rank[i]),
                mspe_ranks.first_place[i].to_string(),
                fmt_f64(rmspe_ranks.average_rank[i]),
                rmspe_ranks.first_place[i].to_string(),
            ]);
            row
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    io::write_csv(&ctx.out("metrics.csv")?, &header_refs, metric_rows, &ctx.meta)?;

    let mut dm_rows = Vec::new();
    for (i, a) in series.iter().enumerate() {
        for b in &series[i + 1..] {
            let row = match dm_between(a, b) {
                Ok(r) => vec![
                    a.model_tag.to_string(),
                    b.model_tag.to_string(),
                    fmt_f64(r.statistic),
                    fmt_f64(r.p_less),
                    fmt_f64(r.p_greater),
                    r.n_used.to_string(),
                    String::new(),
                ],
                Err(e) => {
                    let mut row = vec![a.model_tag.to_string(), b.model_tag.to_string()];
                    row.extend(std::iter::repeat_n(String::new(), 4));
                    row.push(e.to_string());
                    row
                }
            };
            dm_rows.push(row);
        }
    }
    let header = ["model", "competitor", "statistic", "p_less", "p_greater", "n_used", "error"];
    io::write_csv(&ctx.out("dm.csv")?, &header, dm_rows, &ctx.meta)?;

    let rank_rows = series.iter().enumerate().map(|(i, s)| {
        vec![
            s.model_tag.to_string(),
            fmt_f64(mspe_ranks.average_rank[i]),
            mspe_ranks.first_place[i].to_string(),
            fmt_f64(rmspe_ranks.average_rank[i]),
            rmspe_ranks.first_place[i].to_string(),
        ]
    });
    let header = ["model", "avg_rank_mspe", "first_mspe", "avg_rank_rmspe", "first_rmspe"];
    io::write_csv(&ctx.out("ranks.csv")?, &header, rank_rows, &ctx.meta)?;
    Ok(BacktestOutput { series: series.to_vec(), mspe_ranks, rmspe_ranks })
}

pub struct FullStudyOutput {
    pub fit: FitOutput,
    pub backtest: BacktestOutput,
}

/// simulate → rv → fit → backtest on one simulated series of
/// `backtest.simulated_days` days.
pub fn full_study(ctx: &Context) -> CliResult<FullStudyOutput> {
    let sim = simulate_days(ctx, ctx.cfg.backtest.simulated_days)?;
    let rv_out = rv(ctx, &sim.ticks_path)?;
    let fit_out = fit(ctx, &rv_out.rv_path, None)?;
    let bt = backtest(ctx, &rv_out.rv_path, Some(&rv_out.returns_path))?;
    Ok(FullStudyOutput { fit: fit_out, backtest: bt })
}
