use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ergi_cli::commands::{self, Context};
use ergi_cli::config::{ExperimentConfig, Overrides};
use ergi_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "ergi", version, about = "ERGI volatility modelling pipeline")]
struct Cli {
    /// TOML experiment configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// 500 replications, m up to 11700 and a 1762-day backtest series.
    #[arg(long, global = true)]
    paper_scale: bool,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate noisy ticks and the true integrated variance.
    Simulate,
    /// Jump-robust pre-averaged RV per day, plus open-to-close returns.
    Rv {
        #[arg(long)]
        ticks: PathBuf,
        #[arg(long)]
        c_tau_multiplier: Option<f64>,
    },
    /// Quasi-maximum likelihood fit on an RV series.
    Fit {
        #[arg(long)]
        rv: PathBuf,
        /// Model file whose parameters are added as a start point.
        #[arg(long)]
        warm_start: Option<PathBuf>,
    },
    /// Monte-Carlo study of the estimator and the forecasts.
    McStudy,
    /// Rolling-window forecast comparison.
    Backtest {
        #[arg(long)]
        rv: PathBuf,
        /// Daily open-to-close returns; UGARCH is skipped without them.
        #[arg(long)]
        returns: Option<PathBuf>,
    },
    /// simulate, rv, fit and backtest in one run.
    FullStudy,
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    }
    let overrides = Overrides { seed: cli.seed, out_dir: cli.out, paper_scale: cli.paper_scale };
    let mut cfg = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    if let Command::Rv { c_tau_multiplier: Some(c), .. } = &cli.command {
        cfg.rv.c_tau_multiplier = *c;
        cfg.validate()?;
    }
    let ctx = Context::new(cfg);
    match &cli.command {
        Command::Simulate => {
            let out = commands::simulate(&ctx)?;
            println!("wrote {} and {}", out.ticks_path.display(), out.iv_path.display());
        }
        Command::Rv { ticks, .. } => {
            let out = commands::rv(&ctx, ticks)?;
            let failed = out.rows.iter().filter(|r| r.rv.is_none()).count();
            println!("wrote {} ({} days, {failed} failed)", out.rv_path.display(), out.rows.len());
        }
        Command::Fit { rv, warm_start } => {
            let out = commands::fit(&ctx, rv, warm_start.as_deref())?;
            print!("{}", out.report);
            println!("wrote {}", out.model_path.display());
        }
        Command::McStudy => {
            for s in commands::mc_study(&ctx)? {
                println!(
                    "n={:<4} m={:<6} reps={:<4} failed={:<3} MSE omega_g={:.4} gamma={:.4} beta_g={:.4}",
                    s.n_days, s.obs_per_day, s.replications, s.failures, s.mse[0], s.mse[1], s.mse[2]
                );
            }
        }
        Command::Backtest { rv, returns } => {
            let out = commands::backtest(&ctx, rv, returns.as_deref())?;
            print_ranks(&out);
        }
        Command::FullStudy => {
            let out = commands::full_study(&ctx)?;
            print!("{}", out.fit.report);
            print_ranks(&out.backtest);
        }
    }
    Ok(())
}

fn print_ranks(out: &commands::BacktestOutput) {
    println!("{:<10}{:>8}{:>16}{:>16}", "model", "days", "avg rank MSPE", "avg rank RMSPE");
    for (i, s) in out.series.iter().enumerate() {
        println!(
            "{:<10}{:>8}{:>16.2}{:>16.2}",
            s.model_tag.to_string(),
            s.len(),
            out.mspe_ranks.average_rank[i],
            out.rmspe_ranks.average_rank[i]
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
