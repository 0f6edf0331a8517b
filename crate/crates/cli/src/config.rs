//! Experiment configuration, read from TOML. Every field has a default and
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use ergi_core::estimation::OptimizerConfig;
use ergi_core::forecast_eval::{BacktestConfig, ModelTag};
use ergi_core::model_core::{self, StructuralParams};
use ergi_core::realized_vol::{PrvOptions, C_TAU_SIMULATION};
use ergi_core::simulator::{estimate_log_mgf_d, SimConfig, MIN_MGF_REPLICATIONS, MIN_MGF_STEPS};
use ergi_core::study::StudyConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MgfMethod {
    /// Monte-Carlo average of `exp(D)`.
    MonteCarlo,
    /// Numerical solution of the Gaussian-chaos expectation.
    Riccati,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MgfConfig {
    pub method: MgfMethod,
    pub replications: usize,
    pub steps: usize,
}

impl Default for MgfConfig {
    fn default() -> Self {
        Self { method: MgfMethod::MonteCarlo, replications: 100_000, steps: MIN_MGF_STEPS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RvConfig {
    pub c_tau_multiplier: f64,
    pub truncate: bool,
    pub noise_correction: bool,
}

impl Default for RvConfig {
    fn default() -> Self {
        Self { c_tau_multiplier: C_TAU_SIMULATION, truncate: true, noise_correction: true }
    }
}

impl RvConfig {
    pub fn options(&self) -> PrvOptions {
        PrvOptions {
            c_tau_multiplier: self.c_tau_multiplier,
            truncate: self.truncate,
            noise_correction: self.noise_correction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestSection {
    pub window: usize,
    pub refit_every: usize,
    pub models: Vec<ModelTag>,
    /// Length of the simulated series used by `full-study`.
    pub simulated_days: usize,
}

impl Default for BacktestSection {
    fn default() -> Self {
        Self { window: 500, refit_every: 1, models: ModelTag::ALL.to_vec(), simulated_days: 600 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Drives every random stream; copied into the simulation and
    /// optimizer sections.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub model: StructuralParams,
    pub mgf: MgfConfig,
    pub simulation: SimConfig,
    pub rv: RvConfig,
    pub optimizer: OptimizerConfig,
    pub study: StudyConfig,
    pub backtest: BacktestSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            model: StructuralParams::reference(),
            mgf: MgfConfig::default(),
            simulation: SimConfig::default(),
            rv: RvConfig::default(),
            optimizer: OptimizerConfig::default(),
            study: StudyConfig::default(),
            backtest: BacktestSection::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub paper_scale: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        if overrides.paper_scale {
            cfg.apply_paper_scale();
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(o) = &overrides.out_dir {
            cfg.out_dir = o.clone();
        }
        cfg.simulation.seed = cfg.seed;
        cfg.optimizer.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    /// 500 replications, `m` up to 11700, a 1762-day backtest series and
    /// 10⁶ Monte-Carlo draws for the MGF.
    pub fn apply_paper_scale(&mut self) {
        self.study = StudyConfig::paper_scale();
        self.mgf.replications = 1_000_000;
        self.backtest.simulated_days = 1762;
    }

    pub fn validate(&self) -> CliResult<()> {
        let cfg_err = |e: ergi_core::Error| CliError::Config(e.to_string());
        self.simulation.validate().map_err(cfg_err)?;
        self.optimizer.validate().map_err(cfg_err)?;
        self.study.validate().map_err(cfg_err)?;
        if !(self.rv.c_tau_multiplier > 0.0) {
            return Err(CliError::Config("rv.c_tau_multiplier must be positive".into()));
        }
        if self.mgf.method == MgfMethod::MonteCarlo
            && (self.mgf.replications < MIN_MGF_REPLICATIONS || self.mgf.steps < MIN_MGF_STEPS)
        {
            return Err(CliError::Config(format!(
                "mgf.replications and mgf.steps must be at least {MIN_MGF_REPLICATIONS} and {MIN_MGF_STEPS}"
            )));
        }
        let b = &self.backtest;
        if b.window == 0 || b.refit_every == 0 || b.models.is_empty() {
            return Err(CliError::Config("backtest window, refit_every and models must be non-empty".into()));
        }
        if b.simulated_days <= b.window {
            return Err(CliError::Config("backtest.simulated_days must exceed backtest.window".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serialisable")
    }

    /// SHA-256 of the resolved configuration, leaving out where the
    /// outputs go.
    pub fn hash(&self) -> String {
        let c = Self { out_dir: PathBuf::new(), ..self.clone() };
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn backtest_config(&self) -> BacktestConfig {
        BacktestConfig { window: self.backtest.window, refit_every: self.backtest.refit_every, optimizer: self.optimizer }
    }

    /// `log E[exp(D)]` by the configured method.
    pub fn log_mgf(&self) -> CliResult<f64> {
        Ok(match self.mgf.method {
            MgfMethod::Riccati => model_core::log_mgf_d_riccati(&self.model)?,
            MgfMethod::MonteCarlo => {
                estimate_log_mgf_d(&self.model, self.mgf.replications, self.mgf.steps, self.seed)?.log_mgf
            }
        })
    }
}
