use crate::error::{Error, Result};
use crate::nn::ArchKind;
use crate::optim::OptimizerKind;
use crate::precision::ScalarKind;
use crate::Formulation;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// How network outputs are turned into a finite element function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioning {
    /// Outputs are finest-level nodal values.
    None,
    /// Frame coefficients, loss through `HᵀA_yH`.
    FrameUnstable,
    /// Frame coefficients, loss through `DᵀC_yD`.
    FrameStable,
}

impl std::fmt::Display for Preconditioning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preconditioning::None => "none",
            Preconditioning::FrameUnstable => "frame_unstable",
            Preconditioning::FrameStable => "frame_stable",
        })
    }
}

impl std::str::FromStr for Preconditioning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Preconditioning::None),
            "frame_unstable" => Ok(Preconditioning::FrameUnstable),
            "frame_stable" => Ok(Preconditioning::FrameStable),
            _ => Err(Error::Config(format!("unknown preconditioning `{s}`"))),
        }
    }
}

/// Optional overrides of the precision-dependent optimizer defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyper {
    pub eta0: Option<f64>,
    pub eta_min: Option<f64>,
    pub t_max: Option<usize>,
    pub adam_eps: Option<f64>,
    pub lbfgs_tolerance: Option<f64>,
    pub ngd_tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub formulation: Formulation,
    pub preconditioning: Preconditioning,
    pub architecture: ArchKind,
    pub levels: usize,
    pub optimizer: OptimizerKind,
    pub precision: ScalarKind,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_k_train")]
    pub k_train: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub hyper: Hyper,
}

fn default_name() -> String {
    "run".into()
}
fn default_epochs() -> usize {
    6000
}
fn default_k_train() -> usize {
    512
}
fn default_n_test() -> usize {
    128
}
fn default_record_every() -> usize {
    10
}

impl ExperimentConfig {
    /// Paper-scale defaults: J = 10, 6000 epochs, K = 512, 128 test samples.
    pub fn paper(optimizer: OptimizerKind, preconditioning: Preconditioning, precision: ScalarKind) -> Self {
        ExperimentConfig {
            name: format!("{optimizer}-{preconditioning}-{precision}"),
            formulation: Formulation::Fosls,
            preconditioning,
            architecture: ArchKind::Full,
            levels: 10,
            optimizer,
            precision,
            epochs: default_epochs(),
            k_train: default_k_train(),
            n_test: default_n_test(),
            seed: 0,
            record_every: default_record_every(),
            output_dir: None,
            hyper: Hyper::default(),
        }
    }

    /// Reduced desk preset: J = 6, 1500 epochs, 64 training and 32 test
    /// samples, cosine period shortened in proportion.
    pub fn desk(optimizer: OptimizerKind, preconditioning: Preconditioning, precision: ScalarKind) -> Self {
        ExperimentConfig {
            levels: 6,
            epochs: 1500,
            k_train: 64,
            n_test: 32,
            hyper: Hyper { t_max: Some(1250), ..Hyper::default() },
            ..Self::paper(optimizer, preconditioning, precision)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = &cfg.output_dir {
            if dir.is_relative() {
                if let Some(parent) = path.parent() {
                    cfg.output_dir = Some(parent.join(dir));
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=crate::fem::MAX_LEVEL).contains(&self.levels) {
            return Err(Error::Config(format!("levels must lie in 1..={}, got {}", crate::fem::MAX_LEVEL, self.levels)));
        }
        if self.k_train == 0 || self.n_test == 0 {
            return Err(Error::Config("k_train and n_test must be positive".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be positive".into()));
        }
        if self.preconditioning == Preconditioning::None && self.architecture != ArchKind::Full {
            return Err(Error::Config("without preconditioning only the full architecture is defined".into()));
        }
        if let (Some(a), Some(b)) = (self.hyper.eta0, self.hyper.eta_min) {
            if b > a {
                return Err(Error::Config("eta_min exceeds eta0".into()));
            }
        }
        Ok(())
    }
}
