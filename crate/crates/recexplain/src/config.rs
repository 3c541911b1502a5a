//! Declarative pipeline configuration.
//!
//! One TOML file drives the whole run: dataset location and split protocol,
//! black-box choice, model hyperparameters, explanation parameters, and the
//! sweep grids. `load_config` parses and validates; every invalid field is a
//! `Config` error naming the field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::causal::FitConfig;
use crate::data::InputFormat;
use crate::embedding::BprConfig;
use crate::error::{Error, Result};
use crate::evaluation::MiningThresholds;
use crate::perturbation::VaeConfig;
use crate::recommender::FpmcConfig;

/// Where the split and the training data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(flatten)]
    pub format: InputFormat,
    /// Users below this interaction count are dropped (1 = keep everyone).
    pub min_user_interactions: usize,
    /// Items below this interaction count are dropped (1 = keep everything).
    pub min_item_interactions: usize,
    /// Interactions held out per user: the last `test_len` of the timeline.
    pub test_len: usize,
    /// Input history length; the target is the single interaction after it.
    pub n: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            path: PathBuf::from("data/interactions.tsv"),
            format: InputFormat::default(),
            min_user_interactions: 1,
            min_item_interactions: 1,
            test_len: 6,
            n: 5,
        }
    }
}

/// Which recommender to explain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlackBoxKind {
    Fpmc,
    Markov,
    Popularity,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlackBoxConfig {
    pub kind: BlackBoxKind,
    /// Lookup table path; required when kind = "external".
    pub external_path: Option<PathBuf>,
}

impl Default for BlackBoxConfig {
    fn default() -> Self {
        BlackBoxConfig {
            kind: BlackBoxKind::Fpmc,
            external_path: None,
        }
    }
}

/// Parameters of the explanation stage itself (perturb → fit → select).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplanationConfig {
    /// Number of perturbed histories per user.
    pub m: usize,
    /// Scale on the latent standard deviation when sampling perturbations.
    pub temperature: f64,
    /// Candidate causal dependencies considered before intersecting with the
    /// user's real history.
    pub k: usize,
    /// Cap on rejected perturbation draws; defaults to 20·m when absent.
    pub max_attempts: Option<usize>,
}

impl Default for ExplanationConfig {
    fn default() -> Self {
        ExplanationConfig {
            m: 500,
            temperature: 1.0,
            k: 1,
            max_attempts: None,
        }
    }
}

/// Grids for the two parameter studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub gamma_values: Vec<f64>,
    pub m_values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            gamma_values: vec![0.1, 0.3, 0.5, 0.7, 0.9, 1.0],
            m_values: vec![1.0, 50.0, 250.0, 500.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads for per-user stages; 0 = use all cores.
    pub threads: usize,
    pub dataset: DatasetConfig,
    pub blackbox: BlackBoxConfig,
    pub embedding: BprConfig,
    pub fpmc: FpmcConfig,
    pub vae: VaeConfig,
    pub fit: FitConfig,
    pub explanation: ExplanationConfig,
    pub association: MiningThresholds,
    pub sweep: SweepConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            out_dir: PathBuf::from("runs/default"),
            threads: 0,
            dataset: DatasetConfig::default(),
            blackbox: BlackBoxConfig::default(),
            embedding: BprConfig::default(),
            fpmc: FpmcConfig::default(),
            vae: VaeConfig::default(),
            fit: FitConfig::default(),
            explanation: ExplanationConfig::default(),
            association: MiningThresholds::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.n == 0 {
            return Err(Error::Config("dataset.n must be at least 1".into()));
        }
        if d.test_len != d.n + 1 {
            return Err(Error::Config(format!(
                "dataset.test_len must equal n + 1 (got test_len={}, n={})",
                d.test_len, d.n
            )));
        }
        if d.min_user_interactions == 0 || d.min_item_interactions == 0 {
            return Err(Error::Config(
                "activity thresholds must be at least 1 (1 = no filtering)".into(),
            ));
        }
        if self.blackbox.kind == BlackBoxKind::External && self.blackbox.external_path.is_none() {
            return Err(Error::Config(
                "blackbox.external_path is required when blackbox.kind = \"external\"".into(),
            ));
        }
        let e = &self.explanation;
        if e.m == 0 {
            return Err(Error::Config("explanation.m must be at least 1".into()));
        }
        if !e.temperature.is_finite() || e.temperature < 0.0 {
            return Err(Error::Config(format!(
                "explanation.temperature must be a finite non-negative number, got {}",
                e.temperature
            )));
        }
        if e.k == 0 {
            return Err(Error::Config("explanation.k must be at least 1".into()));
        }
        if !(self.fit.gamma > 0.0 && self.fit.gamma <= 1.0) {
            return Err(Error::Config(format!(
                "fit.gamma must lie in (0, 1], got {}",
                self.fit.gamma
            )));
        }
        for (name, v) in [
            ("association.min_support", self.association.min_support),
            ("association.min_confidence", self.association.min_confidence),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0,1], got {v}")));
            }
        }
        if self.association.min_lift < 0.0 {
            return Err(Error::Config(format!(
                "association.min_lift must be non-negative, got {}",
                self.association.min_lift
            )));
        }
        Ok(())
    }

    /// Effective perturbation attempt budget.
    pub fn max_attempts(&self) -> usize {
        self.explanation
            .max_attempts
            .unwrap_or(20 * self.explanation.m)
    }
}

/// Read and validate a TOML pipeline config.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = crate::error::read_file(path)?;
    let config: PipelineConfig = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}
