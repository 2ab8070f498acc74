use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the retained cells of a sampled matrix are normalised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMode {
    /// One softmax over all retained cells.
    #[default]
    JointFlat,
    /// A softmax within each sampled row.
    RowWise,
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint-flat" => Ok(Self::JointFlat),
            "row-wise" => Ok(Self::RowWise),
            _ => Err(Error::Config(format!(
                "unknown norm mode `{s}` (joint-flat, row-wise)"
            ))),
        }
    }
}

/// Which cells of the conditional matrix the loss sees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixLoss {
    /// A `k×k` slice around the gold cell.
    #[default]
    Sampled,
    /// Every cell; refused above `max_sequence` positions.
    Full,
}

impl std::str::FromStr for MatrixLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(Self::Sampled),
            "full" => Ok(Self::Full),
            _ => Err(Error::Config(format!("unknown matrix loss `{s}` (sampled, full)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub sample_k: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub norm_mode: NormMode,
    pub matrix: MatrixLoss,
    /// Use one column set (sampled from the gold row) for every sampled row.
    pub shared_columns: bool,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    /// Longest passage the full matrix is built for.
    pub max_sequence: usize,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sample_k: 20,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 3,
            adam: AdamConfig::default(),
            norm_mode: NormMode::JointFlat,
            matrix: MatrixLoss::Sampled,
            shared_columns: false,
            seed: 0,
            max_sequence: 512,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sample_k == 0 {
            return bad("sample_k must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 || self.max_sequence == 0 {
            return bad("batch size and sequence cap must be positive".into());
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad(format!("invalid Adam settings {a:?}"));
        }
        Ok(())
    }
}
