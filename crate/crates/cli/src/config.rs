//! Run configurations. Each command reads an optional JSON file (a bare
//! config or a previously written manifest), then applies its flags on top.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mapspan::data::NeedleConfig;
use mapspan::encoder::{EncoderConfig, EncoderKind};
use mapspan::heads::FirstPosition;
use mapspan::inference::{SearchConfig, Strategy};
use mapspan::model::{Directions, HeadKind, ModelConfig};
use mapspan::trainer::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// What every output directory records about the run that produced it.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest<T> {
    pub command: String,
    pub version: String,
    pub config: T,
}

impl<T: Serialize> Manifest<T> {
    pub fn new(command: &str, config: T) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
        }
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        let path = out.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))
    }
}

/// Reads `path` as `T`, accepting a manifest of the same command too.
/// Unknown keys are errors.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>, command: &str) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let is_manifest = value.get("command").is_some() && value.get("config").is_some();
    if is_manifest {
        let m: Manifest<T> = serde_json::from_value(value).with_context(|| format!("invalid manifest {}", path.display()))?;
        if m.command != command {
            bail!("{} is a `{}` manifest, not `{command}`", path.display(), m.command);
        }
        Ok(m.config)
    } else {
        serde_json::from_value(value).with_context(|| format!("invalid {command} config {}", path.display()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub num: usize,
    pub dev_num: usize,
    /// Train split seed; dev uses `seed + 1`.
    pub seed: u64,
    pub passage_min: usize,
    pub passage_max: usize,
    pub needle_min: usize,
    pub needle_max: usize,
    pub vocab: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        let n = NeedleConfig::default();
        Self {
            num: n.num_examples,
            dev_num: 500,
            seed: n.seed,
            passage_min: n.passage_len.0,
            passage_max: n.passage_len.1,
            needle_min: n.needle_len.0,
            needle_max: n.needle_len.1,
            vocab: n.vocab_size,
        }
    }
}

impl GenConfig {
    pub fn split(&self, num: usize, seed: u64) -> NeedleConfig {
        NeedleConfig {
            num_examples: num,
            passage_len: (self.passage_min, self.passage_max),
            needle_len: (self.needle_min, self.needle_max),
            vocab_size: self.vocab,
            seed,
        }
    }
}

/// Encoder and head shape, without the data-dependent sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub head: HeadKind,
    pub directions: Directions,
    pub first: FirstPosition,
    pub encoder: EncoderKind,
    pub hidden: usize,
    pub embed: usize,
    pub match_feature: bool,
    pub attention_width: Option<usize>,
    /// Longest packed sequence; derived from the data when absent.
    pub max_len: Option<usize>,
    /// Parameter initialisation seed.
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let enc = mapspan::experiments::reference_encoder();
        Self {
            head: HeadKind::Map,
            directions: Directions::Forward,
            first: FirstPosition::Linear,
            encoder: enc.kind,
            hidden: enc.hidden,
            embed: enc.embed,
            match_feature: enc.match_feature,
            attention_width: None,
            max_len: None,
            seed: enc.seed,
        }
    }
}

impl ModelSpec {
    pub fn encoder_config(&self, vocab_size: usize, data_max_len: usize) -> EncoderConfig {
        EncoderConfig {
            hidden: self.hidden,
            embed: self.embed,
            kind: self.encoder,
            vocab_size,
            max_len: self.max_len.unwrap_or(data_max_len),
            seed: self.seed,
            match_feature: self.match_feature,
        }
    }

    pub fn model_config(&self, vocab_size: usize, data_max_len: usize) -> ModelConfig {
        ModelConfig {
            directions: self.directions,
            first: self.first,
            attention_width: self.attention_width,
            ..ModelConfig::new(self.encoder_config(vocab_size, data_max_len), self.head)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub train_file: PathBuf,
    /// Scored after every epoch when present.
    pub dev_file: Option<PathBuf>,
    pub model: ModelSpec,
    pub training: TrainConfig,
    /// Dev scoring strategy; the model's natural one when absent.
    pub strategy: Option<Strategy>,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            train_file: PathBuf::new(),
            dev_file: None,
            model: ModelSpec::default(),
            training: mapspan::experiments::reference_training(),
            strategy: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub strategy: Option<Strategy>,
    pub search: SearchConfig,
    /// Answer lengths `1..=bins` get their own bucket.
    pub bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::new(),
            data: PathBuf::new(),
            strategy: None,
            search: SearchConfig::default(),
            bins: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BenchKind {
    Cost,
    KSweep,
    Convergence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostBench {
    pub ns: Vec<usize>,
    pub k: usize,
    pub d: usize,
    pub repeats: usize,
    /// Full matrices above this many positions are skipped.
    pub max_full: usize,
}

impl Default for CostBench {
    fn default() -> Self {
        Self {
            ns: vec![64, 128, 256, 512],
            k: 20,
            d: 32,
            repeats: 5,
            max_full: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceBench {
    pub full_steps: usize,
    pub eval_every: usize,
    /// Relative slack on the full run's final loss.
    pub tolerance: f64,
    /// Dev examples the loss is measured on.
    pub probe_examples: usize,
}

impl Default for ConvergenceBench {
    fn default() -> Self {
        Self {
            full_steps: 200,
            eval_every: 20,
            tolerance: 0.1,
            probe_examples: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub benches: Vec<BenchKind>,
    pub seed: u64,
    pub cost: CostBench,
    pub ks: Vec<usize>,
    /// Needle data for the k sweep and convergence runs.
    pub task: GenConfig,
    pub model: ModelSpec,
    pub training: TrainConfig,
    pub convergence: ConvergenceBench,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            benches: vec![BenchKind::Cost, BenchKind::KSweep, BenchKind::Convergence],
            seed: 0,
            cost: CostBench::default(),
            ks: vec![5, 10, 20, 30],
            task: GenConfig::default(),
            model: ModelSpec::default(),
            training: mapspan::experiments::reference_training(),
            convergence: ConvergenceBench::default(),
        }
    }
}

pub fn require_path(p: &Path, what: &str) -> Result<()> {
    if p.as_os_str().is_empty() {
        bail!("`{what}` is required (flag or config file)");
    }
    Ok(())
}
