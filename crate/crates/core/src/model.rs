//! Encoder plus one head family, with the parameters they share.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParameterSet;
use crate::encoder::{self, EncoderConfig, INIT_SCALE};
use crate::error::{Error, Result};
use crate::heads::{Direction, FirstPosition, IndHead, MapHead, VcpHead};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    Ind,
    Vcp,
    Map,
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ind" => Ok(Self::Ind),
            "vcp" => Ok(Self::Vcp),
            "map" => Ok(Self::Map),
            _ => Err(Error::Config(format!("unknown head `{s}` (ind, vcp, map)"))),
        }
    }
}

/// Which conditioning orders a matrix head carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Directions {
    #[default]
    Forward,
    Backward,
    Both,
}

impl Directions {
    pub fn list(self) -> &'static [Direction] {
        match self {
            Directions::Forward => &[Direction::Forward],
            Directions::Backward => &[Direction::Backward],
            Directions::Both => &[Direction::Forward, Direction::Backward],
        }
    }

    pub fn contains(self, d: Direction) -> bool {
        self.list().contains(&d)
    }
}

impl std::str::FromStr for Directions {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Self::Forward),
            "backward" => Ok(Self::Backward),
            "both" => Ok(Self::Both),
            _ => Err(Error::Config(format!(
                "unknown directions `{s}` (forward, backward, both)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head: HeadKind,
    /// Only meaningful for the matrix head.
    #[serde(default)]
    pub directions: Directions,
    #[serde(default)]
    pub first: FirstPosition,
    /// Attention width `l`; defaults to `d`.
    #[serde(default)]
    pub attention_width: Option<usize>,
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig, head: HeadKind) -> Self {
        Self {
            encoder,
            head,
            directions: Directions::Forward,
            first: FirstPosition::Linear,
            attention_width: None,
        }
    }

    pub fn d(&self) -> usize {
        self.encoder.hidden
    }

    pub fn l(&self) -> usize {
        self.attention_width.unwrap_or(self.encoder.hidden)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.l() == 0 {
            return Err(Error::Config("attention width must be positive".into()));
        }
        if self.head != HeadKind::Map && self.directions != Directions::Forward {
            return Err(Error::Config(format!(
                "{:?} head has no backward direction",
                self.head
            )));
        }
        Ok(())
    }

    pub fn ind(&self) -> IndHead {
        IndHead { d: self.d() }
    }

    pub fn vcp(&self) -> VcpHead {
        VcpHead {
            d: self.d(),
            l: self.l(),
        }
    }

    pub fn map(&self, direction: Direction) -> MapHead {
        MapHead {
            direction,
            first: self.first,
            d: self.d(),
            l: self.l(),
        }
    }

    /// Matrix heads carried by this configuration, forward first.
    pub fn map_heads(&self) -> Vec<MapHead> {
        if self.head != HeadKind::Map {
            return Vec::new();
        }
        self.directions.list().iter().map(|&d| self.map(d)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterSet,
}

impl Model {
    /// Fresh parameters from `uniform(-0.08, 0.08)`, seeded by
    /// `config.encoder.seed`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.encoder.seed;
        let mut params = encoder::init_encoder(&config.encoder, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        match config.head {
            HeadKind::Ind => config.ind().init(&mut params, INIT_SCALE, &mut rng)?,
            HeadKind::Vcp => config.vcp().init(&mut params, INIT_SCALE, &mut rng)?,
            HeadKind::Map => {
                // Each direction draws from its own stream so a forward-only
                // model matches the forward half of a two-direction one.
                for head in config.map_heads() {
                    let stream = match head.direction {
                        Direction::Forward => 0,
                        Direction::Backward => 1,
                    };
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
                    rng.set_stream(stream + 1);
                    head.init(&mut params, INIT_SCALE, &mut rng)?;
                }
            }
        }
        Ok(Self { config, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(head: HeadKind, directions: Directions) -> ModelConfig {
        ModelConfig {
            directions,
            ..ModelConfig::new(
                EncoderConfig {
                    hidden: 8,
                    embed: 6,
                    vocab_size: 20,
                    ..EncoderConfig::default()
                },
                head,
            )
        }
    }

    #[test]
    fn both_directions_extend_the_forward_model() {
        let f = Model::init(cfg(HeadKind::Map, Directions::Forward)).unwrap();
        let b = Model::init(cfg(HeadKind::Map, Directions::Both)).unwrap();
        for (name, t) in f.params.iter() {
            assert_eq!(b.params.get(name), Some(t), "{name}");
        }
        assert!(b.params.contains("map.bwd.V"));
        assert_ne!(b.params.get("map.bwd.V"), b.params.get("map.fwd.V"));
    }

    #[test]
    fn non_matrix_heads_reject_backward() {
        assert!(Model::init(cfg(HeadKind::Ind, Directions::Both)).is_err());
        assert!(Model::init(cfg(HeadKind::Vcp, Directions::Forward)).is_ok());
    }
}
