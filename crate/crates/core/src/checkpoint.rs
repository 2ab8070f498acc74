//! Model checkpoints: a JSON header followed by a flat block of
//! little-endian `f64` values.
//!
//! ```text
//! b"MAPSPAN1" | u64 LE header length | header JSON | values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParameterSet, Tensor};
use crate::encoder::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::trainer::TrainConfig;

const MAGIC: &[u8; 8] = b"MAPSPAN1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Index of the first value in the float block.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub seed: u64,
    pub vocab: Vocabulary,
    pub params: Vec<ParamEntry>,
}

/// A trained model with everything needed to run it on raw tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Vocabulary,
    pub train: Option<TrainConfig>,
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let mut params = Vec::new();
        let mut offset = 0;
        for (name, t) in self.model.params.iter() {
            params.push(ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
        }
        let header = Header {
            model: self.model.config.clone(),
            train: self.train.clone(),
            seed: self.model.config.encoder.seed,
            vocab: self.vocab.clone(),
            params,
        };
        let json = serde_json::to_vec(&header)?;
        out.write_all(MAGIC)?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        for (_, t) in self.model.params.iter() {
            for v in t.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input
            .read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("truncated file".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let mut len = [0u8; 8];
        input
            .read_exact(&mut len)
            .map_err(|_| Error::Checkpoint("truncated header length".into()))?;
        let len = usize::try_from(u64::from_le_bytes(len))
            .map_err(|_| Error::Checkpoint("header length overflows".into()))?;
        let mut json = vec![0u8; len];
        input
            .read_exact(&mut json)
            .map_err(|_| Error::Checkpoint("truncated header".into()))?;
        let mut header: Header = serde_json::from_slice(&json)
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        header.vocab.reindex();
        header.model.validate()?;

        let mut block = Vec::new();
        input.read_to_end(&mut block)?;
        if block.len() % 8 != 0 {
            return Err(Error::Checkpoint("value block is not a whole number of f64s".into()));
        }
        let values: Vec<f64> = block
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();

        let mut params = ParameterSet::new();
        let mut expected = 0;
        for entry in &header.params {
            let size: usize = entry.shape.iter().product();
            if entry.offset != expected || entry.offset + size > values.len() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has a bad offset {}",
                    entry.name, entry.offset
                )));
            }
            let data = values[entry.offset..entry.offset + size].to_vec();
            params.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?)?;
            expected += size;
        }
        if expected != values.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing values after the last parameter",
                values.len() - expected
            )));
        }
        if header.seed != header.model.encoder.seed {
            return Err(Error::Checkpoint("seed disagrees with the model config".into()));
        }
        Ok(Self {
            model: Model {
                config: header.model,
                params,
            },
            vocab: header.vocab,
            train: header.train,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::model::{Directions, HeadKind};

    fn checkpoint() -> Checkpoint {
        let cfg = ModelConfig {
            directions: Directions::Both,
            ..ModelConfig::new(
                EncoderConfig {
                    hidden: 8,
                    embed: 4,
                    vocab_size: 6,
                    seed: 3,
                    ..EncoderConfig::default()
                },
                HeadKind::Map,
            )
        };
        Checkpoint {
            model: Model::init(cfg).unwrap(),
            vocab: Vocabulary::from_tokens(["x", "y", "z"]),
            train: Some(TrainConfig::default()),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = checkpoint();
        let mut bytes = Vec::new();
        ck.write(&mut bytes).unwrap();
        let back = Checkpoint::read(bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.vocab.id("y"), 4);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let ck = checkpoint();
        let mut bytes = Vec::new();
        ck.write(&mut bytes).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::read(bad.as_slice()), Err(Error::Checkpoint(_))));

        let short = &bytes[..bytes.len() - 8];
        assert!(matches!(Checkpoint::read(short), Err(Error::Checkpoint(_))));

        let mut long = bytes.clone();
        long.extend_from_slice(&1.0f64.to_le_bytes());
        assert!(matches!(Checkpoint::read(long.as_slice()), Err(Error::Checkpoint(_))));
    }
}
