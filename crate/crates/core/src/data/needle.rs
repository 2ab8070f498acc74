//! Synthetic needle-in-passage task: the question is a token sequence that
//! occurs exactly once in a random passage, and the answer is where.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{QAExample, Span};
use crate::error::{Error, Result};

/// Attempts at redrawing a passage before giving up on uniqueness.
const MAX_REDRAWS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeedleConfig {
    pub num_examples: usize,
    /// Inclusive passage length range.
    pub passage_len: (usize, usize),
    /// Inclusive needle length range.
    pub needle_len: (usize, usize),
    /// Number of distinct content tokens.
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for NeedleConfig {
    fn default() -> Self {
        Self {
            num_examples: 2000,
            passage_len: (20, 40),
            needle_len: (1, 5),
            vocab_size: 50,
            seed: 0,
        }
    }
}

impl NeedleConfig {
    pub fn validate(&self) -> Result<()> {
        let (pl, ph) = self.passage_len;
        let (nl, nh) = self.needle_len;
        if self.vocab_size <= 2 {
            return Err(Error::invalid(format!(
                "needle vocabulary must exceed 2 tokens, got {}",
                self.vocab_size
            )));
        }
        if pl == 0 || nl == 0 || pl > ph || nl > nh {
            return Err(Error::invalid(format!(
                "empty length range: passage {pl}..={ph}, needle {nl}..={nh}"
            )));
        }
        if nh > pl {
            return Err(Error::invalid(format!(
                "needles up to {nh} tokens do not fit passages of {pl}"
            )));
        }
        Ok(())
    }
}

pub fn token_name(id: usize) -> String {
    format!("w{id}")
}

fn occurrences(hay: &[usize], needle: &[usize]) -> usize {
    hay.windows(needle.len()).filter(|w| *w == needle).count()
}

pub fn generate_needle_task(cfg: &NeedleConfig) -> Result<Vec<QAExample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.num_examples);
    for i in 0..cfg.num_examples {
        let n = rng.gen_range(cfg.passage_len.0..=cfg.passage_len.1);
        let len = rng.gen_range(cfg.needle_len.0..=cfg.needle_len.1);
        let needle: Vec<usize> = (0..len).map(|_| rng.gen_range(0..cfg.vocab_size)).collect();
        let start = rng.gen_range(0..=n - len);
        let mut passage = vec![0; n];
        let mut placed = false;
        for _ in 0..MAX_REDRAWS {
            for t in passage.iter_mut() {
                *t = rng.gen_range(0..cfg.vocab_size);
            }
            passage[start..start + len].copy_from_slice(&needle);
            if occurrences(&passage, &needle) == 1 {
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::invalid(format!(
                "could not place a unique needle of {len} tokens in {n} positions \
                 over {} symbols",
                cfg.vocab_size
            )));
        }
        let words = |ids: &[usize]| ids.iter().map(|&t| token_name(t)).collect::<Vec<_>>();
        let passage = words(&passage);
        let span = Span::new(start, start + len - 1);
        out.push(QAExample {
            id: format!("needle-{}-{i}", cfg.seed),
            texts: vec![passage[span.start..=span.end].join(" ")],
            question: words(&needle),
            passage,
            spans: vec![span],
            unaligned_texts: Vec::new(),
            source: None,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infeasible_ranges_are_rejected() {
        let bad = [
            NeedleConfig {
                vocab_size: 2,
                ..NeedleConfig::default()
            },
            NeedleConfig {
                needle_len: (3, 30),
                ..NeedleConfig::default()
            },
            NeedleConfig {
                passage_len: (10, 5),
                ..NeedleConfig::default()
            },
        ];
        for cfg in bad {
            assert!(generate_needle_task(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn single_token_needles_are_unique() {
        let cfg = NeedleConfig {
            num_examples: 50,
            needle_len: (1, 1),
            vocab_size: 5,
            passage_len: (4, 4),
            seed: 3,
        };
        for ex in generate_needle_task(&cfg).unwrap() {
            let q = &ex.question[0];
            assert_eq!(ex.passage.iter().filter(|t| *t == q).count(), 1);
        }
    }
}
