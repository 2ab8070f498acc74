use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParameterSet, Tensor};
use crate::encoder::EncoderOutput;
use crate::error::{Error, Result};
use crate::heads::{guard_full_matrix, map_first, map_full_matrix, Direction, FirstPosition, MapHead};
use crate::trainer::{build_sampled_matrix, TrainConfig};

/// Full versus sampled construction of the conditional matrix at one `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub n: usize,
    pub k: usize,
    pub full_cells: usize,
    pub sampled_cells: usize,
    /// Median over repeats; `None` when the full matrix was refused.
    pub full_ms: Option<f64>,
    pub sampled_ms: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let mid = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[mid]
    } else {
        (xs[mid - 1] + xs[mid]) / 2.0
    }
}

fn time_ms<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let out = f()?;
    Ok((out, t.elapsed().as_secs_f64() * 1e3))
}

/// Builds the full `n×n` matrix and a sampled `k×k` slice from the same
/// random `H` and head parameters, `repeats` times each. Full construction
/// above `max_full` positions is skipped.
pub fn matrix_cost_bench(
    ns: &[usize],
    k: usize,
    d: usize,
    repeats: usize,
    max_full: usize,
    seed: u64,
) -> Result<Vec<CostRow>> {
    if repeats == 0 || d == 0 {
        return Err(Error::invalid("bench needs at least one repeat and d ≥ 1"));
    }
    let head = MapHead {
        direction: Direction::Forward,
        first: FirstPosition::Linear,
        d,
        l: d,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParameterSet::new();
    head.init(&mut params, 0.5, &mut rng)?;
    let cfg = TrainConfig {
        sample_k: k,
        ..TrainConfig::default()
    };

    let mut rows = Vec::new();
    for &n in ns {
        let h = Tensor::matrix(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let h_q = Tensor::matrix(1, d, (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let enc = EncoderOutput::new(h, h_q);
        let s = rng.gen_range(0..n);
        let e = rng.gen_range(s..n);

        let mut sampled_times = Vec::with_capacity(repeats);
        let mut sampled_cells = 0;
        for _ in 0..repeats {
            let (sm, ms) = time_ms(|| {
                let p_first = map_first(&enc, &head, &params)?;
                build_sampled_matrix(&enc, &head, &params, &p_first, s, e, &cfg)
            })?;
            sampled_cells = sm.num_cells();
            sampled_times.push(ms);
        }

        let full_ms = if guard_full_matrix(n, max_full).is_ok() {
            let mut times = Vec::with_capacity(repeats);
            for _ in 0..repeats {
                let (_, ms) = time_ms(|| {
                    map_first(&enc, &head, &params)?;
                    map_full_matrix(&enc, &head, &params, max_full)
                })?;
                times.push(ms);
            }
            Some(median(times))
        } else {
            None
        };
        rows.push(CostRow {
            n,
            k,
            full_cells: n * n,
            sampled_cells,
            full_ms,
            sampled_ms: median(sampled_times),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_counts_and_skips() {
        let rows = matrix_cost_bench(&[4, 30], 5, 3, 1, 10, 1).unwrap();
        assert_eq!(rows[0].sampled_cells, 16);
        assert_eq!(rows[0].full_cells, 16);
        assert!(rows[0].full_ms.is_some());
        assert_eq!(rows[1].sampled_cells, 25);
        assert_eq!(rows[1].full_cells, 900);
        assert_eq!(rows[1].full_ms, None);
    }
}
