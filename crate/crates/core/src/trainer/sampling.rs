//! Top-k index sampling and the `k×k` sampled conditional matrix.

use serde::{Deserialize, Serialize};

use super::config::{NormMode, TrainConfig};
use crate::autodiff::{kernels, Bindings, ParameterSet, Tape};
use crate::encoder::EncoderOutput;
use crate::error::{Error, Result};
use crate::heads::{MapContext, MapHead, ProbVector};

/// The `k−1` most probable valid positions other than `truth`, plus
/// `truth`, sorted ascending. Ties go to the lower index. At most as many
/// indices as there are valid positions (counting `truth`).
pub fn sample_indices(p: &ProbVector, truth: usize, k: usize) -> Result<Vec<usize>> {
    if truth >= p.len() {
        return Err(Error::Index {
            index: truth,
            len: p.len(),
        });
    }
    if k == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let mut others: Vec<usize> = (0..p.len()).filter(|&i| i != truth && p.valid[i]).collect();
    others.sort_by(|&a, &b| p.probs[b].total_cmp(&p.probs[a]).then(a.cmp(&b)));
    others.truncate(k - 1);
    others.push(truth);
    others.sort_unstable();
    Ok(others)
}

/// Rows, per-row columns and the gold cell of a sampled matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePlan {
    /// Sampled first-chosen positions, ascending.
    pub rows: Vec<usize>,
    /// Sampled second-chosen positions for each row, ascending.
    pub cols: Vec<Vec<usize>>,
    /// `(local row, local column)` of the gold cell.
    pub truth_cell: (usize, usize),
}

impl SamplePlan {
    pub fn num_cells(&self) -> usize {
        self.cols.iter().map(Vec::len).sum()
    }

    /// Flat index of the gold cell in row-major order.
    pub fn truth_flat(&self) -> usize {
        let (r, c) = self.truth_cell;
        self.cols[..r].iter().map(Vec::len).sum::<usize>() + c
    }
}

/// Chooses rows from `p_first` and, per row, columns from that row's
/// provisional distribution over the valid positions.
#[allow(clippy::too_many_arguments)]
pub fn plan_sample(
    tape: &Tape,
    b: &Bindings,
    head: &MapHead,
    ctx: &MapContext,
    p_first: &ProbVector,
    truth_first: usize,
    truth_second: usize,
    cfg: &TrainConfig,
) -> Result<SamplePlan> {
    let valid = &p_first.valid;
    let rows = sample_indices(p_first, truth_first, cfg.sample_k)?;
    let row_dist = |i: usize| -> Result<ProbVector> {
        let logits = head.row_logit_values(tape, b, ctx, i)?;
        ProbVector::new(kernels::masked_softmax(&logits, Some(valid))?, valid.clone())
    };
    let cols = if cfg.shared_columns {
        let shared = sample_indices(&row_dist(truth_first)?, truth_second, cfg.sample_k)?;
        vec![shared; rows.len()]
    } else {
        rows.iter()
            .map(|&i| sample_indices(&row_dist(i)?, truth_second, cfg.sample_k))
            .collect::<Result<Vec<_>>>()?
    };
    let r = rows.binary_search(&truth_first).expect("truth row is sampled");
    let c = cols[r].binary_search(&truth_second).expect("truth column is sampled");
    Ok(SamplePlan {
        rows,
        cols,
        truth_cell: (r, c),
    })
}

/// A sampled slice of the conditional matrix with its normalised
/// probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledMatrix {
    pub row_indices: Vec<usize>,
    pub col_indices: Vec<Vec<usize>>,
    /// Retained logits, one vector per sampled row.
    pub logits: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
    pub truth_cell: (usize, usize),
    pub norm_mode: NormMode,
}

impl SampledMatrix {
    pub fn num_cells(&self) -> usize {
        self.probs.iter().map(Vec::len).sum()
    }

    pub fn truth_prob(&self) -> f64 {
        let (r, c) = self.truth_cell;
        self.probs[r][c]
    }
}

/// Normalises retained logits per `mode`.
pub fn normalize_sampled(logits: &[Vec<f64>], mode: NormMode) -> Result<Vec<Vec<f64>>> {
    match mode {
        NormMode::RowWise => logits
            .iter()
            .map(|row| kernels::masked_softmax(row, None))
            .collect(),
        NormMode::JointFlat => {
            let flat: Vec<f64> = logits.iter().flatten().copied().collect();
            let probs = kernels::masked_softmax(&flat, None)?;
            let mut out = Vec::with_capacity(logits.len());
            let mut at = 0;
            for row in logits {
                out.push(probs[at..at + row.len()].to_vec());
                at += row.len();
            }
            Ok(out)
        }
    }
}

/// Builds the sampled matrix for one example and direction. `truth_first`
/// and `truth_second` are the gold positions in the head's own order.
pub fn build_sampled_matrix(
    enc: &EncoderOutput,
    head: &MapHead,
    params: &ParameterSet,
    p_first: &ProbVector,
    truth_first: usize,
    truth_second: usize,
    cfg: &TrainConfig,
) -> Result<SampledMatrix> {
    let n = enc.passage_len();
    for t in [truth_first, truth_second] {
        if t >= n {
            return Err(Error::Index { index: t, len: n });
        }
    }
    let mut tape = Tape::new();
    let b = tape.bind(params);
    let h = tape.constant(enc.h.clone());
    let ctx = head.context(&mut tape, &b, h)?;
    let plan = plan_sample(&tape, &b, head, &ctx, p_first, truth_first, truth_second, cfg)?;
    let mut logits = Vec::with_capacity(plan.rows.len());
    for (&i, cols) in plan.rows.iter().zip(&plan.cols) {
        let l = head.row_logits(&mut tape, &b, &ctx, i, Some(cols))?;
        logits.push(tape.value(l).data().to_vec());
    }
    let probs = normalize_sampled(&logits, cfg.norm_mode)?;
    Ok(SampledMatrix {
        row_indices: plan.rows,
        col_indices: plan.cols,
        logits,
        probs,
        truth_cell: plan.truth_cell,
        norm_mode: cfg.norm_mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(p: &[f64]) -> ProbVector {
        ProbVector::unmasked(p.to_vec())
    }

    #[test]
    fn worked_examples() {
        assert_eq!(sample_indices(&pv(&[0.4, 0.1, 0.3, 0.2]), 2, 3).unwrap(), [0, 2, 3]);
        assert_eq!(sample_indices(&pv(&[0.7, 0.2, 0.1]), 0, 2).unwrap(), [0, 1]);
        assert_eq!(sample_indices(&pv(&[0.2, 0.3, 0.5]), 1, 5).unwrap(), [0, 1, 2]);
        assert_eq!(sample_indices(&pv(&[0.25; 4]), 3, 3).unwrap(), [0, 1, 3]);
        assert!(sample_indices(&pv(&[1.0]), 1, 1).is_err());
    }

    #[test]
    fn masked_positions_are_never_sampled() {
        let p = ProbVector::new(vec![0.5, 0.0, 0.5], vec![true, false, true]).unwrap();
        assert_eq!(sample_indices(&p, 0, 3).unwrap(), [0, 2]);
    }
}
