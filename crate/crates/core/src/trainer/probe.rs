//! One explicit descent step on sampled logits, to observe which way each
//! cell's probability moves.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Bindings, ParameterSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub truth_before: f64,
    pub truth_after: f64,
    /// Joint probabilities of the sampled cells, row-major over the sample.
    pub probs_before: Vec<f64>,
    pub probs_after: Vec<f64>,
    /// Loss gradient at each sampled logit, same order.
    pub gradient: Vec<f64>,
    pub truth_rose: bool,
    /// Sampled cells other than the gold one whose probability did not fall.
    pub others_not_falling: usize,
    /// Sampled logits other than the gold one with a non-positive gradient.
    pub others_wrong_sign: usize,
    /// Largest gradient magnitude at a cell outside the sample.
    pub unsampled_max_grad: f64,
}

impl ProbeReport {
    /// Gold probability up, every other sampled probability down, nothing
    /// outside the sample touched.
    pub fn holds(&self) -> bool {
        self.truth_rose && self.others_not_falling == 0 && self.unsampled_max_grad == 0.0
    }
}

/// Probe with every cell of a `k×k` logit matrix sampled.
pub fn gradient_direction_probe(logits: &Tensor, truth_cell: (usize, usize), lr: f64) -> Result<ProbeReport> {
    if logits.rank() != 2 {
        return Err(Error::dim("gradient_direction_probe", logits.shape(), &[0, 0]));
    }
    let rows: Vec<usize> = (0..logits.rows()).collect();
    let cols = vec![(0..logits.cols()).collect::<Vec<_>>(); logits.rows()];
    gradient_direction_probe_within(logits, &rows, &cols, truth_cell, lr)
}

/// Probe on the cells `(rows[r], cols[r][c])` of a larger logit matrix,
/// normalised jointly. `truth_cell` is local to the sample.
pub fn gradient_direction_probe_within(
    logits: &Tensor,
    rows: &[usize],
    cols: &[Vec<usize>],
    truth_cell: (usize, usize),
    lr: f64,
) -> Result<ProbeReport> {
    if rows.len() != cols.len() || rows.is_empty() {
        return Err(Error::invalid("one column set per sampled row is required"));
    }
    let (tr, tc) = truth_cell;
    if tr >= rows.len() || tc >= cols[tr].len() {
        return Err(Error::Index {
            index: tr.max(tc),
            len: rows.len(),
        });
    }
    let truth_flat: usize = cols[..tr].iter().map(Vec::len).sum::<usize>() + tc;
    let mut params = ParameterSet::new();
    params.insert("z", logits.clone())?;

    let sampled_probs = |p: &ParameterSet| -> Result<(Tape, Bindings, Var, Var)> {
        let mut tape = Tape::new();
        let b = tape.bind(p);
        let z = b.get("z")?;
        let mut flat = None;
        for (&r, cs) in rows.iter().zip(cols) {
            let row = tape.row(z, r)?;
            let picked = tape.gather(row, cs, Axis::Column)?;
            flat = Some(match flat {
                None => picked,
                Some(acc) => tape.concat_rows(acc, picked)?,
            });
        }
        let probs = tape.masked_softmax(flat.expect("non-empty sample"), None)?;
        let loss = tape.nll(probs, truth_flat)?.loss;
        Ok((tape, b, probs, loss))
    };

    let (tape, b, probs, loss) = sampled_probs(&params)?;
    let grads = tape.backward(loss)?.collect(&b, &params);
    let full_grad = grads.get("z").expect("bound").to_vec();
    let before = tape.value(probs).data().to_vec();

    let width = logits.cols();
    let mut in_sample = vec![false; logits.len()];
    let mut gradient = Vec::with_capacity(before.len());
    for (&r, cs) in rows.iter().zip(cols) {
        for &c in cs {
            in_sample[r * width + c] = true;
            gradient.push(full_grad[r * width + c]);
        }
    }
    let unsampled_max_grad = full_grad
        .iter()
        .zip(&in_sample)
        .filter(|(_, &s)| !s)
        .map(|(g, _)| g.abs())
        .fold(0.0, f64::max);

    let mut stepped = params.clone();
    for (x, g) in stepped.values_mut("z").expect("bound").iter_mut().zip(&full_grad) {
        *x -= lr * g;
    }
    let (tape_after, _, probs_after, _) = sampled_probs(&stepped)?;
    let after = tape_after.value(probs_after).data().to_vec();

    let others = (0..before.len()).filter(|&i| i != truth_flat);
    Ok(ProbeReport {
        truth_before: before[truth_flat],
        truth_after: after[truth_flat],
        truth_rose: after[truth_flat] > before[truth_flat],
        others_not_falling: others.clone().filter(|&i| after[i] >= before[i]).count(),
        others_wrong_sign: others.filter(|&i| !(gradient[i] > 0.0)).count(),
        unsampled_max_grad,
        probs_before: before,
        probs_after: after,
        gradient,
    })
}
