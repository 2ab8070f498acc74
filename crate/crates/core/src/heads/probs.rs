use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for stochastic-vector checks.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Probability distribution over passage positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbVector {
    pub probs: Vec<f64>,
    /// `false` marks a position that must carry probability 0.
    pub valid: Vec<bool>,
}

impl ProbVector {
    pub fn new(probs: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if probs.len() != valid.len() {
            return Err(Error::dim("ProbVector", &[probs.len()], &[valid.len()]));
        }
        Ok(Self { probs, valid })
    }

    /// All positions valid.
    pub fn unmasked(probs: Vec<f64>) -> Self {
        let valid = vec![true; probs.len()];
        Self { probs, valid }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Nonnegative, zero where masked, sums to 1 within `tol`.
    pub fn check(&self, tol: f64) -> Result<()> {
        check_stochastic(&self.probs, &self.valid, tol)
    }

    /// Index of the largest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Row-stochastic `rows × cols` matrix; each row is a distribution over
/// passage positions conditioned on the row's position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbMatrix {
    pub rows: usize,
    pub cols: usize,
    pub probs: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ProbMatrix {
    pub fn new(rows: usize, cols: usize, probs: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if probs.len() != rows * cols || valid.len() != cols {
            return Err(Error::dim("ProbMatrix", &[rows, cols], &[probs.len(), valid.len()]));
        }
        Ok(Self {
            rows,
            cols,
            probs,
            valid,
        })
    }

    pub fn unmasked(rows: usize, cols: usize, probs: Vec<f64>) -> Result<Self> {
        Self::new(rows, cols, probs, vec![true; cols])
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.cols..(i + 1) * self.cols]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.cols + j]
    }

    pub fn num_cells(&self) -> usize {
        self.probs.len()
    }

    pub fn check(&self, tol: f64) -> Result<()> {
        for i in 0..self.rows {
            check_stochastic(self.row(i), &self.valid, tol)
                .map_err(|e| Error::Numerical(format!("row {i}: {e}")))?;
        }
        Ok(())
    }
}

fn check_stochastic(probs: &[f64], valid: &[bool], tol: f64) -> Result<()> {
    for (i, (&p, &ok)) in probs.iter().zip(valid).enumerate() {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(Error::Numerical(format!("probability {p} at position {i}")));
        }
        if !ok && p != 0.0 {
            return Err(Error::Numerical(format!(
                "masked position {i} carries probability {p}"
            )));
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::Numerical(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checks_catch_bad_distributions() {
        assert!(ProbVector::unmasked(vec![0.5, 0.5]).check(1e-9).is_ok());
        assert!(ProbVector::unmasked(vec![0.5, 0.6]).check(1e-9).is_err());
        assert!(ProbVector::new(vec![0.5, 0.5], vec![true, false])
            .unwrap()
            .check(1e-9)
            .is_err());
        let m = ProbMatrix::unmasked(2, 2, vec![1.0, 0.0, 0.3, 0.7]).unwrap();
        assert!(m.check(1e-9).is_ok());
        assert_eq!(ProbVector::unmasked(vec![0.2, 0.4, 0.4]).argmax(), 1);
    }
}
