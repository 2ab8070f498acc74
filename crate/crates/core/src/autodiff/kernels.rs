//! Value-level kernels shared by the tape's forward pass and by callers that
//! need plain numbers without recording anything.

use crate::error::{Error, Result};

/// `out[p×r] = a[p×q] · b[q×r]`, each output cell a sequential dot product
/// over the inner dimension. Column subsets of `b` therefore give bitwise
/// identical cells.
pub fn matmul(a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * r];
    for i in 0..p {
        let arow = &a[i * q..(i + 1) * q];
        let orow = &mut out[i * r..(i + 1) * r];
        for (j, o) in orow.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &av) in arow.iter().enumerate() {
                acc += av * b[k * r + j];
            }
            *o = acc;
        }
    }
    out
}

/// `a[p×q] · b[r×q]ᵀ`
pub fn matmul_bt(a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * r];
    for i in 0..p {
        let arow = &a[i * q..(i + 1) * q];
        for j in 0..r {
            let brow = &b[j * q..(j + 1) * q];
            out[i * r + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a[q×p]ᵀ · b[q×r]`
pub fn matmul_at(a: &[f64], b: &[f64], q: usize, p: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * r];
    for k in 0..q {
        let arow = &a[k * p..(k + 1) * p];
        let brow = &b[k * r..(k + 1) * r];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * r..(i + 1) * r];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Softmax restricted to `valid` positions (all positions when `None`).
///
/// Invalid positions get probability exactly 0. Uses max-subtraction, so
/// large logits do not overflow.
pub fn masked_softmax(logits: &[f64], valid: Option<&[bool]>) -> Result<Vec<f64>> {
    if let Some(v) = valid {
        if v.len() != logits.len() {
            return Err(Error::dim("masked_softmax", &[logits.len()], &[v.len()]));
        }
    }
    let keep = |i: usize| valid.is_none_or(|v| v[i]);
    let max = (0..logits.len())
        .filter(|&i| keep(i))
        .map(|i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::invalid("softmax over an empty or fully masked vector"));
    }
    if !max.is_finite() {
        return Err(Error::Numerical(format!("non-finite logit {max}")));
    }
    let mut out = vec![0.0; logits.len()];
    let mut total = 0.0;
    for (i, o) in out.iter_mut().enumerate() {
        if keep(i) {
            *o = (logits[i] - max).exp();
            total += *o;
        }
    }
    for o in &mut out {
        *o /= total;
    }
    Ok(out)
}

/// Vector-Jacobian product of softmax: `p ⊙ (g − ⟨g, p⟩)`.
pub fn softmax_backward(p: &[f64], g: &[f64], out: &mut [f64]) {
    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((o, &pi), &gi) in out.iter_mut().zip(p).zip(g) {
        *o += pi * (gi - dot);
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_products_agree_with_plain_product() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2×3
        let b = [1.0, -1.0, 0.5, 2.0, 0.0, 1.0]; // 3×2
        let ab = matmul(&a, &b, 2, 3, 2);
        assert_eq!(ab, vec![2.0, 6.0, 6.5, 12.0]);
        // bᵀ stored as 2×3
        let bt = [1.0, 0.5, 0.0, -1.0, 2.0, 1.0];
        assert_eq!(matmul_bt(&a, &bt, 2, 3, 2), ab);
        // aᵀ stored as 3×2
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        assert_eq!(matmul_at(&at, &b, 3, 2, 2), ab);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }
}
