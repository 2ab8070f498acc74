use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::AdamConfig;
use crate::autodiff::{ParamGrads, ParameterSet};
use crate::error::{Error, Result};

/// First and second moment estimates per parameter.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update with learning rate `lr`. Parameters
/// without a gradient entry are left alone. Nothing is modified when any
/// gradient is non-finite.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &ParamGrads,
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads.iter() {
        let p = params
            .get(name)
            .ok_or_else(|| Error::invalid(format!("gradient for unknown parameter `{name}`")))?;
        if p.len() != g.len() {
            return Err(Error::dim("adam_step", p.shape(), &[g.len()]));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads.iter() {
        let m = state
            .m
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; g.len()]);
        let v = state
            .v
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; g.len()]);
        let values = params.values_mut(name).expect("checked above");
        for i in 0..g.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn single(value: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("x", Tensor::vector(vec![value])).unwrap();
        p
    }

    fn grad(value: f64) -> ParamGrads {
        let mut g = ParamGrads::default();
        g.insert("x".into(), vec![value]);
        g
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = single(0.7);
        let mut s = AdamState::new();
        for _ in 0..3 {
            adam_step(&mut p, &grad(0.0), &mut s, &AdamConfig::default(), 0.1).unwrap();
        }
        assert_eq!(p.get("x").unwrap().data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_the_learning_rate() {
        let mut p = single(0.0);
        let mut s = AdamState::new();
        adam_step(&mut p, &grad(1.0), &mut s, &AdamConfig::default(), 1e-3).unwrap();
        let x = p.get("x").unwrap().data()[0];
        assert!((x + 1e-3).abs() < 1e-10, "{x}");
    }

    #[test]
    fn non_finite_gradients_name_the_parameter() {
        let mut p = single(0.0);
        let mut s = AdamState::new();
        let err = adam_step(&mut p, &grad(f64::NAN), &mut s, &AdamConfig::default(), 1e-3)
            .unwrap_err();
        assert!(err.to_string().contains("`x`"));
        assert_eq!(s.t, 0);
    }
}
