use super::params::ParameterSet;
use super::tape::{Bindings, Tape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Largest disagreement found by [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter and flat index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Compares [`Tape::backward`] against central finite differences for every
/// coordinate of every parameter.
///
/// Relative error per coordinate is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, params: &ParameterSet, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bindings) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::invalid(format!("finite-difference step {step} must be > 0")));
    }
    let eval = |p: &ParameterSet| -> Result<f64> {
        let mut tape = Tape::new();
        let b = tape.bind(p);
        let root = f(&mut tape, &b)?;
        let v = tape.value(root).item()?;
        if !v.is_finite() {
            return Err(Error::Numerical(format!("objective evaluated to {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let bindings = tape.bind(params);
    let root = f(&mut tape, &bindings)?;
    if !tape.value(root).item()?.is_finite() {
        return Err(Error::Numerical("objective is not finite".into()));
    }
    let analytic = tape.backward(root)?.collect(&bindings, params);

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let mut probe = params.clone();
    for (name, tensor) in params.iter() {
        let grad = analytic.get(name).expect("collected for every parameter");
        for i in 0..tensor.len() {
            let orig = tensor.data()[i];
            probe.values_mut(name).expect("same names")[i] = orig + step;
            let plus = eval(&probe)?;
            probe.values_mut(name).expect("same names")[i] = orig - step;
            let minus = eval(&probe)?;
            probe.values_mut(name).expect("same names")[i] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = grad[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.coordinates += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = Some((name.to_string(), i));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn sum_of_squares_is_exact() {
        let mut params = ParameterSet::new();
        params
            .insert("x", Tensor::vector(vec![0.5, -1.25, 2.0, 0.1]))
            .unwrap();
        let report = grad_check(
            |tape, b| {
                let x = b.get("x")?;
                let sq = tape.mul(x, x)?;
                Ok(tape.sum(sq))
            },
            &params,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-8, "{report:?}");
        assert_eq!(report.coordinates, 4);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let mut params = ParameterSet::new();
        params.insert("x", Tensor::vector(vec![1.0])).unwrap();
        let err = grad_check(
            |tape, b| {
                let x = b.get("x")?;
                let big = tape.affine(x, f64::INFINITY, 0.0);
                Ok(tape.sum(big))
            },
            &params,
            DEFAULT_STEP,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }
}
