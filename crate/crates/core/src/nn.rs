//! Small building blocks recorded on a [`Tape`].

use rand::Rng;

use crate::autodiff::{Bindings, ParameterSet, Tape, Var};
use crate::error::Result;

/// Gated recurrent cell parameters under `prefix`:
/// `w_{z,r,n}: [hidden×input]`, `u_{z,r,n}: [hidden×hidden]`, `b_{z,r,n}: [hidden]`.
pub fn init_gru<R: Rng>(
    params: &mut ParameterSet,
    prefix: &str,
    input: usize,
    hidden: usize,
    scale: f64,
    rng: &mut R,
) -> Result<()> {
    for gate in ["z", "r", "n"] {
        params.insert_uniform(format!("{prefix}.w_{gate}"), &[hidden, input], scale, rng)?;
        params.insert_uniform(format!("{prefix}.u_{gate}"), &[hidden, hidden], scale, rng)?;
        params.insert_uniform(format!("{prefix}.b_{gate}"), &[hidden], scale, rng)?;
    }
    Ok(())
}

/// Input-side projections `X·Wᵀ` for a whole sequence, one matrix per gate.
pub struct GruInputs {
    z: Var,
    r: Var,
    n: Var,
}

impl GruInputs {
    /// `xs` is `[T×input]`.
    pub fn project(tape: &mut Tape, b: &Bindings, prefix: &str, xs: Var) -> Result<Self> {
        let mut proj = |gate: &str| -> Result<Var> {
            let w = b.get(&format!("{prefix}.w_{gate}"))?;
            let wt = tape.transpose(w)?;
            tape.matmul(xs, wt)
        };
        Ok(Self {
            z: proj("z")?,
            r: proj("r")?,
            n: proj("n")?,
        })
    }
}

/// One step at time `t`, inputs already projected:
///
/// ```text
/// z = σ(W_z x + U_z h + b_z)
/// r = σ(W_r x + U_r h + b_r)
/// n = tanh(W_n x + r ⊙ (U_n h) + b_n)
/// h' = n + z ⊙ (h − n)
/// ```
pub fn gru_step_projected(
    tape: &mut Tape,
    b: &Bindings,
    prefix: &str,
    inputs: &GruInputs,
    t: usize,
    h: Var,
) -> Result<Var> {
    let zx = tape.row(inputs.z, t)?;
    let rx = tape.row(inputs.r, t)?;
    let nx = tape.row(inputs.n, t)?;
    gate_update(tape, b, prefix, zx, rx, nx, h)
}

/// One step for a single input vector `x`.
pub fn gru_step(tape: &mut Tape, b: &Bindings, prefix: &str, h: Var, x: Var) -> Result<Var> {
    let zx = {
        let w = b.get(&format!("{prefix}.w_z"))?;
        tape.matmul(w, x)?
    };
    let rx = {
        let w = b.get(&format!("{prefix}.w_r"))?;
        tape.matmul(w, x)?
    };
    let nx = {
        let w = b.get(&format!("{prefix}.w_n"))?;
        tape.matmul(w, x)?
    };
    gate_update(tape, b, prefix, zx, rx, nx, h)
}

fn gate_update(
    tape: &mut Tape,
    b: &Bindings,
    prefix: &str,
    zx: Var,
    rx: Var,
    nx: Var,
    h: Var,
) -> Result<Var> {
    let gate = |tape: &mut Tape, gate: &str, x: Var| -> Result<Var> {
        let u = b.get(&format!("{prefix}.u_{gate}"))?;
        let bias = b.get(&format!("{prefix}.b_{gate}"))?;
        let uh = tape.matmul(u, h)?;
        let s = tape.add(x, uh)?;
        let s = tape.add(s, bias)?;
        Ok(tape.sigmoid(s))
    };
    let z = gate(tape, "z", zx)?;
    let r = gate(tape, "r", rx)?;

    let un = b.get(&format!("{prefix}.u_n"))?;
    let bn = b.get(&format!("{prefix}.b_n"))?;
    let uh = tape.matmul(un, h)?;
    let ruh = tape.mul(r, uh)?;
    let s = tape.add(nx, ruh)?;
    let s = tape.add(s, bn)?;
    let n = tape.tanh(s);

    let neg_n = tape.affine(n, -1.0, 0.0);
    let diff = tape.add(h, neg_n)?;
    let zd = tape.mul(z, diff)?;
    tape.add(n, zd)
}
