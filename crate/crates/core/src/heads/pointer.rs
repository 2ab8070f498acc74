//! Additive-attention pointer and question pooling shared by the vector
//! conditional head and the pointer-style first position of the matrix head.
//!
//! Parameters under `prefix`: `v: [l]`, `V: [l×d]`, `W_e: [l×d]` for the
//! pointer; `v_q: [l]`, `V_q: [l×d]` for pooling.

use rand::Rng;

use crate::autodiff::{Bindings, ParameterSet, Tape, Var};
use crate::error::Result;

pub(crate) fn init<R: Rng>(
    params: &mut ParameterSet,
    prefix: &str,
    d: usize,
    l: usize,
    scale: f64,
    rng: &mut R,
) -> Result<()> {
    params.insert_uniform(format!("{prefix}.v"), &[l], scale, rng)?;
    params.insert_uniform(format!("{prefix}.V"), &[l, d], scale, rng)?;
    params.insert_uniform(format!("{prefix}.W_e"), &[l, d], scale, rng)?;
    params.insert_uniform(format!("{prefix}.v_q"), &[l], scale, rng)?;
    params.insert_uniform(format!("{prefix}.V_q"), &[l, d], scale, rng)?;
    Ok(())
}

/// `softmax(v_qᵀ tanh(V_q H_Qᵀ))` pooled back over the rows of `H_Q`:
/// `h = H_Qᵀ p_init`.
pub(crate) fn pool(tape: &mut Tape, b: &Bindings, prefix: &str, h_q: Var) -> Result<Var> {
    let v_q = b.get(&format!("{prefix}.v_q"))?;
    let big_v_q = b.get(&format!("{prefix}.V_q"))?;
    let hqt = tape.transpose(h_q)?;
    let proj = tape.matmul(big_v_q, hqt)?;
    let act = tape.tanh(proj);
    let logits = tape.matmul(v_q, act)?;
    let p_init = tape.masked_softmax(logits, None)?;
    tape.matmul(hqt, p_init)
}

/// `softmax(vᵀ tanh(V Hᵀ + [W_e h]ⁿ))` over the valid passage positions.
pub(crate) fn point(
    tape: &mut Tape,
    b: &Bindings,
    prefix: &str,
    h: Var,
    state: Var,
    valid: &[bool],
) -> Result<Var> {
    let v = b.get(&format!("{prefix}.v"))?;
    let big_v = b.get(&format!("{prefix}.V"))?;
    let w_e = b.get(&format!("{prefix}.W_e"))?;
    let n = tape.value(h).rows();
    let ht = tape.transpose(h)?;
    let vh = tape.matmul(big_v, ht)?;
    let ws = tape.matmul(w_e, state)?;
    let rep = tape.repeat_cols(ws, n)?;
    let s = tape.add(vh, rep)?;
    let act = tape.tanh(s);
    let logits = tape.matmul(v, act)?;
    tape.masked_softmax(logits, Some(valid))
}
