use rand::Rng;

use super::{pointer, ProbVector};
use crate::autodiff::{Bindings, ParameterSet, Tape, Tensor, Var};
use crate::encoder::{EncodedVars, EncoderOutput};
use crate::error::Result;
use crate::nn;

pub(crate) const PREFIX: &str = "vcp";
const CELL: &str = "vcp.cell";

/// Vector-based conditional (pointer network) head.
///
/// The start state is the attention-pooled question; the end state is one
/// recurrent step from it, fed the start-weighted passage summary
/// `c_e = Hᵀ p_s`. Both pointers share `v`, `V`, `W_e`. The recurrent cell's
/// hidden size equals `d` so the pooled state can seed it directly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VcpHead {
    pub d: usize,
    /// Attention width `l`.
    pub l: usize,
}

impl VcpHead {
    pub fn init<R: Rng>(&self, params: &mut ParameterSet, scale: f64, rng: &mut R) -> Result<()> {
        pointer::init(params, PREFIX, self.d, self.l, scale, rng)?;
        nn::init_gru(params, CELL, self.d, self.d, scale, rng)
    }

    pub fn init_state(&self, tape: &mut Tape, b: &Bindings, h_q: Var) -> Result<Var> {
        pointer::pool(tape, b, PREFIX, h_q)
    }

    pub fn pointer(
        &self,
        tape: &mut Tape,
        b: &Bindings,
        h: Var,
        state: Var,
        valid: &[bool],
    ) -> Result<Var> {
        pointer::point(tape, b, PREFIX, h, state, valid)
    }

    /// `(p_s, p_e)`; a single end distribution whatever the start.
    pub fn forward(&self, tape: &mut Tape, b: &Bindings, enc: &EncodedVars) -> Result<(Var, Var)> {
        let h_s = self.init_state(tape, b, enc.h_q)?;
        let p_s = self.pointer(tape, b, enc.h, h_s, &enc.valid)?;
        let ht = tape.transpose(enc.h)?;
        let c_e = tape.matmul(ht, p_s)?;
        let h_e = nn::gru_step(tape, b, CELL, h_s, c_e)?;
        let p_e = self.pointer(tape, b, enc.h, h_e, &enc.valid)?;
        Ok((p_s, p_e))
    }
}

fn head_for(params: &ParameterSet) -> VcpHead {
    let v = params.get("vcp.V").expect("vcp parameters");
    VcpHead {
        l: v.rows(),
        d: v.cols(),
    }
}

/// Pooled question state `h_s = H_Qᵀ softmax(v_Qᵀ tanh(V_Q H_Qᵀ))`.
pub fn vcp_init_state(h_q: &Tensor, params: &ParameterSet) -> Result<Tensor> {
    let mut tape = Tape::new();
    let b = tape.bind(params);
    let hq = tape.constant(h_q.clone());
    let s = head_for(params).init_state(&mut tape, &b, hq)?;
    Ok(tape.value(s).clone().with_grad(false))
}

pub fn vcp_pointer(
    h: &Tensor,
    state: &Tensor,
    valid: &[bool],
    params: &ParameterSet,
) -> Result<ProbVector> {
    let mut tape = Tape::new();
    let b = tape.bind(params);
    let hv = tape.constant(h.clone());
    let sv = tape.constant(state.clone());
    let p = head_for(params).pointer(&mut tape, &b, hv, sv, valid)?;
    ProbVector::new(tape.value(p).data().to_vec(), valid.to_vec())
}

pub fn vcp_head(enc: &EncoderOutput, params: &ParameterSet) -> Result<(ProbVector, ProbVector)> {
    let mut tape = Tape::new();
    let b = tape.bind(params);
    let vars = EncodedVars::constant(&mut tape, enc);
    let (ps, pe) = head_for(params).forward(&mut tape, &b, &vars)?;
    Ok((
        ProbVector::new(tape.value(ps).data().to_vec(), enc.valid.clone())?,
        ProbVector::new(tape.value(pe).data().to_vec(), enc.valid.clone())?,
    ))
}
