use rand::Rng;

use super::ProbVector;
use crate::autodiff::{Bindings, ParameterSet, Tape, Var};
use crate::encoder::{EncodedVars, EncoderOutput};
use crate::error::Result;

/// Independent start/end head: `p_s = softmax(H w_s)`, `p_e = softmax(H w_e)`.
///
/// Parameters: `ind.w_s: [d]`, `ind.w_e: [d]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IndHead {
    pub d: usize,
}

impl IndHead {
    pub fn init<R: Rng>(&self, params: &mut ParameterSet, scale: f64, rng: &mut R) -> Result<()> {
        params.insert_uniform("ind.w_s", &[self.d], scale, rng)?;
        params.insert_uniform("ind.w_e", &[self.d], scale, rng)
    }

    pub fn forward(&self, tape: &mut Tape, b: &Bindings, enc: &EncodedVars) -> Result<(Var, Var)> {
        let mut side = |name: &str| -> Result<Var> {
            let w = b.get(name)?;
            let logits = tape.matmul(enc.h, w)?;
            tape.masked_softmax(logits, Some(&enc.valid))
        };
        Ok((side("ind.w_s")?, side("ind.w_e")?))
    }
}

/// Value-level independent head.
pub fn ind_head(enc: &EncoderOutput, params: &ParameterSet) -> Result<(ProbVector, ProbVector)> {
    let mut tape = Tape::new();
    let b = tape.bind(params);
    let vars = EncodedVars::constant(&mut tape, enc);
    let head = IndHead { d: enc.h.cols() };
    let (ps, pe) = head.forward(&mut tape, &b, &vars)?;
    Ok((
        ProbVector::new(tape.value(ps).data().to_vec(), enc.valid.clone())?,
        ProbVector::new(tape.value(pe).data().to_vec(), enc.valid.clone())?,
    ))
}
