//! Matrix-based conditional head.
//!
//! For every anchor position `i` the head produces a full distribution over
//! the other endpoint:
//!
//! ```text
//! P[i] = softmax(vᵀ tanh(V [Hᵀ ; [H[i]ᵀ]ⁿ]))
//! ```
//!
//! `V` (`l×2d`) splits column-wise into a passage half `V_p` and an anchor
//! half `V_a`, and `V [Hᵀ ; [H[i]ᵀ]ⁿ] = V_p Hᵀ + [V_a H[i]ᵀ]ⁿ`. Both halves are
//! projected once per passage ([`MapContext`]) and every row reuses them.
//!
//! The forward direction anchors on the start and distributes over ends; the
//! backward direction is an independent parameter set that anchors on the
//! end and distributes over starts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{pointer, ProbMatrix, ProbVector};
use crate::autodiff::{Axis, Bindings, ParameterSet, Tape, Tensor, Var};
use crate::encoder::{EncodedVars, EncoderOutput};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Start first, then end given start.
    Forward,
    /// End first, then start given end.
    Backward,
}

impl Direction {
    pub fn prefix(self) -> &'static str {
        match self {
            Direction::Forward => "map.fwd",
            Direction::Backward => "map.bwd",
        }
    }

    /// Orders `(start, end)` as `(first, second)` for this direction.
    pub fn order(self, start: usize, end: usize) -> (usize, usize) {
        match self {
            Direction::Forward => (start, end),
            Direction::Backward => (end, start),
        }
    }
}

/// How the head scores the first-chosen position.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FirstPosition {
    /// `softmax(H w_first)`.
    #[default]
    Linear,
    /// Pointer over `H` seeded with the pooled question state.
    Pointer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MapHead {
    pub direction: Direction,
    pub first: FirstPosition,
    pub d: usize,
    pub l: usize,
}

/// Per-passage projections shared by all rows.
#[derive(Clone, Copy, Debug)]
pub struct MapContext {
    /// `V_p Hᵀ`, `l×n`.
    passage: Var,
    /// `H V_aᵀ`, `n×l`; row `i` is the anchor term for row `i` of `P`.
    anchor: Var,
    n: usize,
}

impl MapContext {
    pub fn passage_len(&self) -> usize {
        self.n
    }
}

impl MapHead {
    fn name(&self, leaf: &str) -> String {
        format!("{}.{leaf}", self.direction.prefix())
    }

    pub fn init<R: Rng>(&self, params: &mut ParameterSet, scale: f64, rng: &mut R) -> Result<()> {
        match self.first {
            FirstPosition::Linear => {
                params.insert_uniform(self.name("w_first"), &[self.d], scale, rng)?
            }
            FirstPosition::Pointer => {
                pointer::init(params, &self.name("first"), self.d, self.l, scale, rng)?
            }
        }
        params.insert_uniform(self.name("v"), &[self.l], scale, rng)?;
        params.insert_uniform(self.name("V"), &[self.l, 2 * self.d], scale, rng)
    }

    /// Distribution over the first-chosen position.
    pub fn first_probs(&self, tape: &mut Tape, b: &Bindings, enc: &EncodedVars) -> Result<Var> {
        match self.first {
            FirstPosition::Linear => {
                let w = b.get(&self.name("w_first"))?;
                let logits = tape.matmul(enc.h, w)?;
                tape.masked_softmax(logits, Some(&enc.valid))
            }
            FirstPosition::Pointer => {
                let prefix = self.name("first");
                let state = pointer::pool(tape, b, &prefix, enc.h_q)?;
                pointer::point(tape, b, &prefix, enc.h, state, &enc.valid)
            }
        }
    }

    pub fn context(&self, tape: &mut Tape, b: &Bindings, h: Var) -> Result<MapContext> {
        let big_v = b.get(&self.name("V"))?;
        let d = tape.value(h).cols();
        if tape.value(big_v).cols() != 2 * d {
            return Err(Error::dim("map context", tape.shape(big_v), &[self.l, 2 * d]));
        }
        let n = tape.value(h).rows();
        let passage_cols: Vec<usize> = (0..d).collect();
        let anchor_cols: Vec<usize> = (d..2 * d).collect();
        let v_p = tape.gather(big_v, &passage_cols, Axis::Column)?;
        let v_a = tape.gather(big_v, &anchor_cols, Axis::Column)?;
        let ht = tape.transpose(h)?;
        let passage = tape.matmul(v_p, ht)?;
        let v_at = tape.transpose(v_a)?;
        let anchor = tape.matmul(h, v_at)?;
        Ok(MapContext { passage, anchor, n })
    }

    /// Logits of row `i`, at `cols` (in the given order) or at every column.
    ///
    /// Each column's logit goes through the same arithmetic whichever subset
    /// is requested, so sampled logits equal the corresponding full-row
    /// logits bit for bit.
    pub fn row_logits(
        &self,
        tape: &mut Tape,
        b: &Bindings,
        ctx: &MapContext,
        i: usize,
        cols: Option<&[usize]>,
    ) -> Result<Var> {
        if i >= ctx.n {
            return Err(Error::Index {
                index: i,
                len: ctx.n,
            });
        }
        let v = b.get(&self.name("v"))?;
        let (passage, width) = match cols {
            Some(cols) => {
                check_cols(cols, ctx.n)?;
                (tape.gather(ctx.passage, cols, Axis::Column)?, cols.len())
            }
            None => (ctx.passage, ctx.n),
        };
        let anchor = tape.row(ctx.anchor, i)?;
        let rep = tape.repeat_cols(anchor, width)?;
        let s = tape.add(passage, rep)?;
        let act = tape.tanh(s);
        tape.matmul(v, act)
    }

    /// Values of every logit in row `i`, without recording anything.
    /// Bitwise equal to [`MapHead::row_logits`] with all columns.
    pub fn row_logit_values(
        &self,
        tape: &Tape,
        b: &Bindings,
        ctx: &MapContext,
        i: usize,
    ) -> Result<Vec<f64>> {
        if i >= ctx.n {
            return Err(Error::Index {
                index: i,
                len: ctx.n,
            });
        }
        let v = tape.value(b.get(&self.name("v"))?).data();
        let passage = tape.value(ctx.passage).data();
        let anchor = tape.value(ctx.anchor).row(i);
        let n = ctx.n;
        Ok((0..n)
            .map(|j| {
                let mut acc = 0.0;
                for (k, &vk) in v.iter().enumerate() {
                    acc += vk * (passage[k * n + j] + anchor[k]).tanh();
                }
                acc
            })
            .collect())
    }

    /// Row `i` of `P` as a distribution over the valid columns.
    pub fn row_probs(
        &self,
        tape: &mut Tape,
        b: &Bindings,
        ctx: &MapContext,
        i: usize,
        valid: &[bool],
    ) -> Result<Var> {
        let logits = self.row_logits(tape, b, ctx, i, None)?;
        tape.masked_softmax(logits, Some(valid))
    }

    /// The whole `n×n` conditional matrix.
    pub fn full_matrix(
        &self,
        tape: &mut Tape,
        b: &Bindings,
        ctx: &MapContext,
        valid: &[bool],
    ) -> Result<Var> {
        let rows = (0..ctx.n)
            .map(|i| self.row_probs(tape, b, ctx, i, valid))
            .collect::<Result<Vec<_>>>()?;
        tape.stack_rows(&rows)
    }
}

fn check_cols(cols: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &c in cols {
        if c >= n {
            return Err(Error::Index { index: c, len: n });
        }
        if std::mem::replace(&mut seen[c], true) {
            return Err(Error::invalid(format!("duplicate column {c}")));
        }
    }
    Ok(())
}

/// Refuses matrices with more than `max_n` rows.
pub fn guard_full_matrix(n: usize, max_n: usize) -> Result<()> {
    if n > max_n {
        return Err(Error::Resource(format!(
            "full {n}×{n} conditional matrix exceeds the cap of {max_n} positions; \
             use sampled training instead"
        )));
    }
    Ok(())
}

struct Scratch {
    tape: Tape,
    b: Bindings,
    enc: EncodedVars,
}

fn scratch(enc: &EncoderOutput, params: &ParameterSet) -> Scratch {
    let mut tape = Tape::new();
    let b = tape.bind(params);
    let enc = EncodedVars::constant(&mut tape, enc);
    Scratch { tape, b, enc }
}

pub fn map_first(enc: &EncoderOutput, head: &MapHead, params: &ParameterSet) -> Result<ProbVector> {
    let mut s = scratch(enc, params);
    let p = head.first_probs(&mut s.tape, &s.b, &s.enc)?;
    ProbVector::new(s.tape.value(p).data().to_vec(), enc.valid.clone())
}

/// Logits of row `i` at `cols`, or at every column when `cols` is `None`.
/// Normalisation is left to the caller.
pub fn map_row_logits(
    h: &Tensor,
    i: usize,
    head: &MapHead,
    params: &ParameterSet,
    cols: Option<&[usize]>,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let b = tape.bind(params);
    let hv = tape.constant(h.clone());
    let ctx = head.context(&mut tape, &b, hv)?;
    let l = head.row_logits(&mut tape, &b, &ctx, i, cols)?;
    Ok(tape.value(l).data().to_vec())
}

/// Row `i` of `P`, normalised over all valid columns.
pub fn map_conditional_row(
    enc: &EncoderOutput,
    i: usize,
    head: &MapHead,
    params: &ParameterSet,
) -> Result<ProbVector> {
    let mut s = scratch(enc, params);
    let ctx = head.context(&mut s.tape, &s.b, s.enc.h)?;
    let p = head.row_probs(&mut s.tape, &s.b, &ctx, i, &enc.valid)?;
    ProbVector::new(s.tape.value(p).data().to_vec(), enc.valid.clone())
}

/// Full conditional matrix, refused above `max_n` positions.
pub fn map_full_matrix(
    enc: &EncoderOutput,
    head: &MapHead,
    params: &ParameterSet,
    max_n: usize,
) -> Result<ProbMatrix> {
    let n = enc.passage_len();
    guard_full_matrix(n, max_n)?;
    let mut s = scratch(enc, params);
    let ctx = head.context(&mut s.tape, &s.b, s.enc.h)?;
    let m = head.full_matrix(&mut s.tape, &s.b, &ctx, &enc.valid)?;
    ProbMatrix::new(n, n, s.tape.value(m).data().to_vec(), enc.valid.clone())
}
