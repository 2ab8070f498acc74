//! Span losses, scalar and recorded on a tape.

use serde::{Deserialize, Serialize};

use super::config::{MatrixLoss, NormMode, TrainConfig};
use super::sampling::{plan_sample, SamplePlan, SampledMatrix};
use crate::autodiff::{Bindings, Tape, Var, LOG_FLOOR};
use crate::data::{QAExample, Span};
use crate::encoder::{encode_on, EncodedVars, Vocabulary};
use crate::error::{Error, Result};
use crate::heads::{guard_full_matrix, Direction, MapHead, ProbVector};
use crate::model::{HeadKind, ModelConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_s: f64,
    pub l_e: f64,
    pub l: f64,
}

impl LossBreakdown {
    pub fn new(l_s: f64, l_e: f64) -> Self {
        Self {
            l_s,
            l_e,
            l: total_loss(l_s, l_e),
        }
    }

    /// Component-wise mean.
    pub fn mean(items: &[LossBreakdown]) -> Self {
        let n = items.len().max(1) as f64;
        let l_s = items.iter().map(|x| x.l_s).sum::<f64>() / n;
        let l_e = items.iter().map(|x| x.l_e).sum::<f64>() / n;
        Self::new(l_s, l_e)
    }
}

/// `−ln p`, with `p` floored at [`LOG_FLOOR`]; the flag reports flooring.
pub fn neg_log(p: f64) -> (f64, bool) {
    (-p.max(LOG_FLOOR).ln(), p < LOG_FLOOR)
}

/// Cross-entropy of the first-position distribution against `truth`.
pub fn loss_start(p_first: &ProbVector, truth: usize) -> Result<(f64, bool)> {
    let p = *p_first.probs.get(truth).ok_or(Error::Index {
        index: truth,
        len: p_first.len(),
    })?;
    if !p_first.valid[truth] {
        return Err(Error::invalid(format!("gold position {truth} is masked")));
    }
    Ok(neg_log(p))
}

/// Cross-entropy of a sampled matrix against its gold cell. The target is
/// one-hot, so only the gold cell's normalised probability enters.
pub fn loss_end_sampled(sm: &SampledMatrix) -> (f64, bool) {
    neg_log(sm.truth_prob())
}

pub fn total_loss(l_s: f64, l_e: f64) -> f64 {
    (l_s + l_e) / 2.0
}

/// One example as token ids with its gold span.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub question: Vec<usize>,
    pub passage: Vec<usize>,
    pub span: Span,
}

impl TrainExample {
    pub fn encode(ex: &QAExample, vocab: &Vocabulary) -> Result<Self> {
        ex.validate()?;
        Ok(Self {
            question: vocab.encode(&ex.question),
            passage: vocab.encode(&ex.passage),
            span: ex.primary_span(),
        })
    }

    pub fn encode_all(data: &[QAExample], vocab: &Vocabulary) -> Result<Vec<Self>> {
        data.iter().map(|ex| Self::encode(ex, vocab)).collect()
    }
}

/// Root variable of one example's loss plus its value breakdown.
pub struct RecordedLoss {
    pub root: Var,
    pub breakdown: LossBreakdown,
    /// Target probabilities that hit the log floor.
    pub clamped: usize,
    /// Sample plan of each matrix direction, forward first; empty unless
    /// the matrix loss is sampled.
    pub plans: Vec<SamplePlan>,
}

struct Terms {
    start: Var,
    end: Var,
    clamped: usize,
    plan: Option<SamplePlan>,
}

/// Records encoder, head and loss for one example on `tape`.
pub fn record_loss(
    tape: &mut Tape,
    b: &Bindings,
    model: &ModelConfig,
    cfg: &TrainConfig,
    ex: &TrainExample,
) -> Result<RecordedLoss> {
    record_loss_inner(tape, b, model, cfg, ex, None)
}

/// [`record_loss`] with the sampled indices fixed to `plans` (one per matrix
/// direction, as returned in [`RecordedLoss::plans`]) instead of chosen from
/// the current probabilities.
pub fn record_loss_with_plans(
    tape: &mut Tape,
    b: &Bindings,
    model: &ModelConfig,
    cfg: &TrainConfig,
    ex: &TrainExample,
    plans: &[SamplePlan],
) -> Result<RecordedLoss> {
    record_loss_inner(tape, b, model, cfg, ex, Some(plans))
}

fn record_loss_inner(
    tape: &mut Tape,
    b: &Bindings,
    model: &ModelConfig,
    cfg: &TrainConfig,
    ex: &TrainExample,
    plans: Option<&[SamplePlan]>,
) -> Result<RecordedLoss> {
    let enc = encode_on(tape, b, &model.encoder, &ex.question, &ex.passage)?;
    record_head_loss(tape, b, model, cfg, &enc, ex.span, plans)
}

/// The head and loss part of [`record_loss`], on an already recorded
/// encoding. `plans` fixes the sampled indices as in
/// [`record_loss_with_plans`].
pub fn record_head_loss(
    tape: &mut Tape,
    b: &Bindings,
    model: &ModelConfig,
    cfg: &TrainConfig,
    enc: &EncodedVars,
    span: Span,
    plans: Option<&[SamplePlan]>,
) -> Result<RecordedLoss> {
    if let Some(plans) = plans {
        let sampled = if cfg.matrix == MatrixLoss::Sampled {
            model.map_heads().len()
        } else {
            0
        };
        if plans.len() != sampled {
            return Err(Error::invalid(format!(
                "{} fixed plans for a model with {sampled} sampled directions",
                plans.len()
            )));
        }
    }
    let n = enc.passage_len(tape);
    if span.start > span.end || span.end >= n {
        return Err(Error::Index {
            index: span.end,
            len: n,
        });
    }
    let terms = match model.head {
        HeadKind::Ind => {
            let (ps, pe) = model.ind().forward(tape, b, enc)?;
            vec![pair_terms(tape, ps, pe, span)?]
        }
        HeadKind::Vcp => {
            let (ps, pe) = model.vcp().forward(tape, b, enc)?;
            vec![pair_terms(tape, ps, pe, span)?]
        }
        HeadKind::Map => model
            .map_heads()
            .iter()
            .enumerate()
            .map(|(i, head)| map_terms(tape, b, head, cfg, enc, span, plans.map(|p| &p[i])))
            .collect::<Result<Vec<_>>>()?,
    };

    let scale = 1.0 / terms.len() as f64;
    let mut parts = Vec::with_capacity(terms.len());
    let mut l_s = None;
    let mut l_e = None;
    let mut clamped = 0;
    let mut used = Vec::new();
    for t in &terms {
        parts.push(LossBreakdown::new(
            tape.value(t.start).data()[0],
            tape.value(t.end).data()[0],
        ));
        l_s = Some(match l_s {
            None => t.start,
            Some(acc) => tape.add(acc, t.start)?,
        });
        l_e = Some(match l_e {
            None => t.end,
            Some(acc) => tape.add(acc, t.end)?,
        });
        clamped += t.clamped;
        used.extend(t.plan.clone());
    }
    let sum = tape.add(l_s.expect("one term"), l_e.expect("one term"))?;
    let root = tape.affine(sum, 0.5 * scale, 0.0);
    Ok(RecordedLoss {
        root,
        breakdown: LossBreakdown::mean(&parts),
        clamped,
        plans: used,
    })
}

fn pair_terms(tape: &mut Tape, ps: Var, pe: Var, span: Span) -> Result<Terms> {
    let ls = tape.nll(ps, span.start)?;
    let le = tape.nll(pe, span.end)?;
    Ok(Terms {
        start: ls.loss,
        end: le.loss,
        clamped: ls.clamped as usize + le.clamped as usize,
        plan: None,
    })
}

fn map_terms(
    tape: &mut Tape,
    b: &Bindings,
    head: &MapHead,
    cfg: &TrainConfig,
    enc: &EncodedVars,
    span: Span,
    fixed: Option<&SamplePlan>,
) -> Result<Terms> {
    let (first, second) = head.direction.order(span.start, span.end);
    let p_first = head.first_probs(tape, b, enc)?;
    let l_first = tape.nll(p_first, first)?;
    let ctx = head.context(tape, b, enc.h)?;
    let mut used = None;
    let l_second = match cfg.matrix {
        MatrixLoss::Full => {
            guard_full_matrix(ctx.passage_len(), cfg.max_sequence)?;
            // Under a one-hot target only the gold row of the full matrix
            // enters the loss.
            let row = head.row_probs(tape, b, &ctx, first, &enc.valid)?;
            tape.nll(row, second)?
        }
        MatrixLoss::Sampled => {
            let plan = match fixed {
                Some(plan) => {
                    check_plan(plan, first, second)?;
                    plan.clone()
                }
                None => {
                    let pf =
                        ProbVector::new(tape.value(p_first).data().to_vec(), enc.valid.clone())?;
                    plan_sample(tape, b, head, &ctx, &pf, first, second, cfg)?
                }
            };
            let (r, c) = plan.truth_cell;
            match cfg.norm_mode {
                NormMode::RowWise => {
                    let logits = head.row_logits(tape, b, &ctx, first, Some(&plan.cols[r]))?;
                    let probs = tape.masked_softmax(logits, None)?;
                    let nll = tape.nll(probs, c)?;
                    used = Some(plan);
                    nll
                }
                NormMode::JointFlat => {
                    let rows = plan
                        .rows
                        .iter()
                        .zip(&plan.cols)
                        .map(|(&i, cols)| head.row_logits(tape, b, &ctx, i, Some(cols)))
                        .collect::<Result<Vec<_>>>()?;
                    let grid = tape.stack_rows(&rows)?;
                    let flat = tape.reshape(grid, &[plan.num_cells()])?;
                    let probs = tape.masked_softmax(flat, None)?;
                    let nll = tape.nll(probs, plan.truth_flat())?;
                    used = Some(plan);
                    nll
                }
            }
        }
    };
    let clamped = l_first.clamped as usize + l_second.clamped as usize;
    let (start, end) = match head.direction {
        Direction::Forward => (l_first.loss, l_second.loss),
        Direction::Backward => (l_second.loss, l_first.loss),
    };
    Ok(Terms {
        start,
        end,
        clamped,
        plan: used,
    })
}

fn check_plan(plan: &SamplePlan, first: usize, second: usize) -> Result<()> {
    let (r, c) = plan.truth_cell;
    let ok = plan.rows.len() == plan.cols.len()
        && plan.rows.get(r) == Some(&first)
        && plan.cols[r].get(c) == Some(&second);
    if ok {
        Ok(())
    } else {
        Err(Error::invalid("fixed sample plan does not contain the gold cell"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::sampling::normalize_sampled;

    #[test]
    fn start_loss_examples() {
        let p = ProbVector::unmasked(vec![0.5, 0.25, 0.25]);
        assert!((loss_start(&p, 0).unwrap().0 - 2f64.ln()).abs() < 1e-15);
        let one = ProbVector::unmasked(vec![0.0, 1.0]);
        assert_eq!(loss_start(&one, 1).unwrap(), (0.0, false));
        let (l, flagged) = loss_start(&one, 0).unwrap();
        assert!(flagged && l.is_finite() && l > 60.0);
    }

    #[test]
    fn uniform_sampled_losses() {
        let logits = vec![vec![0.0; 2]; 2];
        for (mode, want) in [(NormMode::JointFlat, 4f64.ln()), (NormMode::RowWise, 2f64.ln())] {
            let sm = SampledMatrix {
                row_indices: vec![0, 1],
                col_indices: vec![vec![0, 1]; 2],
                probs: normalize_sampled(&logits, mode).unwrap(),
                logits: logits.clone(),
                truth_cell: (1, 0),
                norm_mode: mode,
            };
            assert!((loss_end_sampled(&sm).0 - want).abs() < 1e-15);
        }
    }

    #[test]
    fn total_is_the_mean() {
        assert_eq!(total_loss(0.0, 0.0), 0.0);
        let l2 = 2f64.ln();
        assert_eq!(total_loss(l2, l2), l2);
        assert_eq!(total_loss(2.0 * 0.3, 2.0 * 0.7), 2.0 * total_loss(0.3, 0.7));
    }
}
