//! Span search over head outputs and the forward/backward ensemble.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{QAExample, Span};
use crate::encoder::{encode, Vocabulary};
use crate::error::{Error, Result};
use crate::heads::{ind_head, map_first, map_full_matrix, vcp_head, Direction, ProbMatrix, ProbVector};
use crate::model::{HeadKind, Model};
use crate::trainer::thread_pool;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub s: usize,
    pub e: usize,
    /// Joint probability of the span.
    pub score: f64,
    pub direction: Direction,
}

impl SpanPrediction {
    pub fn span(&self) -> Span {
        Span::new(self.s, self.e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    /// Longest span in tokens; `None` for no limit.
    pub max_span_len: Option<usize>,
    pub ensemble_k: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            max_span_len: None,
            ensemble_k: 20,
        }
    }
}

impl SearchConfig {
    /// 30-token cap used for natural text.
    pub fn squad() -> Self {
        Self {
            max_span_len: Some(30),
            ..Self::default()
        }
    }

    fn allows(&self, s: usize, e: usize) -> bool {
        s <= e && self.max_span_len.is_none_or(|m| e - s < m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_span_len == Some(0) || self.ensemble_k == 0 {
            return Err(Error::Config(format!("invalid search settings {self:?}")));
        }
        Ok(())
    }
}

/// Higher score first, then smaller start, then smaller end.
fn rank(a: &SpanPrediction, b: &SpanPrediction) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.s.cmp(&b.s))
        .then(a.e.cmp(&b.e))
}

fn best_of<F: Fn(usize, usize) -> f64>(
    n: usize,
    cfg: &SearchConfig,
    direction: Direction,
    score: F,
) -> Result<SpanPrediction> {
    let mut best: Option<SpanPrediction> = None;
    for s in 0..n {
        for e in s..n {
            if !cfg.allows(s, e) {
                break;
            }
            let cand = SpanPrediction {
                s,
                e,
                score: score(s, e),
                direction,
            };
            // Visiting order is (s, e) ascending, so only a strictly better
            // score replaces the incumbent.
            if best.is_none_or(|b| cand.score > b.score) {
                best = Some(cand);
            }
        }
    }
    best.ok_or_else(|| Error::invalid("span search over an empty passage"))
}

/// `argmax p_s[i] · p_e[j]` over `i ≤ j` within the length cap.
pub fn search_vector(p_s: &ProbVector, p_e: &ProbVector, cfg: &SearchConfig) -> Result<SpanPrediction> {
    if p_s.len() != p_e.len() {
        return Err(Error::dim("search_vector", &[p_s.len()], &[p_e.len()]));
    }
    best_of(p_s.len(), cfg, Direction::Forward, |s, e| p_s.probs[s] * p_e.probs[e])
}

fn matrix_score<'a>(
    p_first: &'a ProbVector,
    cond: &'a ProbMatrix,
    direction: Direction,
) -> Result<impl Fn(usize, usize) -> f64 + 'a> {
    let n = p_first.len();
    if cond.rows != n || cond.cols != n {
        return Err(Error::dim("search_matrix", &[n, n], &[cond.rows, cond.cols]));
    }
    Ok(move |s: usize, e: usize| {
        let (first, second) = direction.order(s, e);
        p_first.probs[first] * cond.at(first, second)
    })
}

/// Forward: `argmax p_s[i] · P_e[i, j]`; backward: `argmax p_e[j] · P_s[j, i]`;
/// both over `i ≤ j` within the length cap.
pub fn search_matrix(
    p_first: &ProbVector,
    cond: &ProbMatrix,
    direction: Direction,
    cfg: &SearchConfig,
) -> Result<SpanPrediction> {
    let score = matrix_score(p_first, cond, direction)?;
    best_of(p_first.len(), cfg, direction, score)
}

/// The `cfg.ensemble_k` best feasible spans, best first.
pub fn top_k_pairs(
    p_first: &ProbVector,
    cond: &ProbMatrix,
    direction: Direction,
    cfg: &SearchConfig,
) -> Result<Vec<SpanPrediction>> {
    let score = matrix_score(p_first, cond, direction)?;
    let n = p_first.len();
    let mut all = Vec::new();
    for s in 0..n {
        for e in s..n {
            if !cfg.allows(s, e) {
                break;
            }
            all.push(SpanPrediction {
                s,
                e,
                score: score(s, e),
                direction,
            });
        }
    }
    all.sort_by(rank);
    all.truncate(cfg.ensemble_k);
    Ok(all)
}

/// Drops from `backward` every span already in `forward`, then returns the
/// best of what remains. Ties prefer forward, then smaller `(s, e)`.
pub fn ensemble(forward: &[SpanPrediction], backward: &[SpanPrediction]) -> Result<SpanPrediction> {
    if forward.is_empty() {
        return Err(Error::invalid("ensemble needs at least one forward candidate"));
    }
    let seen: HashSet<(usize, usize)> = forward.iter().map(|p| (p.s, p.e)).collect();
    let pruned = backward.iter().filter(|p| !seen.contains(&(p.s, p.e)));
    let order = |p: &SpanPrediction| (p.direction == Direction::Backward, p.s, p.e);
    forward
        .iter()
        .chain(pruned)
        .copied()
        .min_by(|a, b| b.score.total_cmp(&a.score).then(order(a).cmp(&order(b))))
        .ok_or_else(|| Error::invalid("no candidates"))
}

/// How a trained model turns its head outputs into one span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Ind,
    Vcp,
    MapForward,
    MapBackward,
    MapEnsemble,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ind" => Ok(Self::Ind),
            "vcp" => Ok(Self::Vcp),
            "map-forward" => Ok(Self::MapForward),
            "map-backward" => Ok(Self::MapBackward),
            "map-ensemble" => Ok(Self::MapEnsemble),
            _ => Err(Error::Config(format!(
                "unknown strategy `{s}` (ind, vcp, map-forward, map-backward, map-ensemble)"
            ))),
        }
    }
}

impl Strategy {
    /// The natural strategy for a model's head and directions.
    pub fn default_for(model: &Model) -> Self {
        use crate::model::Directions;
        match (model.config.head, model.config.directions) {
            (HeadKind::Ind, _) => Self::Ind,
            (HeadKind::Vcp, _) => Self::Vcp,
            (HeadKind::Map, Directions::Forward) => Self::MapForward,
            (HeadKind::Map, Directions::Backward) => Self::MapBackward,
            (HeadKind::Map, Directions::Both) => Self::MapEnsemble,
        }
    }

    /// Config error unless `model` carries what this strategy needs.
    pub fn check(self, model: &Model) -> Result<()> {
        let cfg = &model.config;
        let ok = match self {
            Self::Ind => cfg.head == HeadKind::Ind,
            Self::Vcp => cfg.head == HeadKind::Vcp,
            Self::MapForward => cfg.head == HeadKind::Map && cfg.directions.contains(Direction::Forward),
            Self::MapBackward => cfg.head == HeadKind::Map && cfg.directions.contains(Direction::Backward),
            Self::MapEnsemble => {
                cfg.head == HeadKind::Map
                    && cfg.directions.contains(Direction::Forward)
                    && cfg.directions.contains(Direction::Backward)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "strategy {self:?} does not fit a {:?} head with {:?} directions",
                cfg.head, cfg.directions
            )))
        }
    }
}

/// Best span for one question/passage pair.
pub fn predict(
    model: &Model,
    question: &[usize],
    passage: &[usize],
    strategy: Strategy,
    cfg: &SearchConfig,
) -> Result<SpanPrediction> {
    strategy.check(model)?;
    let enc = encode(question, passage, &model.params, &model.config.encoder)?;
    let n = enc.passage_len();
    let matrix = |direction: Direction| -> Result<(ProbVector, ProbMatrix)> {
        let head = model.config.map(direction);
        Ok((
            map_first(&enc, &head, &model.params)?,
            map_full_matrix(&enc, &head, &model.params, n)?,
        ))
    };
    match strategy {
        Strategy::Ind => {
            let (ps, pe) = ind_head(&enc, &model.params)?;
            search_vector(&ps, &pe, cfg)
        }
        Strategy::Vcp => {
            let (ps, pe) = vcp_head(&enc, &model.params)?;
            search_vector(&ps, &pe, cfg)
        }
        Strategy::MapForward | Strategy::MapBackward => {
            let dir = if strategy == Strategy::MapForward {
                Direction::Forward
            } else {
                Direction::Backward
            };
            let (p, m) = matrix(dir)?;
            search_matrix(&p, &m, dir, cfg)
        }
        Strategy::MapEnsemble => {
            let (pf, mf) = matrix(Direction::Forward)?;
            let (pb, mb) = matrix(Direction::Backward)?;
            let f = top_k_pairs(&pf, &mf, Direction::Forward, cfg)?;
            let b = top_k_pairs(&pb, &mb, Direction::Backward, cfg)?;
            ensemble(&f, &b)
        }
    }
}

/// Predictions for every example, keyed by id.
pub fn predict_all(
    model: &Model,
    vocab: &Vocabulary,
    data: &[QAExample],
    strategy: Strategy,
    cfg: &SearchConfig,
) -> Result<BTreeMap<String, SpanPrediction>> {
    strategy.check(model)?;
    cfg.validate()?;
    let pool = thread_pool()?;
    let preds: Vec<Result<(String, SpanPrediction)>> = pool.install(|| {
        data.par_iter()
            .map(|ex| {
                let q = vocab.encode(&ex.question);
                let p = vocab.encode(&ex.passage);
                Ok((ex.id.clone(), predict(model, &q, &p, strategy, cfg)?))
            })
            .collect()
    });
    preds.into_iter().collect()
}

/// Spans only, for [`crate::data::evaluate`].
pub fn spans_of(preds: &BTreeMap<String, SpanPrediction>) -> BTreeMap<String, Span> {
    preds.iter().map(|(k, v)| (k.clone(), v.span())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(p: &[f64]) -> ProbVector {
        ProbVector::unmasked(p.to_vec())
    }

    #[test]
    fn vector_search_examples() {
        let cfg = SearchConfig::default();
        let p = search_vector(&pv(&[1.0, 0.0, 0.0]), &pv(&[0.0, 0.0, 1.0]), &cfg).unwrap();
        assert_eq!((p.s, p.e, p.score), (0, 2, 1.0));
        let p = search_vector(&pv(&[1.0]), &pv(&[1.0]), &cfg).unwrap();
        assert_eq!((p.s, p.e), (0, 0));
    }

    #[test]
    fn matrix_search_examples() {
        let cfg = SearchConfig::default();
        let ps = pv(&[0.6, 0.3, 0.1]);
        let pe = ProbMatrix::unmasked(3, 3, vec![0.1, 0.7, 0.2, 0.0, 0.5, 0.5, 0.1, 0.1, 0.8])
            .unwrap();
        let p = search_matrix(&ps, &pe, Direction::Forward, &cfg).unwrap();
        assert_eq!((p.s, p.e), (0, 1));
        assert!((p.score - 0.42).abs() < 1e-15);

        let diag = ProbMatrix::unmasked(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let p = search_matrix(&pv(&[0.0, 1.0, 0.0]), &diag, Direction::Forward, &cfg).unwrap();
        assert_eq!((p.s, p.e), (1, 1));

        let one = SearchConfig {
            ensemble_k: 1,
            ..cfg
        };
        let top = top_k_pairs(&ps, &pe, Direction::Forward, &one).unwrap();
        assert_eq!(top, vec![p_at(&ps, &pe)]);
    }

    fn p_at(ps: &ProbVector, pe: &ProbMatrix) -> SpanPrediction {
        search_matrix(ps, pe, Direction::Forward, &SearchConfig::default()).unwrap()
    }

    #[test]
    fn ensemble_prunes_duplicates() {
        let f = |s, e, score| SpanPrediction {
            s,
            e,
            score,
            direction: Direction::Forward,
        };
        let b = |s, e, score| SpanPrediction {
            s,
            e,
            score,
            direction: Direction::Backward,
        };
        let best = ensemble(&[f(1, 2, 0.4), f(0, 0, 0.1)], &[b(1, 2, 0.9), b(3, 3, 0.2)]).unwrap();
        assert_eq!(best, f(1, 2, 0.4));
        assert_eq!(ensemble(&[f(2, 2, 0.3)], &[]).unwrap(), f(2, 2, 0.3));
        assert_eq!(ensemble(&[f(2, 2, 0.3)], &[b(0, 1, 0.3)]).unwrap(), f(2, 2, 0.3));
        assert_eq!(ensemble(&[f(2, 2, 0.3)], &[b(0, 1, 0.5)]).unwrap(), b(0, 1, 0.5));
        assert!(ensemble(&[], &[b(0, 1, 0.5)]).is_err());
    }

    #[test]
    fn length_cap_is_respected() {
        let cfg = SearchConfig {
            max_span_len: Some(2),
            ..SearchConfig::default()
        };
        let p = search_vector(&pv(&[1.0, 0.0, 0.0]), &pv(&[0.0, 0.0, 1.0]), &cfg).unwrap();
        assert!(p.e - p.s < 2);
    }
}
