//! Browser demo over a randomly initialised matrix head: its conditional
//! matrix, the cells one training step samples from it, and a single
//! descent step on sampled logits.
//!
//! Each view is a plain function returning a serialisable struct; the
//! `*_json` exports wrap them for JavaScript.

use mapspan::autodiff::{ParameterSet, Tensor};
use mapspan::encoder::EncoderOutput;
use mapspan::heads::{map_first, map_full_matrix, Direction, FirstPosition, MapHead};
use mapspan::inference::{search_matrix, top_k_pairs, SearchConfig, SpanPrediction};
use mapspan::trainer::{build_sampled_matrix, gradient_direction_probe, NormMode, ProbeReport, TrainConfig};
use mapspan::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Width of the random passage states.
const D: usize = 8;
/// Longest passage the explorer will draw.
pub const MAX_N: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Pair {
    pub s: usize,
    pub e: usize,
    pub score: f64,
}

impl From<SpanPrediction> for Pair {
    fn from(p: SpanPrediction) -> Self {
        Self {
            s: p.s,
            e: p.e,
            score: p.score,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MatrixView {
    pub n: usize,
    pub forward: bool,
    /// Distribution over the first-chosen position.
    pub first: Vec<f64>,
    /// Row `i`: distribution of the second position given the first is `i`.
    pub matrix: Vec<Vec<f64>>,
    pub best: Pair,
    pub top: Vec<Pair>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SampleView {
    pub n: usize,
    pub k: usize,
    pub row_indices: Vec<usize>,
    pub col_indices: Vec<Vec<usize>>,
    pub probs: Vec<Vec<f64>>,
    pub truth_cell: (usize, usize),
    pub sampled_cells: usize,
    pub full_cells: usize,
    /// `-log` of the gold cell's sampled probability.
    pub loss: f64,
}

struct Instance {
    enc: EncoderOutput,
    params: ParameterSet,
    head: MapHead,
}

fn instance(n: usize, seed: u64, sharpness: f64, forward: bool) -> Result<Instance> {
    if n == 0 || n > MAX_N {
        return Err(mapspan::Error::InvalidArgument(format!("passage length must be 1..={MAX_N}, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random = |rows: usize| {
        Tensor::matrix(rows, D, (0..rows * D).map(|_| rng.gen_range(-1.0..1.0)).collect())
    };
    let enc = EncoderOutput::new(random(n)?, random(3)?);
    let head = MapHead {
        direction: if forward { Direction::Forward } else { Direction::Backward },
        first: FirstPosition::Linear,
        d: D,
        l: D,
    };
    let mut params = ParameterSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    head.init(&mut params, sharpness, &mut rng)?;
    Ok(Instance { enc, params, head })
}

/// Full conditional matrix and the best pairs under a span-length cap
/// (`0` for none).
pub fn explore_matrix(
    n: usize,
    seed: u64,
    sharpness: f64,
    forward: bool,
    max_span_len: usize,
    top_k: usize,
) -> Result<MatrixView> {
    let inst = instance(n, seed, sharpness, forward)?;
    let first = map_first(&inst.enc, &inst.head, &inst.params)?;
    let cond = map_full_matrix(&inst.enc, &inst.head, &inst.params, MAX_N)?;
    let cfg = SearchConfig {
        max_span_len: (max_span_len > 0).then_some(max_span_len),
        ensemble_k: top_k.max(1),
    };
    let best = search_matrix(&first, &cond, inst.head.direction, &cfg)?;
    let top = top_k_pairs(&first, &cond, inst.head.direction, &cfg)?;
    Ok(MatrixView {
        n,
        forward,
        matrix: (0..cond.rows).map(|r| cond.row(r).to_vec()).collect(),
        first: first.probs,
        best: best.into(),
        top: top.into_iter().map(Pair::from).collect(),
    })
}

/// The `k×k` cells a training step on gold span `(s, e)` keeps.
#[allow(clippy::too_many_arguments)]
pub fn sample_view(
    n: usize,
    seed: u64,
    sharpness: f64,
    forward: bool,
    k: usize,
    s: usize,
    e: usize,
    row_wise: bool,
    shared_columns: bool,
) -> Result<SampleView> {
    if s > e {
        return Err(mapspan::Error::InvalidArgument(format!("start {s} is after end {e}")));
    }
    let inst = instance(n, seed, sharpness, forward)?;
    let first = map_first(&inst.enc, &inst.head, &inst.params)?;
    let (a, b) = inst.head.direction.order(s, e);
    let cfg = TrainConfig {
        sample_k: k,
        norm_mode: if row_wise { NormMode::RowWise } else { NormMode::JointFlat },
        shared_columns,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let sm = build_sampled_matrix(&inst.enc, &inst.head, &inst.params, &first, a, b, &cfg)?;
    let (tr, tc) = sm.truth_cell;
    Ok(SampleView {
        n,
        k: sm.row_indices.len(),
        sampled_cells: sm.num_cells(),
        full_cells: n * n,
        loss: -sm.probs[tr][tc].ln(),
        row_indices: sm.row_indices,
        col_indices: sm.col_indices,
        probs: sm.probs,
        truth_cell: sm.truth_cell,
    })
}

/// One descent step on a random `k×k` logit matrix with every cell
/// sampled. `dominant` lifts one non-gold cell well above the rest.
pub fn probe(k: usize, seed: u64, row: usize, col: usize, lr: f64, dominant: bool) -> Result<ProbeReport> {
    if !(2..=20).contains(&k) {
        return Err(mapspan::Error::InvalidArgument(format!("k must be 2..=20, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<f64> = (0..k * k).map(|_| rng.gen_range(-2.0..2.0)).collect();
    if dominant {
        let gold = row * k + col;
        let other = (gold + 1 + rng.gen_range(0..k * k - 1)) % (k * k);
        data[other] = 6.0;
    }
    gradient_direction_probe(&Tensor::matrix(k, k, data)?, (row, col), lr)
}

fn to_js<T: Serialize>(v: Result<T>) -> std::result::Result<String, JsError> {
    let v = v.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn explore_matrix_json(
    n: usize,
    seed: u32,
    sharpness: f64,
    forward: bool,
    max_span_len: usize,
    top_k: usize,
) -> std::result::Result<String, JsError> {
    to_js(explore_matrix(n, seed.into(), sharpness, forward, max_span_len, top_k))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn sample_view_json(
    n: usize,
    seed: u32,
    sharpness: f64,
    forward: bool,
    k: usize,
    s: usize,
    e: usize,
    row_wise: bool,
    shared_columns: bool,
) -> std::result::Result<String, JsError> {
    to_js(sample_view(n, seed.into(), sharpness, forward, k, s, e, row_wise, shared_columns))
}

#[wasm_bindgen]
pub fn probe_json(k: usize, seed: u32, row: usize, col: usize, lr: f64, dominant: bool) -> std::result::Result<String, JsError> {
    to_js(probe(k, seed.into(), row, col, lr, dominant))
}
