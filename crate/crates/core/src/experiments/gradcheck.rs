use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, Bindings, ParameterSet, Tape, Tensor, DEFAULT_STEP};
use crate::data::Span;
use crate::encoder::{EncodedVars, EncoderConfig};
use crate::error::Result;
use crate::model::{Directions, HeadKind, ModelConfig};
use crate::trainer::{record_head_loss, NormMode, SamplePlan, TrainConfig};

/// One head/loss/normalisation combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckCase {
    pub name: String,
    pub head: HeadKind,
    pub directions: Directions,
    pub norm_mode: NormMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRow {
    pub name: String,
    pub max_relative_error: f64,
    pub coordinates: usize,
    /// `param[index]` of the worst coordinate.
    pub worst: Option<String>,
    pub passed: bool,
}

/// `ind`, `vcp` and the matrix head in both norm modes and both directions.
pub fn gradcheck_cases() -> Vec<GradCheckCase> {
    let mut cases = vec![
        GradCheckCase {
            name: "ind".into(),
            head: HeadKind::Ind,
            directions: Directions::Forward,
            norm_mode: NormMode::JointFlat,
        },
        GradCheckCase {
            name: "vcp".into(),
            head: HeadKind::Vcp,
            directions: Directions::Forward,
            norm_mode: NormMode::JointFlat,
        },
    ];
    for (mode, mode_name) in [(NormMode::JointFlat, "joint-flat"), (NormMode::RowWise, "row-wise")] {
        for (dir, dir_name) in [(Directions::Forward, "forward"), (Directions::Backward, "backward")] {
            cases.push(GradCheckCase {
                name: format!("map-{mode_name}-{dir_name}"),
                head: HeadKind::Map,
                directions: dir,
                norm_mode: mode,
            });
        }
    }
    cases
}

const D: usize = 3;
const PASSAGE: usize = 8;
const QUESTION: usize = 3;
const HEAD_SCALE: f64 = 0.8;

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Checks each case's training loss on a random `n = 8` instance, with `H`
/// and `H_Q` treated as parameters alongside the head's own. Matrix cases
/// use `k = 3`; their sampled indices are chosen once at the unperturbed
/// point and then held fixed.
pub fn gradcheck_suite(tolerance: f64, seed: u64) -> Result<Vec<GradCheckRow>> {
    let mut rows = Vec::new();
    for (i, case) in gradcheck_cases().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(i as u64));
        let config = ModelConfig {
            directions: case.directions,
            ..ModelConfig::new(
                EncoderConfig {
                    hidden: D,
                    ..EncoderConfig::default()
                },
                case.head,
            )
        };
        let mut params = ParameterSet::new();
        match case.head {
            HeadKind::Ind => config.ind().init(&mut params, HEAD_SCALE, &mut rng)?,
            HeadKind::Vcp => config.vcp().init(&mut params, HEAD_SCALE, &mut rng)?,
            HeadKind::Map => {
                for head in config.map_heads() {
                    head.init(&mut params, HEAD_SCALE, &mut rng)?;
                }
            }
        }
        params.insert("h", random_matrix(PASSAGE, D, &mut rng)?)?;
        params.insert("h_q", random_matrix(QUESTION, D, &mut rng)?)?;
        let start = rng.gen_range(0..PASSAGE - 2);
        let span = Span::new(start, start + rng.gen_range(0..3));
        let cfg = TrainConfig {
            sample_k: 3,
            norm_mode: case.norm_mode,
            ..TrainConfig::default()
        };

        let loss = |tape: &mut Tape, b: &Bindings, plans: Option<&[SamplePlan]>| {
            let enc = EncodedVars {
                h: b.get("h")?,
                h_q: b.get("h_q")?,
                valid: vec![true; PASSAGE],
            };
            record_head_loss(tape, b, &config, &cfg, &enc, span, plans)
        };
        let plans = {
            let mut tape = Tape::new();
            let b = tape.bind(&params);
            loss(&mut tape, &b, None)?.plans
        };
        let fixed = (!plans.is_empty()).then_some(plans.as_slice());
        let report = grad_check(|tape, b| Ok(loss(tape, b, fixed)?.root), &params, DEFAULT_STEP)?;
        rows.push(GradCheckRow {
            name: case.name,
            max_relative_error: report.max_relative_error,
            coordinates: report.coordinates,
            worst: report.worst.map(|(p, i)| format!("{p}[{i}]")),
            passed: report.max_relative_error < tolerance,
        });
    }
    Ok(rows)
}
