use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{evaluate, generate_needle_task, EvalReport, LengthBins, NeedleConfig, QAExample};
use crate::encoder::{EncoderConfig, EncoderKind, Vocabulary};
use crate::error::{Error, Result};
use crate::inference::{predict_all, spans_of, SearchConfig, Strategy};
use crate::model::{Directions, HeadKind, Model, ModelConfig};
use crate::trainer::{evaluate_loss, train, MatrixLoss, TrainConfig, TrainExample, TrainLog, Trainer};

/// Encoder used for the needle-task experiments; sizes that depend on the
/// data are filled in by [`NeedleSetup::encoder_config`].
pub fn reference_encoder() -> EncoderConfig {
    EncoderConfig {
        hidden: 32,
        embed: 32,
        kind: EncoderKind::AttentiveRecurrent,
        seed: 7,
        match_feature: true,
        ..EncoderConfig::default()
    }
}

/// Optimiser settings for the needle-task experiments.
pub fn reference_training() -> TrainConfig {
    TrainConfig {
        sample_k: 20,
        learning_rate: 3e-3,
        batch_size: 8,
        epochs: 20,
        seed: 1,
        ..TrainConfig::default()
    }
}

/// Train and dev splits of the needle task with their shared vocabulary.
#[derive(Clone, Debug)]
pub struct NeedleSetup {
    pub train: Vec<QAExample>,
    pub dev: Vec<QAExample>,
    pub vocab: Vocabulary,
    pub train_ids: Vec<TrainExample>,
}

impl NeedleSetup {
    pub fn new(train: Vec<QAExample>, dev: Vec<QAExample>) -> Result<Self> {
        let vocab = Vocabulary::from_tokens(
            train
                .iter()
                .chain(&dev)
                .flat_map(|e| e.passage.iter().chain(&e.question)),
        );
        let train_ids = TrainExample::encode_all(&train, &vocab)?;
        Ok(Self {
            train,
            dev,
            vocab,
            train_ids,
        })
    }

    /// Generates both splits; the dev seed is `train.seed + 1`.
    pub fn generate(train: &NeedleConfig, dev_examples: usize) -> Result<Self> {
        let dev = NeedleConfig {
            num_examples: dev_examples,
            seed: train.seed + 1,
            ..train.clone()
        };
        Self::new(generate_needle_task(train)?, generate_needle_task(&dev)?)
    }

    /// Packed length of the longest example in either split.
    pub fn max_packed_len(&self) -> usize {
        self.train
            .iter()
            .chain(&self.dev)
            .map(|e| e.question.len() + 1 + e.passage.len())
            .max()
            .unwrap_or(1)
    }

    /// `template` with the vocabulary size and sequence cap of this setup.
    pub fn encoder_config(&self, template: &EncoderConfig) -> EncoderConfig {
        EncoderConfig {
            vocab_size: self.vocab.len(),
            max_len: self.max_packed_len(),
            ..template.clone()
        }
    }

    pub fn dev_report(&self, model: &Model, strategy: Strategy, search: &SearchConfig) -> Result<EvalReport> {
        let preds = predict_all(model, &self.vocab, &self.dev, strategy, search)?;
        evaluate(&spans_of(&preds), &self.dev, &LengthBins::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub steps: usize,
    /// Mean `L` over the epoch's steps.
    pub train_loss: f64,
    pub dev_em: f64,
    pub dev_f1: f64,
    pub wall_s: f64,
}

/// Trains for `cfg.epochs`, scoring the dev split with `strategy` after
/// every epoch. Dev scoring time is excluded from `wall_s`.
pub fn train_with_dev(
    model: Model,
    setup: &NeedleSetup,
    cfg: &TrainConfig,
    strategy: Strategy,
    search: &SearchConfig,
) -> Result<(Model, TrainLog, Vec<EpochReport>)> {
    train_with_dev_until(model, setup, cfg, strategy, search, |_| false)
}

/// [`train_with_dev`], calling `stop` with each epoch's report; training
/// ends early once it returns `true`.
pub fn train_with_dev_until(
    model: Model,
    setup: &NeedleSetup,
    cfg: &TrainConfig,
    strategy: Strategy,
    search: &SearchConfig,
    mut stop: impl FnMut(&EpochReport) -> bool,
) -> Result<(Model, TrainLog, Vec<EpochReport>)> {
    strategy.check(&model)?;
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut train_s = 0.0;
    for epoch in 1..=cfg.epochs {
        let before = trainer.steps_taken();
        let t = Instant::now();
        trainer.run_epoch(&setup.train_ids, epoch)?;
        train_s += t.elapsed().as_secs_f64();
        let recs = &trainer.log.records[before..];
        let dev = setup.dev_report(&trainer.model, strategy, search)?;
        reports.push(EpochReport {
            epoch,
            steps: trainer.steps_taken(),
            train_loss: recs.iter().map(|r| r.l).sum::<f64>() / recs.len().max(1) as f64,
            dev_em: dev.em,
            dev_f1: dev.f1,
            wall_s: train_s,
        });
        if stop(reports.last().expect("just pushed")) {
            break;
        }
    }
    Ok((trainer.model, trainer.log, reports))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    pub em: f64,
    pub f1: f64,
    pub steps: usize,
    pub wall_s: f64,
}

/// One forward matrix-head run per `k`, identical otherwise.
pub fn k_sweep(setup: &NeedleSetup, model: &ModelConfig, cfg: &TrainConfig, ks: &[usize]) -> Result<Vec<KSweepRow>> {
    if model.head != HeadKind::Map {
        return Err(Error::Config("the k sweep needs a matrix head".into()));
    }
    let search = SearchConfig::default();
    ks.iter()
        .map(|&k| {
            let cfg = TrainConfig {
                sample_k: k,
                matrix: MatrixLoss::Sampled,
                ..cfg.clone()
            };
            let strategy = Strategy::default_for(&Model::init(model.clone())?);
            let (_, log, reports) = train_with_dev(Model::init(model.clone())?, setup, &cfg, strategy, &search)?;
            let last = reports.last().ok_or_else(|| Error::Config("zero epochs".into()))?;
            Ok(KSweepRow {
                k,
                em: last.dev_em,
                f1: last.dev_f1,
                steps: log.records.len(),
                wall_s: last.wall_s,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub step: usize,
    /// Full-matrix loss on the probe set; `None` once the full run's budget
    /// is spent.
    pub full: Option<f64>,
    pub sampled: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub curve: Vec<ConvergencePoint>,
    pub full_steps: usize,
    pub full_final: f64,
    /// First evaluated step at which the sampled run came within
    /// `tolerance` of `full_final`.
    pub sampled_steps_to_match: Option<usize>,
    pub tolerance: f64,
}

impl ConvergenceReport {
    /// Sampled training matched within at most twice the full run's steps.
    pub fn parity(&self) -> bool {
        self.sampled_steps_to_match
            .is_some_and(|s| s <= 2 * self.full_steps)
    }
}

/// Trains a full-matrix run for `full_steps` and a sampled run, from the
/// same initial parameters and batch order, for `2 × full_steps`. Both are
/// scored every `eval_every` steps with the full-matrix loss on the dev
/// split.
pub fn convergence(
    setup: &NeedleSetup,
    model: &ModelConfig,
    cfg: &TrainConfig,
    full_steps: usize,
    eval_every: usize,
    tolerance: f64,
) -> Result<ConvergenceReport> {
    if full_steps == 0 || eval_every == 0 {
        return Err(Error::invalid("convergence needs positive step counts"));
    }
    let probe = TrainExample::encode_all(&setup.dev, &setup.vocab)?;
    let scoring = TrainConfig {
        matrix: MatrixLoss::Full,
        ..cfg.clone()
    };
    let run = |matrix: MatrixLoss, steps: usize| -> Result<Vec<(usize, f64)>> {
        let cfg = TrainConfig { matrix, ..cfg.clone() };
        let mut trainer = Trainer::new(Model::init(model.clone())?, cfg)?;
        let mut curve = vec![(0, evaluate_loss(&trainer.model, &probe, &scoring)?.l)];
        let mut epoch = 0;
        'outer: loop {
            epoch += 1;
            let order = trainer.epoch_order(setup.train_ids.len());
            for chunk in order.chunks(trainer.cfg.batch_size) {
                let batch: Vec<TrainExample> = chunk.iter().map(|&i| setup.train_ids[i].clone()).collect();
                trainer.step(&batch, epoch)?;
                let done = trainer.steps_taken();
                if done % eval_every == 0 || done == steps {
                    curve.push((done, evaluate_loss(&trainer.model, &probe, &scoring)?.l));
                }
                if done == steps {
                    break 'outer;
                }
            }
        }
        Ok(curve)
    };
    let full = run(MatrixLoss::Full, full_steps)?;
    let sampled = run(MatrixLoss::Sampled, 2 * full_steps)?;
    let full_final = full.last().expect("evaluated at least once").1;
    let target = full_final * (1.0 + tolerance);
    let sampled_steps_to_match = sampled
        .iter()
        .find(|&&(_, l)| l <= target)
        .map(|&(s, _)| s);
    let curve = sampled
        .iter()
        .map(|&(step, l)| ConvergencePoint {
            step,
            full: full.iter().find(|&&(s, _)| s == step).map(|&(_, l)| l),
            sampled: l,
        })
        .collect();
    Ok(ConvergenceReport {
        curve,
        full_steps,
        full_final,
        sampled_steps_to_match,
        tolerance,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingRow {
    pub seed: u64,
    pub ind_em: f64,
    pub map_forward_em: f64,
    pub map_ensemble_em: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingSummary {
    pub rows: Vec<OrderingRow>,
    pub mean_ind: f64,
    pub mean_forward: f64,
    pub mean_ensemble: f64,
}

impl OrderingSummary {
    /// `EM(ensemble) ≥ EM(forward)` and `EM(forward) ≥ EM(ind) − 1`.
    pub fn holds(&self) -> bool {
        self.mean_ensemble >= self.mean_forward && self.mean_forward >= self.mean_ind - 1.0
    }
}

/// Per seed: an independent-head model, a forward matrix model and a
/// two-direction matrix model, all with the same encoder and training
/// budget. The seed drives both initialisation and batch order.
pub fn strategy_ordering(
    setup: &NeedleSetup,
    encoder: &EncoderConfig,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<OrderingSummary> {
    if seeds.is_empty() {
        return Err(Error::invalid("no seeds"));
    }
    let search = SearchConfig::default();
    let em = |head: HeadKind, directions: Directions, seed: u64| -> Result<f64> {
        let config = ModelConfig {
            directions,
            ..ModelConfig::new(EncoderConfig { seed, ..encoder.clone() }, head)
        };
        let model = Model::init(config)?;
        let strategy = Strategy::default_for(&model);
        let cfg = TrainConfig { seed, ..cfg.clone() };
        let (model, _) = train(model, &setup.train_ids, &cfg)?;
        Ok(setup.dev_report(&model, strategy, &search)?.em)
    };
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        rows.push(OrderingRow {
            seed,
            ind_em: em(HeadKind::Ind, Directions::Forward, seed)?,
            map_forward_em: em(HeadKind::Map, Directions::Forward, seed)?,
            map_ensemble_em: em(HeadKind::Map, Directions::Both, seed)?,
        });
    }
    let mean = |f: fn(&OrderingRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    Ok(OrderingSummary {
        mean_ind: mean(|r| r.ind_em),
        mean_forward: mean(|r| r.map_forward_em),
        mean_ensemble: mean(|r| r.map_ensemble_em),
        rows,
    })
}
