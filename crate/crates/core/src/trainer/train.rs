//! The training loop: shuffled mini-batches, per-example losses computed in
//! parallel, gradients reduced in example order, one Adam step per batch.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::config::TrainConfig;
use super::loss::{record_loss, LossBreakdown, TrainExample};
use crate::autodiff::{ParamGrads, Tape};
use crate::error::{Error, Result};
use crate::model::Model;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "MAP_SPAN_THREADS";

/// One optimizer step's mean batch loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    #[serde(rename = "L_s")]
    pub l_s: f64,
    #[serde(rename = "L_e")]
    pub l_e: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LossRecord>,
    /// Target probabilities that hit the log floor.
    pub clamped: usize,
}

impl TrainLog {
    /// `step,epoch,L_s,L_e,L,wall_ms`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Worker pool honouring [`THREADS_ENV`].
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={v} is not a positive count")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Resource(format!("worker pool: {e}")))
}

/// Loss and gradient of one example.
pub fn example_gradient(
    model: &Model,
    cfg: &TrainConfig,
    ex: &TrainExample,
) -> Result<(LossBreakdown, ParamGrads, usize)> {
    let mut tape = Tape::new();
    let b = tape.bind(&model.params);
    let rec = record_loss(&mut tape, &b, &model.config, cfg, ex)?;
    let grads = tape.backward(rec.root)?.collect(&b, &model.params);
    Ok((rec.breakdown, grads, rec.clamped))
}

/// Owns a model while it trains.
pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    adam: AdamState,
    rng: ChaCha8Rng,
    pool: rayon::ThreadPool,
    started: Instant,
    pub log: TrainLog,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        model.config.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            model,
            cfg,
            adam: AdamState::new(),
            pool: thread_pool()?,
            started: Instant::now(),
            log: TrainLog::default(),
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.log.records.len()
    }

    /// One optimizer step on `batch`.
    pub fn step(&mut self, batch: &[TrainExample], epoch: usize) -> Result<LossRecord> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let (model, cfg) = (&self.model, &self.cfg);
        let results: Vec<_> = self.pool.install(|| {
            batch
                .par_iter()
                .map(|ex| example_gradient(model, cfg, ex))
                .collect()
        });
        let scale = 1.0 / batch.len() as f64;
        let mut total = ParamGrads::default();
        let mut parts = Vec::with_capacity(batch.len());
        for r in results {
            let (loss, grads, clamped) = r?;
            total.add_scaled(&grads, scale);
            parts.push(loss);
            self.log.clamped += clamped;
        }
        adam_step(
            &mut self.model.params,
            &total,
            &mut self.adam,
            &self.cfg.adam,
            self.cfg.learning_rate,
        )?;
        let mean = LossBreakdown::mean(&parts);
        let rec = LossRecord {
            step: self.log.records.len() + 1,
            epoch,
            l_s: mean.l_s,
            l_e: mean.l_e,
            l: mean.l,
            wall_ms: self.started.elapsed().as_secs_f64() * 1e3,
        };
        self.log.records.push(rec);
        Ok(rec)
    }

    /// Example order for `epoch`: shuffled when configured.
    pub fn epoch_order(&mut self, len: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..len).collect();
        if self.cfg.shuffle {
            order.shuffle(&mut self.rng);
        }
        order
    }

    /// One pass over `data` in batches.
    pub fn run_epoch(&mut self, data: &[TrainExample], epoch: usize) -> Result<()> {
        if data.is_empty() {
            return Err(Error::invalid("no training examples"));
        }
        let order = self.epoch_order(data.len());
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<TrainExample> = chunk.iter().map(|&i| data[i].clone()).collect();
            self.step(&batch, epoch)?;
        }
        Ok(())
    }
}

/// Trains for `cfg.epochs` passes and returns the model with its loss log.
pub fn train(model: Model, data: &[TrainExample], cfg: &TrainConfig) -> Result<(Model, TrainLog)> {
    let mut trainer = Trainer::new(model, cfg.clone())?;
    for epoch in 1..=cfg.epochs {
        trainer.run_epoch(data, epoch)?;
    }
    Ok((trainer.model, trainer.log))
}

/// Mean loss over `data` under `cfg` without updating anything.
pub fn evaluate_loss(model: &Model, data: &[TrainExample], cfg: &TrainConfig) -> Result<LossBreakdown> {
    if data.is_empty() {
        return Err(Error::invalid("no examples to score"));
    }
    let pool = thread_pool()?;
    let parts: Vec<Result<LossBreakdown>> = pool.install(|| {
        data.par_iter()
            .map(|ex| {
                let mut tape = Tape::new();
                let b = tape.bind(&model.params);
                Ok(record_loss(&mut tape, &b, &model.config, cfg, ex)?.breakdown)
            })
            .collect()
    });
    Ok(LossBreakdown::mean(&parts.into_iter().collect::<Result<Vec<_>>>()?))
}
