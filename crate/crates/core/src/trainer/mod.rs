//! Sampled and full-matrix training.

mod adam;
mod config;
mod loss;
mod probe;
mod sampling;
mod train;

pub use adam::{adam_step, AdamState};
pub use config::{AdamConfig, MatrixLoss, NormMode, TrainConfig};
pub use loss::{
    loss_end_sampled, loss_start, neg_log, record_head_loss, record_loss, record_loss_with_plans, total_loss, LossBreakdown, RecordedLoss,
    TrainExample,
};
pub use probe::{gradient_direction_probe, gradient_direction_probe_within, ProbeReport};
pub use sampling::{
    build_sampled_matrix, normalize_sampled, plan_sample, sample_indices, SamplePlan,
    SampledMatrix,
};
pub use train::{
    evaluate_loss, example_gradient, thread_pool, train, LossRecord, TrainLog, Trainer,
    THREADS_ENV,
};
