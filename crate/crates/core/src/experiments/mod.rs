//! Reproducible experiment drivers behind the command-line tool: gradient
//! checks, cost benchmarks and needle-task training runs.

mod cost;
mod gradcheck;
mod needle;

pub use cost::{matrix_cost_bench, CostRow};
pub use gradcheck::{gradcheck_cases, gradcheck_suite, GradCheckCase, GradCheckRow};
pub use needle::{
    convergence, k_sweep, strategy_ordering, train_with_dev, train_with_dev_until, ConvergencePoint, ConvergenceReport,
    EpochReport, KSweepRow, NeedleSetup, OrderingRow, OrderingSummary, reference_encoder, reference_training,
};
