//! Accuracy and speed of a surrogate measured against the numerical oracle.

mod metrics;
mod report;
mod run;

pub use metrics::{compute_metrics, MetricSet};
pub use report::{emit_report, read_metrics_csv, METRICS_HEADER};
pub use run::{
    row_injections, run_benchmark, solve_batch, time_oracle, truth_from_solutions, BenchOptions, BenchmarkReport,
    CascadeSurrogate, ClusterMetrics, OracleSurrogate, ScatterRow, ScatterSet, Surrogate, SurrogateOutput,
};

use crate::cascade::CascadeError;
use crate::solver::SolverError;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("truth has {truth} values but prediction has {predicted}")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("no values to compare")]
    Empty,
    #[error("truth value {0} is zero; relative error undefined")]
    ZeroTruth(usize),
    #[error("oracle: {0}")]
    Oracle(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error("i/o: {0}")]
    Io(String),
}
