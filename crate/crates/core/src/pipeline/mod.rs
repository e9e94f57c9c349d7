//! End-to-end orchestration driven by one [`RunConfig`]: parse, partition,
//! synthesize, train, benchmark and report, with a hash-keyed dataset cache.

mod config;
mod stages;

pub use config::{BenchConfig, RunConfig, SweepConfig};
pub use stages::{
    dataset_cache_key, load_feeder, parse_multipliers, partition_stage, prepare_datasets, run_bench, run_pipeline,
    run_sweep, solution_csv, write_sweep_csv, PipelineOutcome, Prepared, BUNDLE_DIR, DATASET_DIR, REPORT_DIR,
};

use std::fmt;

use crate::bench::BenchError;
use crate::cascade::CascadeError;
use crate::feeder::FeederError;
use crate::neural::NeuralError;
use crate::partition::PartitionError;
use crate::solver::SolverError;
use crate::synth::SynthError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("{path}: {source}")]
    Feeder { path: String, source: FeederError },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Parse,
    Partition,
    Datasets,
    Train,
    Bench,
    Report,
    Sweep,
    Solve,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Parse => "parse",
            Stage::Partition => "partition",
            Stage::Datasets => "datasets",
            Stage::Train => "train",
            Stage::Bench => "bench",
            Stage::Report => "report",
            Stage::Sweep => "sweep",
            Stage::Solve => "solve",
        })
    }
}

/// An error tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("stage {stage}: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub(crate) trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, StageError>;
}

impl<T, E: Into<Error>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|e| StageError { stage, source: e.into() })
    }
}
