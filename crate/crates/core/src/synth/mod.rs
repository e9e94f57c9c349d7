//! Training data synthesis: load-shape variants, full-feeder oracle sweeps
//! and per-cluster datasets.

mod dataset;
pub mod shapes;

pub use dataset::{
    build_load_profiles, cluster_head_powers, dataset_path, generate_cluster_dataset, generate_datasets, manifest_cache_key,
    manifest_text, read_dataset, split_rows, write_dataset, ClusterDataset, LoadProfiles, SampleSet,
    SynthConfig,
};
pub use shapes::{
    moving_median, mu_compress, mu_expand, mu_law_family, CompandingConfig, Direction, LoadShape,
};

use crate::solver::SolverError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid load shape: {0}")]
    InvalidShape(String),
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("{failed} of {total} samples failed to converge (more than the allowed ratio)")]
    TooManyFailures { failed: usize, total: usize },
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(String),
}
