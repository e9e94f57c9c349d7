//! Hierarchical array of per-cluster models: I/O wiring, training,
//! bottom-up inference and critical-path timing.

mod bundle;
mod layout;
mod model;
mod predict;
mod timing;

pub use bundle::{load_bundle, model_path, read_manifest, save_bundle, BundleManifest, MANIFEST_FILE, PARTITION_FILE};
pub use layout::{allocate_io, layouts_consistent, IoLayout, Quantity, Slot};
pub use model::{gather_system_inputs, partition_hash, system_column, train_tree, CascadeModel};
pub use predict::{median, predict_cascade, time_cascade, CascadePrediction, EvalMode};
pub use timing::{critical_path_time, TimingRecord};

use crate::neural::NeuralError;

#[derive(Debug, thiserror::Error)]
pub enum CascadeError {
    #[error("no dataset for cluster {0}")]
    MissingDataset(usize),
    #[error("layout: {0}")]
    Layout(String),
    #[error("cluster {cluster}: {source}")]
    Training {
        cluster: usize,
        #[source]
        source: NeuralError,
    },
    #[error("no usable time recorded for cluster {0}")]
    MissingTime(usize),
    #[error("system inputs: {0}")]
    Input(String),
    #[error("bundle: {0}")]
    Bundle(String),
}
