//! Feed-forward regressors trained with mini-batch gradient descent.

mod grid;
mod io;
mod mlp;
mod train;

pub use grid::{grid_search, train_on_dataset, Grid, GridEntry};
pub use io::{model_from_text, model_to_text, read_model, write_model};
pub use mlp::{
    default_hidden, predict_mlp, Activation, Layer, MlpConfig, MlpModel, Network, Normalizer, Optimizer, Prediction,
    MIN_SCALE,
};
pub use train::{train_mlp, validation_mae, TrainReport};

#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training data is empty")]
    EmptyData,
    #[error("{inputs} input rows but {outputs} output rows")]
    RowMismatch { inputs: usize, outputs: usize },
    #[error("expected {expected} input columns, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("training diverged in epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
    #[error("grid option list `{0}` is empty")]
    EmptyGrid(&'static str),
    #[error("model file: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(String),
}
