use nalgebra::DMatrix;
use rayon::prelude::*;

use super::mlp::{Activation, MlpConfig, MlpModel, Optimizer};
use super::train::{train_mlp, TrainReport};
use super::NeuralError;
use crate::synth::{split_rows, ClusterDataset};

/// Option lists; every combination is one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub hidden_scale: Vec<f64>,
    pub hidden_layers: Vec<usize>,
    pub activation_hidden: Vec<Activation>,
    pub activation_output: Vec<Activation>,
    pub optimizer: Vec<Optimizer>,
    pub learning_rate: Vec<Option<f64>>,
    pub batch_size: Vec<usize>,
    pub epochs: Vec<usize>,
}

impl Grid {
    /// A one-cell grid holding `cfg`.
    pub fn single(cfg: &MlpConfig) -> Self {
        Self {
            hidden_scale: vec![cfg.hidden_scale],
            hidden_layers: vec![cfg.hidden_layers],
            activation_hidden: vec![cfg.activation_hidden],
            activation_output: vec![cfg.activation_output],
            optimizer: vec![cfg.optimizer],
            learning_rate: vec![cfg.learning_rate],
            batch_size: vec![cfg.batch_size],
            epochs: vec![cfg.epochs],
        }
    }

    fn check(&self) -> Result<(), NeuralError> {
        let lists = [
            ("hidden_scale", self.hidden_scale.len()),
            ("hidden_layers", self.hidden_layers.len()),
            ("activation_hidden", self.activation_hidden.len()),
            ("activation_output", self.activation_output.len()),
            ("optimizer", self.optimizer.len()),
            ("learning_rate", self.learning_rate.len()),
            ("batch_size", self.batch_size.len()),
            ("epochs", self.epochs.len()),
        ];
        match lists.iter().find(|(_, n)| *n == 0) {
            Some((name, _)) => Err(NeuralError::EmptyGrid(name)),
            None => Ok(()),
        }
    }

    /// Cartesian product in row-major order (last list varies fastest).
    pub fn configs(&self, base: &MlpConfig) -> Result<Vec<MlpConfig>, NeuralError> {
        self.check()?;
        let mut out = Vec::new();
        for &hidden_scale in &self.hidden_scale {
            for &hidden_layers in &self.hidden_layers {
                for &activation_hidden in &self.activation_hidden {
                    for &activation_output in &self.activation_output {
                        for &optimizer in &self.optimizer {
                            for &learning_rate in &self.learning_rate {
                                for &batch_size in &self.batch_size {
                                    for &epochs in &self.epochs {
                                        out.push(MlpConfig {
                                            hidden_scale,
                                            hidden_layers,
                                            activation_hidden,
                                            activation_output,
                                            optimizer,
                                            learning_rate,
                                            batch_size,
                                            epochs,
                                            ..base.clone()
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridEntry {
    /// Position of the cell in [`Grid::configs`] order.
    pub cell: usize,
    pub config: MlpConfig,
    /// Column-averaged validation MAE in normalized output units; infinite
    /// when training diverged.
    pub val_mae: f64,
    pub diverged: bool,
    pub seconds: f64,
}

/// Trains on the dataset's training rows and reports on its test rows.
pub fn train_on_dataset(ds: &ClusterDataset, cfg: &MlpConfig) -> Result<(MlpModel, TrainReport), NeuralError> {
    let (tx, ty) = (ds.train_inputs(), ds.train_outputs());
    let (vx, vy) = (ds.test_inputs(), ds.test_outputs());
    train_mlp(&tx, &ty, Some((&vx, &vy)), cfg)
}

/// Evaluates every cell on a validation split carved from the training rows
/// (20%, drawn with `base.seed`), so test rows never influence the ranking.
/// Cells run in parallel; the result is sorted ascending by validation MAE
/// with ties kept in cell order.
pub fn grid_search(ds: &ClusterDataset, grid: &Grid, base: &MlpConfig) -> Result<Vec<GridEntry>, NeuralError> {
    let configs = grid.configs(base)?;
    let (fit, val) = split_rows(ds.train.len(), base.seed);
    let pick = |rows: &[usize]| -> Vec<usize> { rows.iter().map(|&k| ds.train[k]).collect() };
    let (fit, val) = (pick(&fit), pick(&val));
    let (fx, fy): (DMatrix<f64>, DMatrix<f64>) = (ds.inputs.select_rows(&fit), ds.outputs.select_rows(&fit));
    let (vx, vy) = (ds.inputs.select_rows(&val), ds.outputs.select_rows(&val));
    let mut entries: Vec<GridEntry> = configs
        .into_par_iter()
        .enumerate()
        .map(|(cell, config)| match train_mlp(&fx, &fy, Some((&vx, &vy)), &config) {
            Ok((_, r)) => GridEntry {
                cell,
                config,
                val_mae: r.val_mae_normalized,
                diverged: false,
                seconds: r.seconds,
            },
            Err(e) => {
                log::warn!("grid cell {cell}: {e}");
                GridEntry {
                    cell,
                    config,
                    val_mae: f64::INFINITY,
                    diverged: true,
                    seconds: 0.0,
                }
            }
        })
        .collect();
    entries.sort_by(|a, b| a.val_mae.total_cmp(&b.val_mae).then(a.cell.cmp(&b.cell)));
    Ok(entries)
}
