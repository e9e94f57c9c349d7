use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mlp::{MlpConfig, MlpModel, Network, Normalizer, Optimizer};
use super::NeuralError;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss (normalized MSE) per epoch.
    pub epoch_loss: Vec<f64>,
    /// Validation MAE per output column in original units.
    pub val_mae: Vec<f64>,
    /// Validation MAE averaged over columns in normalized units.
    pub val_mae_normalized: f64,
    pub warnings: Vec<String>,
    pub seconds: f64,
}

impl TrainReport {
    /// Mean of `val_mae` over each group of output columns.
    pub fn group_mae(&self, groups: &[Vec<usize>]) -> Vec<f64> {
        groups
            .iter()
            .map(|g| {
                if g.is_empty() {
                    0.0
                } else {
                    g.iter().map(|&c| self.val_mae[c]).sum::<f64>() / g.len() as f64
                }
            })
            .collect()
    }
}

struct OptState {
    kind: Optimizer,
    lr: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

/// Scale given to zero-variance output columns.
pub const OUTPUT_SCALE_FLOOR: f64 = 1e-8;

const RMS_RHO: f64 = 0.9;
const RMS_EPS: f64 = 1e-7;
const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl OptState {
    fn new(net: &Network, kind: Optimizer, lr: f64) -> Self {
        let sizes: Vec<usize> = net
            .layers
            .iter()
            .flat_map(|l| [l.weights.len(), l.bias.len()])
            .collect();
        Self {
            kind,
            lr,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn update(&mut self, k: usize, p: &mut [f64], g: &[f64]) {
        let lr = self.lr;
        match self.kind {
            Optimizer::Sgd => {
                for (x, d) in p.iter_mut().zip(g) {
                    *x -= lr * d;
                }
            }
            Optimizer::RmsProp => {
                let v = &mut self.v[k];
                for i in 0..p.len() {
                    v[i] = RMS_RHO * v[i] + (1.0 - RMS_RHO) * g[i] * g[i];
                    p[i] -= lr * g[i] / (v[i].sqrt() + RMS_EPS);
                }
            }
            Optimizer::Adam => {
                let (m, v) = (&mut self.m[k], &mut self.v[k]);
                let c1 = 1.0 - ADAM_B1.powi(self.step);
                let c2 = 1.0 - ADAM_B2.powi(self.step);
                for i in 0..p.len() {
                    m[i] = ADAM_B1 * m[i] + (1.0 - ADAM_B1) * g[i];
                    v[i] = ADAM_B2 * v[i] + (1.0 - ADAM_B2) * g[i] * g[i];
                    p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }

    fn apply(&mut self, net: &mut Network, grads: &[(DMatrix<f64>, DVector<f64>)]) {
        self.step += 1;
        for (i, (layer, (gw, gb))) in net.layers.iter_mut().zip(grads).enumerate() {
            self.update(2 * i, layer.weights.as_mut_slice(), gw.as_slice());
            self.update(2 * i + 1, layer.bias.as_mut_slice(), gb.as_slice());
        }
    }
}

fn column_range(x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    x.column_iter()
        .map(|c| (c.min(), c.max()))
        .unzip()
}

/// Mini-batch training of the MSE loss in z-scored units. Normalization is
/// fitted on `x`/`y` only; `val` (if any) is used for the report alone.
pub fn train_mlp(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    val: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
    cfg: &MlpConfig,
) -> Result<(MlpModel, TrainReport), NeuralError> {
    cfg.validate()?;
    if x.nrows() == 0 || x.ncols() == 0 || y.ncols() == 0 {
        return Err(NeuralError::EmptyData);
    }
    if x.nrows() != y.nrows() {
        return Err(NeuralError::RowMismatch { inputs: x.nrows(), outputs: y.nrows() });
    }
    if let Some((vx, vy)) = val {
        if vx.ncols() != x.ncols() || vy.ncols() != y.ncols() || vx.nrows() != vy.nrows() {
            return Err(NeuralError::InvalidConfig("validation set does not match training widths".into()));
        }
    }
    let start = Instant::now();
    let mut warnings = Vec::new();
    // Constant inputs stay unscaled so unseen values are not amplified;
    // constant targets get a tiny scale so predictions sit on the constant.
    let (input_norm, deg_in) = Normalizer::fit(x, 1.0);
    let (output_norm, deg_out) = Normalizer::fit(y, OUTPUT_SCALE_FLOOR);
    if !deg_in.is_empty() {
        warnings.push(format!("{} constant input column(s) left unscaled: {:?}", deg_in.len(), deg_in));
    }
    if !deg_out.is_empty() {
        warnings.push(format!("{} constant output column(s), scale floored: {:?}", deg_out.len(), deg_out));
    }
    for w in &warnings {
        log::debug!("{w}");
    }
    let xn = input_norm.normalize(x);
    let yn = output_norm.normalize(y);

    let mut net = Network::init(x.ncols(), y.ncols(), cfg);
    let mut opt = OptState::new(&net, cfg.optimizer, cfg.learning_rate());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5851_f42d_4c95_7f2d);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let bx = xn.select_rows(batch);
            let by = yn.select_rows(batch);
            let (loss, grads) = net.gradients(&bx, &by);
            if !loss.is_finite() {
                return Err(NeuralError::Diverged { epoch });
            }
            total += loss * batch.len() as f64;
            opt.apply(&mut net, &grads);
        }
        let mean = total / x.nrows() as f64;
        if !mean.is_finite() || net.params().iter().any(|p| !p.is_finite()) {
            return Err(NeuralError::Diverged { epoch });
        }
        epoch_loss.push(mean);
    }
    let (input_min, input_max) = column_range(x);
    let model = MlpModel {
        config: cfg.clone(),
        network: net,
        input_norm,
        output_norm,
        input_min,
        input_max,
    };
    let (val_mae, val_mae_normalized) = match val {
        Some((vx, vy)) if vx.nrows() > 0 => validation_mae(&model, vx, vy)?,
        _ => (vec![0.0; y.ncols()], 0.0),
    };
    Ok((
        model,
        TrainReport {
            epoch_loss,
            val_mae,
            val_mae_normalized,
            warnings,
            seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Per-column MAE in original units and the column-averaged MAE in the
/// model's normalized output units.
pub fn validation_mae(m: &MlpModel, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(Vec<f64>, f64), NeuralError> {
    let pred = m.predict(x)?;
    let n = x.nrows().max(1) as f64;
    let per_col: Vec<f64> = (0..y.ncols())
        .map(|c| (0..y.nrows()).map(|r| (pred[(r, c)] - y[(r, c)]).abs()).sum::<f64>() / n)
        .collect();
    let normalized = per_col
        .iter()
        .zip(&m.output_norm.scale)
        .map(|(e, s)| e / s)
        .sum::<f64>()
        / per_col.len().max(1) as f64;
    Ok((per_col, normalized))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{predict_mlp, Activation};

    fn linear_data(n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let x = DMatrix::from_fn(n, 1, |r, _| r as f64 / (n - 1) as f64);
        let y = x.map(|v| 2.0 * v + 1.0);
        (x, y)
    }

    fn linear_cfg() -> MlpConfig {
        MlpConfig {
            activation_hidden: Activation::Linear,
            activation_output: Activation::Linear,
            ..Default::default()
        }
    }

    #[test]
    fn learns_linear_map() {
        let (x, y) = linear_data(2000);
        let (m, report) = train_mlp(&x, &y, Some((&x, &y)), &linear_cfg()).unwrap();
        let pred = m.predict(&x).unwrap();
        let mse = (pred - &y).norm_squared() / 2000.0;
        assert!(mse <= 1e-6, "mse {mse}");
        assert_eq!(report.epoch_loss.len(), 200);
        assert!(report.epoch_loss[9] < report.epoch_loss[0]);

        let far = DMatrix::from_element(1, 1, 10.0);
        let p = predict_mlp(&m, &far).unwrap();
        assert!(p.outputs[(0, 0)].is_finite());
        assert_eq!(p.extrapolated_rows, vec![0]);
    }

    #[test]
    fn constant_target_is_reproduced() {
        let (x, _) = linear_data(64);
        let y = DMatrix::from_element(64, 1, 3.25);
        let (m, report) = train_mlp(&x, &y, None, &MlpConfig { epochs: 5, ..Default::default() }).unwrap();
        assert!(report.warnings.iter().any(|w| w.contains("constant output")));
        for v in m.predict(&x).unwrap().iter() {
            assert!((v - 3.25).abs() <= 1e-6);
        }
    }

    #[test]
    fn identical_runs_identical_weights() {
        let (x, y) = linear_data(100);
        let cfg = MlpConfig { epochs: 20, ..Default::default() };
        let a = train_mlp(&x, &y, None, &cfg).unwrap().0;
        let b = train_mlp(&x, &y, None, &cfg).unwrap().0;
        assert_eq!(a.network, b.network);
    }

    #[test]
    fn divergence_is_reported() {
        let (x, y) = linear_data(50);
        let y = y.map(|v| v * 1e3);
        let cfg = MlpConfig {
            optimizer: Optimizer::Sgd,
            learning_rate: Some(1e6),
            activation_hidden: Activation::Linear,
            ..Default::default()
        };
        assert!(matches!(train_mlp(&x, &y, None, &cfg), Err(NeuralError::Diverged { .. })));
    }

    #[test]
    fn every_optimizer_reduces_loss() {
        let (x, y) = linear_data(100);
        for opt in Optimizer::ALL {
            let cfg = MlpConfig { optimizer: opt, epochs: 30, ..Default::default() };
            let r = train_mlp(&x, &y, None, &cfg).unwrap().1;
            assert!(r.epoch_loss[29] < r.epoch_loss[0], "{opt}");
        }
    }
}
