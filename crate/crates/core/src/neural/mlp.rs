use std::fmt;

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub const ALL: [Activation; 4] = [Activation::Linear, Activation::Relu, Activation::Tanh, Activation::Sigmoid];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Optimizer {
    Sgd,
    RmsProp,
    Adam,
}

impl Optimizer {
    pub const ALL: [Optimizer; 3] = [Optimizer::Sgd, Optimizer::RmsProp, Optimizer::Adam];

    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::RmsProp => "rmsprop",
            Optimizer::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.name() == s)
    }

    pub fn default_learning_rate(self) -> f64 {
        match self {
            Optimizer::Sgd => 0.01,
            Optimizer::RmsProp => 1e-3,
            Optimizer::Adam => 1e-3,
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    /// Fixed width of each hidden layer; None uses the sizing heuristic.
    pub hidden_neurons: Option<usize>,
    /// Multiplier applied to the hidden width (grid axis).
    pub hidden_scale: f64,
    /// 0 to 3 hidden layers.
    pub hidden_layers: usize,
    pub activation_hidden: Activation,
    pub activation_output: Activation,
    pub optimizer: Optimizer,
    /// None uses the optimizer's default.
    pub learning_rate: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_neurons: None,
            hidden_scale: 1.0,
            hidden_layers: 1,
            activation_hidden: Activation::Tanh,
            activation_output: Activation::Linear,
            optimizer: Optimizer::Adam,
            learning_rate: None,
            batch_size: 128,
            epochs: 200,
            seed: 1,
        }
    }
}

/// `ceil(2 (n_in + n_out) / 3)` clamped to [8, 256].
pub fn default_hidden(n_in: usize, n_out: usize) -> usize {
    (2 * (n_in + n_out)).div_ceil(3).clamp(8, 256)
}

impl MlpConfig {
    pub fn hidden_width(&self, n_in: usize, n_out: usize) -> usize {
        let base = self.hidden_neurons.unwrap_or_else(|| default_hidden(n_in, n_out));
        ((base as f64 * self.hidden_scale).round() as usize).max(1)
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or_else(|| self.optimizer.default_learning_rate())
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::InvalidConfig(m.to_string()));
        if self.hidden_layers > 3 {
            return bad("hidden_layers must be within 0..=3");
        }
        if self.hidden_neurons == Some(0) || !(self.hidden_scale > 0.0) {
            return bad("hidden width must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0) || !lr.is_finite() {
                return bad("learning_rate must be positive");
            }
        }
        Ok(())
    }
}

/// Per-column affine map `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Columns with a standard deviation at or below this (relative to the
/// mean) are treated as constant.
pub const MIN_SCALE: f64 = 1e-12;

impl Normalizer {
    /// Fits mean and population standard deviation; constant columns get
    /// `floor` as their scale and are reported by index.
    pub fn fit(x: &DMatrix<f64>, floor: f64) -> (Self, Vec<usize>) {
        let n = x.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        let mut degenerate = Vec::new();
        for (c, col) in x.column_iter().enumerate() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let sd = var.sqrt();
            mean.push(m);
            if sd <= MIN_SCALE * m.abs().max(1.0) {
                scale.push(floor);
                degenerate.push(c);
            } else {
                scale.push(sd);
            }
        }
        (Self { mean, scale }, degenerate)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn normalize(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (c, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.mean[c], self.scale[c]);
            col.apply(|v| *v = (*v - m) / s);
        }
        out
    }

    pub fn denormalize(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (c, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.mean[c], self.scale[c]);
            col.apply(|v| *v = *v * s + m);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

impl Layer {
    fn forward(&self, a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut z = a * self.weights.transpose();
        let bt: RowDVector<f64> = self.bias.transpose();
        for mut row in z.row_iter_mut() {
            row += &bt;
        }
        let act = self.activation;
        let out = z.map(|v| act.apply(v));
        (z, out)
    }
}

/// Feed-forward network operating in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    /// Glorot-uniform weights, zero biases.
    pub fn init(n_in: usize, n_out: usize, cfg: &MlpConfig) -> Self {
        let hidden = cfg.hidden_width(n_in, n_out);
        let mut sizes = vec![n_in];
        sizes.extend(std::iter::repeat_n(hidden, cfg.hidden_layers));
        sizes.push(n_out);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..=limit));
                Layer {
                    weights,
                    bias: DVector::zeros(fan_out),
                    activation: if k == last { cfg.activation_output } else { cfg.activation_hidden },
                }
            })
            .collect();
        Self { layers }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().expect("at least one layer").weights.nrows()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = x.clone();
        for l in &self.layers {
            a = l.forward(&a).1;
        }
        a
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer: weights (column-major) then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count(), "parameter count mismatch");
        let mut k = 0;
        for l in &mut self.layers {
            let n = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&p[k..k + n]);
            k += n;
            let n = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&p[k..k + n]);
            k += n;
        }
    }

    /// Mean squared error over all entries of the batch.
    pub fn loss(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let d = self.forward(x) - y;
        d.norm_squared() / d.len().max(1) as f64
    }

    /// Loss and its gradient, flattened in [`Network::params`] order.
    pub fn loss_and_gradient(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, Vec<f64>) {
        let grads = self.gradients(x, y);
        let mut flat = Vec::with_capacity(self.param_count());
        for (gw, gb) in &grads.1 {
            flat.extend_from_slice(gw.as_slice());
            flat.extend_from_slice(gb.as_slice());
        }
        (grads.0, flat)
    }

    /// Backpropagation; returns the loss and per-layer (dW, db).
    pub fn gradients(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, Vec<(DMatrix<f64>, DVector<f64>)>) {
        let mut acts = vec![x.clone()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (z, a) = l.forward(acts.last().expect("input present"));
            pre.push(z);
            acts.push(a);
        }
        let out = acts.last().expect("output present");
        let diff = out - y;
        let count = diff.len().max(1) as f64;
        let loss = diff.norm_squared() / count;
        let mut delta = diff * (2.0 / count);
        let mut grads = vec![(DMatrix::zeros(0, 0), DVector::zeros(0)); self.layers.len()];
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            let (z, a) = (&pre[k], &acts[k + 1]);
            delta.zip_zip_apply(z, a, |d, zv, av| *d *= l.activation.derivative(zv, av));
            let gw = delta.transpose() * &acts[k];
            let gb = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            if k > 0 {
                delta = &delta * &l.weights;
            }
            grads[k] = (gw, gb);
        }
        (loss, grads)
    }
}

/// Trained regressor with its normalization and the training input range.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub network: Network,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
    /// Per-input min and max seen in training, for extrapolation flags.
    pub input_min: Vec<f64>,
    pub input_max: Vec<f64>,
}

/// Outputs of [`predict_mlp`] plus rows that left the training range.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub outputs: DMatrix<f64>,
    pub extrapolated_rows: Vec<usize>,
}

impl MlpModel {
    pub fn n_inputs(&self) -> usize {
        self.network.n_inputs()
    }

    pub fn n_outputs(&self) -> usize {
        self.network.n_outputs()
    }

    /// Denormalized outputs without the extrapolation scan.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, NeuralError> {
        if x.ncols() != self.n_inputs() {
            return Err(NeuralError::WidthMismatch {
                expected: self.n_inputs(),
                got: x.ncols(),
            });
        }
        let z = self.network.forward(&self.input_norm.normalize(x));
        Ok(self.output_norm.denormalize(&z))
    }
}

/// Pure prediction for a batch of rows (order preserved).
pub fn predict_mlp(m: &MlpModel, x: &DMatrix<f64>) -> Result<Prediction, NeuralError> {
    let outputs = m.predict(x)?;
    let extrapolated_rows: Vec<usize> = (0..x.nrows())
        .filter(|&r| {
            (0..x.ncols()).any(|c| {
                let v = x[(r, c)];
                let span = (m.input_max[c] - m.input_min[c]).abs().max(1e-12);
                v < m.input_min[c] - 1e-9 * span || v > m.input_max[c] + 1e-9 * span
            })
        })
        .collect();
    if !extrapolated_rows.is_empty() {
        log::debug!("{} of {} rows fall outside the training input range", extrapolated_rows.len(), x.nrows());
    }
    Ok(Prediction {
        outputs,
        extrapolated_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_hidden_clamps() {
        assert_eq!(default_hidden(1, 1), 8);
        assert_eq!(default_hidden(30, 36), 44);
        assert_eq!(default_hidden(1000, 1000), 256);
        let cfg = MlpConfig { hidden_scale: 0.25, ..Default::default() };
        assert_eq!(cfg.hidden_width(30, 36), 11);
    }

    #[test]
    fn normalizer_round_trip() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 4.0, 5.0]);
        let (n, degenerate) = Normalizer::fit(&x, 1.0);
        assert_eq!(degenerate, vec![1]);
        let back = n.denormalize(&n.normalize(&x));
        for (a, b) in x.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 1e-12 * a.abs());
        }
        let z = n.normalize(&x);
        assert!(z.column(0).sum().abs() < 1e-12);
    }

    #[test]
    fn zero_hidden_weights_yield_output_bias() {
        let cfg = MlpConfig { hidden_neurons: Some(4), ..Default::default() };
        let mut net = Network::init(3, 2, &cfg);
        for l in &mut net.layers {
            l.weights.fill(0.0);
        }
        net.layers[1].bias = DVector::from_vec(vec![0.5, -1.0]);
        let m = MlpModel {
            config: cfg,
            network: net,
            input_norm: Normalizer::identity(3),
            output_norm: Normalizer { mean: vec![10.0, 20.0], scale: vec![2.0, 4.0] },
            input_min: vec![0.0; 3],
            input_max: vec![1.0; 3],
        };
        let x = DMatrix::from_fn(5, 3, |r, c| (r * 3 + c) as f64 * 0.1);
        let p = predict_mlp(&m, &x).unwrap();
        assert_eq!(p.outputs.nrows(), 5);
        for r in 0..5 {
            assert_eq!(p.outputs[(r, 0)], 11.0);
            assert_eq!(p.outputs[(r, 1)], 16.0);
        }
        assert!(matches!(predict_mlp(&m, &DMatrix::zeros(1, 4)), Err(NeuralError::WidthMismatch { .. })));
    }

    #[test]
    fn params_round_trip() {
        let cfg = MlpConfig { hidden_layers: 2, hidden_neurons: Some(5), ..Default::default() };
        let mut net = Network::init(4, 3, &cfg);
        let p: Vec<f64> = (0..net.param_count()).map(|k| k as f64).collect();
        net.set_params(&p);
        assert_eq!(net.params(), p);
    }
}
