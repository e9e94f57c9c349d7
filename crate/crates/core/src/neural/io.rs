use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::mlp::{Activation, Layer, MlpConfig, MlpModel, Network, Normalizer, Optimizer};
use super::NeuralError;
use crate::textfmt::{fmt_f64, Document, Line, Section, SyntaxError, Writer};

fn floats(w: &mut Writer, key: &str, v: &[f64]) {
    w.line(std::iter::once(key.to_string()).chain(v.iter().map(|&x| fmt_f64(x))));
}

/// Serializes a model; floats carry 17 significant digits so the file
/// reloads bit-exactly.
pub fn model_to_text(m: &MlpModel) -> String {
    let c = &m.config;
    let mut w = Writer::new();
    w.section("config");
    w.line(["hidden_neurons".to_string(), c.hidden_neurons.map_or("auto".into(), |n| n.to_string())]);
    w.line(["hidden_scale".to_string(), fmt_f64(c.hidden_scale)]);
    w.line(["hidden_layers".to_string(), c.hidden_layers.to_string()]);
    w.line(["activation_hidden", c.activation_hidden.name()]);
    w.line(["activation_output", c.activation_output.name()]);
    w.line(["optimizer", c.optimizer.name()]);
    w.line(["learning_rate".to_string(), c.learning_rate.map_or("auto".into(), fmt_f64)]);
    w.line(["batch_size".to_string(), c.batch_size.to_string()]);
    w.line(["epochs".to_string(), c.epochs.to_string()]);
    w.line(["seed".to_string(), c.seed.to_string()]);
    w.section("normalization");
    floats(&mut w, "input_mean", &m.input_norm.mean);
    floats(&mut w, "input_scale", &m.input_norm.scale);
    floats(&mut w, "output_mean", &m.output_norm.mean);
    floats(&mut w, "output_scale", &m.output_norm.scale);
    floats(&mut w, "input_min", &m.input_min);
    floats(&mut w, "input_max", &m.input_max);
    for (k, l) in m.network.layers.iter().enumerate() {
        w.section(&format!("layer{k}"));
        w.line([
            "shape".to_string(),
            l.weights.nrows().to_string(),
            l.weights.ncols().to_string(),
            l.activation.name().to_string(),
        ]);
        for r in 0..l.weights.nrows() {
            let row: Vec<f64> = l.weights.row(r).iter().copied().collect();
            floats(&mut w, "w", &row);
        }
        floats(&mut w, "b", l.bias.as_slice());
    }
    w.finish()
}

fn fmt_err(e: SyntaxError) -> NeuralError {
    NeuralError::Format(e.to_string())
}

fn opt_value<T>(l: &Line, parse: impl Fn(&Line) -> Result<T, SyntaxError>) -> Result<Option<T>, SyntaxError> {
    l.expect_len(2, 2)?;
    if l.str_at(1)? == "auto" {
        Ok(None)
    } else {
        parse(l).map(Some)
    }
}

fn enum_value<T>(s: &Section, key: &str, parse: impl Fn(&str) -> Option<T>) -> Result<T, SyntaxError> {
    let l = s.require(key)?;
    l.expect_len(2, 2)?;
    parse(l.str_at(1)?).ok_or_else(|| l.error_at(1, format!("unknown {key}")))
}

fn parse_config(s: &Section) -> Result<MlpConfig, SyntaxError> {
    let one = |k: &str| -> Result<&Line, SyntaxError> {
        let l = s.require(k)?;
        l.expect_len(2, 2)?;
        Ok(l)
    };
    Ok(MlpConfig {
        hidden_neurons: opt_value(s.require("hidden_neurons")?, |l| l.usize_at(1))?,
        hidden_scale: one("hidden_scale")?.f64_at(1)?,
        hidden_layers: one("hidden_layers")?.usize_at(1)?,
        activation_hidden: enum_value(s, "activation_hidden", Activation::parse)?,
        activation_output: enum_value(s, "activation_output", Activation::parse)?,
        optimizer: enum_value(s, "optimizer", Optimizer::parse)?,
        learning_rate: opt_value(s.require("learning_rate")?, |l| l.f64_at(1))?,
        batch_size: one("batch_size")?.usize_at(1)?,
        epochs: one("epochs")?.usize_at(1)?,
        seed: one("seed")?.u64_at(1)?,
    })
}

pub fn model_from_text(text: &str) -> Result<MlpModel, NeuralError> {
    let doc = Document::parse(text).map_err(fmt_err)?;
    let config = parse_config(doc.require("config").map_err(fmt_err)?).map_err(fmt_err)?;
    config.validate()?;
    let norm = doc.require("normalization").map_err(fmt_err)?;
    let vec = |k: &str| norm.require(k).and_then(|l| l.f64_values()).map_err(fmt_err);
    let input_norm = Normalizer { mean: vec("input_mean")?, scale: vec("input_scale")? };
    let output_norm = Normalizer { mean: vec("output_mean")?, scale: vec("output_scale")? };
    let (input_min, input_max) = (vec("input_min")?, vec("input_max")?);

    let mut layers = Vec::new();
    while let Some(s) = doc.section(&format!("layer{}", layers.len())) {
        let shape = s.require("shape").map_err(fmt_err)?;
        shape.expect_len(4, 4).map_err(fmt_err)?;
        let (rows, cols) = (shape.usize_at(1).map_err(fmt_err)?, shape.usize_at(2).map_err(fmt_err)?);
        let activation = Activation::parse(shape.str_at(3).map_err(fmt_err)?)
            .ok_or_else(|| NeuralError::Format(format!("line {}: unknown activation", shape.number)))?;
        let mut data = Vec::with_capacity(rows * cols);
        let mut bias = None;
        for l in &s.lines {
            match l.key() {
                "w" => {
                    let v = l.f64_values().map_err(fmt_err)?;
                    if v.len() != cols {
                        return Err(NeuralError::Format(format!("line {}: expected {cols} weights", l.number)));
                    }
                    data.extend(v);
                }
                "b" => bias = Some(l.f64_values().map_err(fmt_err)?),
                "shape" => {}
                other => return Err(NeuralError::Format(format!("line {}: unexpected `{other}`", l.number))),
            }
        }
        let bias = bias.ok_or_else(|| NeuralError::Format(format!("[{}] has no bias", s.name)))?;
        if data.len() != rows * cols || bias.len() != rows {
            return Err(NeuralError::Format(format!("[{}] does not match its shape", s.name)));
        }
        layers.push(Layer {
            weights: DMatrix::from_row_slice(rows, cols, &data),
            bias: DVector::from_vec(bias),
            activation,
        });
    }
    if layers.is_empty() {
        return Err(NeuralError::Format("no [layer0] section".into()));
    }
    for pair in layers.windows(2) {
        if pair[0].weights.nrows() != pair[1].weights.ncols() {
            return Err(NeuralError::Format("consecutive layer shapes disagree".into()));
        }
    }
    let network = Network { layers };
    let (n_in, n_out) = (network.n_inputs(), network.n_outputs());
    if [input_norm.len(), input_norm.scale.len(), input_min.len(), input_max.len()] != [n_in; 4]
        || [output_norm.len(), output_norm.scale.len()] != [n_out; 2]
    {
        return Err(NeuralError::Format("normalization widths do not match the network".into()));
    }
    if input_norm.scale.iter().chain(&output_norm.scale).any(|s| !(*s > 0.0)) {
        return Err(NeuralError::Format("normalization scale must be positive".into()));
    }
    Ok(MlpModel { config, network, input_norm, output_norm, input_min, input_max })
}

pub fn write_model(path: &Path, m: &MlpModel) -> Result<(), NeuralError> {
    std::fs::write(path, model_to_text(m)).map_err(|e| NeuralError::Io(format!("{}: {e}", path.display())))
}

pub fn read_model(path: &Path) -> Result<MlpModel, NeuralError> {
    let text = std::fs::read_to_string(path).map_err(|e| NeuralError::Io(format!("{}: {e}", path.display())))?;
    model_from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::train_mlp;

    #[test]
    fn text_round_trip_is_exact() {
        let x = DMatrix::from_fn(40, 3, |r, c| ((r * 7 + c * 3) % 11) as f64 / 3.0);
        let y = DMatrix::from_fn(40, 2, |r, c| x[(r, 0)] * (c as f64 + 1.0) - x[(r, 2)].sin());
        let cfg = MlpConfig { epochs: 3, hidden_layers: 2, learning_rate: Some(0.003), ..Default::default() };
        let m = train_mlp(&x, &y, None, &cfg).unwrap().0;
        let back = model_from_text(&model_to_text(&m)).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let x = DMatrix::from_fn(10, 1, |r, _| r as f64);
        let m = train_mlp(&x, &x, None, &MlpConfig { epochs: 1, ..Default::default() }).unwrap().0;
        let text = model_to_text(&m);
        let cut: String = text.lines().filter(|l| !l.starts_with("b ")).collect::<Vec<_>>().join("\n");
        assert!(matches!(model_from_text(&cut), Err(NeuralError::Format(_))));
    }
}
