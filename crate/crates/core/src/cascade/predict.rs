use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::layout::Quantity;
use super::model::{system_column, CascadeModel};
use super::timing::TimingRecord;
use super::CascadeError;
use crate::feeder::Feeder;
use crate::neural::predict_mlp;

/// How clusters sharing a layer are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Sequential,
    Parallel,
}

/// Per-cluster inputs as consumed and outputs as produced by one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadePrediction {
    pub inputs: Vec<DMatrix<f64>>,
    pub outputs: Vec<DMatrix<f64>>,
    /// Rows outside each model's training range.
    pub extrapolated: Vec<Vec<usize>>,
}

struct ClusterPass {
    inputs: DMatrix<f64>,
    outputs: DMatrix<f64>,
    extrapolated: Vec<usize>,
    seconds: f64,
}

fn eval_cluster(
    cm: &CascadeModel,
    id: usize,
    x: &DMatrix<f64>,
    done: &[Option<DMatrix<f64>>],
) -> Result<ClusterPass, CascadeError> {
    let start = Instant::now();
    let layout = &cm.layouts[id];
    let mut inputs = DMatrix::zeros(x.nrows(), layout.n_inputs());
    for (k, s) in layout.inputs.iter().enumerate() {
        let q = match s.quantity {
            Quantity::PLoad => false,
            Quantity::QLoad => true,
            _ => continue,
        };
        inputs.set_column(k, &x.column(system_column(s.bus, s.phase, q)));
    }
    for &(child, off) in &layout.fed {
        let h = cm.layouts[child]
            .head
            .ok_or_else(|| CascadeError::Layout(format!("cluster {child} has no head outputs")))?;
        let out = done[child]
            .as_ref()
            .ok_or_else(|| CascadeError::Layout(format!("cluster {child} evaluated after its parent {id}")))?;
        for k in 0..6 {
            inputs.set_column(off + k, &out.column(h + k));
        }
    }
    let p = predict_mlp(&cm.models[id], &inputs).map_err(|source| CascadeError::Training { cluster: id, source })?;
    Ok(ClusterPass {
        inputs,
        outputs: p.outputs,
        extrapolated: p.extrapolated_rows,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Bottom-up inference: deepest layer first, each child's predicted head
/// powers filling its parent's fed slots. `x` holds system inputs, one row
/// per case, six columns per bus (see [`system_column`]).
pub fn predict_cascade(
    cm: &CascadeModel,
    x: &DMatrix<f64>,
    mode: EvalMode,
) -> Result<(CascadePrediction, TimingRecord), CascadeError> {
    if x.ncols() != cm.n_system_inputs() {
        return Err(CascadeError::Input(format!(
            "expected {} system input columns, got {}",
            cm.n_system_inputs(),
            x.ncols()
        )));
    }
    let n = cm.len();
    let mut done: Vec<Option<DMatrix<f64>>> = vec![None; n];
    let mut inputs: Vec<Option<DMatrix<f64>>> = vec![None; n];
    let mut extrapolated = vec![Vec::new(); n];
    let mut seconds = vec![0.0; n];
    for layer in cm.tree.layers().iter().rev() {
        let passes: Vec<Result<ClusterPass, CascadeError>> = match mode {
            EvalMode::Sequential => layer.iter().map(|&id| eval_cluster(cm, id, x, &done)).collect(),
            EvalMode::Parallel => layer.par_iter().map(|&id| eval_cluster(cm, id, x, &done)).collect(),
        };
        for (&id, pass) in layer.iter().zip(passes) {
            let pass = pass?;
            seconds[id] = pass.seconds;
            extrapolated[id] = pass.extrapolated;
            inputs[id] = Some(pass.inputs);
            done[id] = Some(pass.outputs);
        }
    }
    let timing = TimingRecord::new(&cm.tree, seconds)?;
    let pred = CascadePrediction {
        inputs: inputs.into_iter().map(|m| m.expect("every layer evaluated")).collect(),
        outputs: done.into_iter().map(|m| m.expect("every layer evaluated")).collect(),
        extrapolated,
    };
    Ok((pred, timing))
}

/// Per-cluster times as the median over `reps` sequential passes.
pub fn time_cascade(cm: &CascadeModel, x: &DMatrix<f64>, reps: usize) -> Result<TimingRecord, CascadeError> {
    let mut samples = vec![Vec::with_capacity(reps); cm.len()];
    for _ in 0..reps.max(1) {
        let (_, t) = predict_cascade(cm, x, EvalMode::Sequential)?;
        for (s, v) in samples.iter_mut().zip(t.cluster_seconds) {
            s.push(v);
        }
    }
    TimingRecord::new(&cm.tree, samples.into_iter().map(median).collect())
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

impl CascadePrediction {
    pub fn rows(&self) -> usize {
        self.outputs.first().map_or(0, |m| m.nrows())
    }

    /// Predicted |V| (pu) and angle (deg) per node-phase, in feeder node order.
    pub fn node_voltages(&self, cm: &CascadeModel, f: &Feeder) -> Result<(DMatrix<f64>, DMatrix<f64>), CascadeError> {
        let nodes = f.index().len();
        let mut vm = DMatrix::from_element(self.rows(), nodes, f64::NAN);
        let mut va = vm.clone();
        for (id, l) in cm.layouts.iter().enumerate() {
            for (k, s) in l.outputs.iter().enumerate() {
                let target = match s.quantity {
                    Quantity::Vmag => &mut vm,
                    Quantity::Vang => &mut va,
                    _ => continue,
                };
                let row = f
                    .index()
                    .row(s.bus, s.phase)
                    .ok_or_else(|| CascadeError::Layout(format!("cluster {id}: absent node-phase in outputs")))?;
                target.set_column(row, &self.outputs[id].column(k));
            }
        }
        if vm.iter().chain(va.iter()).any(|v| v.is_nan()) {
            return Err(CascadeError::Layout("some node-phase voltages are not produced by any cluster".into()));
        }
        Ok((vm, va))
    }

    /// Predicted six head-power columns of a non-top cluster.
    pub fn head(&self, cm: &CascadeModel, id: usize) -> Option<DMatrix<f64>> {
        cm.layouts[id].head.map(|h| self.outputs[id].columns(h, 6).into_owned())
    }

    /// Slot-wise exact equality of child head outputs and parent fed inputs.
    pub fn check_wiring(&self, cm: &CascadeModel) -> Result<(), CascadeError> {
        for (id, l) in cm.layouts.iter().enumerate() {
            for &(child, off) in &l.fed {
                let h = cm.layouts[child].head.expect("non-top child");
                for k in 0..6 {
                    let (a, b) = (self.inputs[id].column(off + k), self.outputs[child].column(h + k));
                    if a.iter().zip(b.iter()).any(|(x, y)| x.to_bits() != y.to_bits()) {
                        return Err(CascadeError::Layout(format!(
                            "cluster {id} fed slot {} differs from child {child}",
                            off + k
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
