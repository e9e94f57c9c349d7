use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::metrics::{compute_metrics, MetricSet};
use super::BenchError;
use crate::cascade::{median, predict_cascade, system_column, time_cascade, CascadeModel, EvalMode, TimingRecord};
use crate::feeder::{Feeder, Phase};
use crate::partition::ClusterTree;
use crate::solver::{FixedPointSolver, PowerFlowSolution, SolverOptions};
use crate::synth::cluster_head_powers;

/// Voltages per node-phase (feeder node order) and head powers per cluster
/// (`[P_A, Q_A, P_B, Q_B, P_C, Q_C]`, None for the top).
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateOutput {
    pub vmag: DMatrix<f64>,
    pub vang: DMatrix<f64>,
    pub heads: Vec<Option<DMatrix<f64>>>,
}

/// Anything that maps system inputs to a full-feeder state estimate.
pub trait Surrogate: Sync {
    fn evaluate(&self, x: &DMatrix<f64>) -> Result<SurrogateOutput, BenchError>;
    /// Per-cluster prediction times, median over `reps` passes.
    fn timing(&self, x: &DMatrix<f64>, reps: usize) -> Result<TimingRecord, BenchError>;
}

pub struct CascadeSurrogate<'a> {
    pub model: &'a CascadeModel,
    pub feeder: &'a Feeder,
}

impl Surrogate for CascadeSurrogate<'_> {
    fn evaluate(&self, x: &DMatrix<f64>) -> Result<SurrogateOutput, BenchError> {
        let (pred, _) = predict_cascade(self.model, x, EvalMode::Parallel)?;
        pred.check_wiring(self.model)?;
        let (vmag, vang) = pred.node_voltages(self.model, self.feeder)?;
        let heads = (0..self.model.len()).map(|id| pred.head(self.model, id)).collect();
        Ok(SurrogateOutput { vmag, vang, heads })
    }

    fn timing(&self, x: &DMatrix<f64>, reps: usize) -> Result<TimingRecord, BenchError> {
        Ok(time_cascade(self.model, x, reps)?)
    }
}

/// The numerical solver dressed as a surrogate, for loopback checks. Its
/// whole batch time is booked on the top cluster.
pub struct OracleSurrogate<'a> {
    pub feeder: &'a Feeder,
    pub tree: &'a ClusterTree,
    pub solver: FixedPointSolver,
    pub options: SolverOptions,
}

impl<'a> OracleSurrogate<'a> {
    pub fn new(feeder: &'a Feeder, tree: &'a ClusterTree, options: SolverOptions) -> Result<Self, BenchError> {
        Ok(Self { feeder, tree, solver: FixedPointSolver::new(feeder)?, options })
    }
}

impl Surrogate for OracleSurrogate<'_> {
    fn evaluate(&self, x: &DMatrix<f64>) -> Result<SurrogateOutput, BenchError> {
        let batch = solve_batch(self.feeder, &self.solver, x, &self.options)?;
        if let Some(r) = batch.iter().position(Option::is_none) {
            return Err(BenchError::Oracle(format!("row {r} did not converge")));
        }
        let sols: Vec<PowerFlowSolution> = batch.into_iter().flatten().collect();
        Ok(truth_from_solutions(self.feeder, self.tree, &sols))
    }

    fn timing(&self, x: &DMatrix<f64>, reps: usize) -> Result<TimingRecord, BenchError> {
        let t = time_oracle(self.feeder, &self.solver, x, &self.options, reps)?;
        let mut times = vec![0.0; self.tree.len()];
        times[self.tree.top()] = t;
        Ok(TimingRecord::new(self.tree, times)?)
    }
}

/// Specified injections for one system-input row (loads enter negative).
pub fn row_injections(f: &Feeder, x: &DMatrix<f64>, r: usize) -> Vec<Complex64> {
    f.index()
        .rows()
        .iter()
        .map(|&(b, ph)| -Complex64::new(x[(r, system_column(b, ph, false))], x[(r, system_column(b, ph, true))]))
        .collect()
}

/// One solve per row; None where the oracle did not converge.
pub fn solve_batch(
    f: &Feeder,
    solver: &FixedPointSolver,
    x: &DMatrix<f64>,
    opts: &SolverOptions,
) -> Result<Vec<Option<PowerFlowSolution>>, BenchError> {
    (0..x.nrows())
        .map(|r| {
            let s = solver.solve(&row_injections(f, x, r), opts)?;
            Ok(s.converged.then_some(s))
        })
        .collect()
}

/// Median wall time of solving every row, over `reps` repetitions. The
/// admittance factorization is done once beforehand and not counted.
pub fn time_oracle(
    f: &Feeder,
    solver: &FixedPointSolver,
    x: &DMatrix<f64>,
    opts: &SolverOptions,
    reps: usize,
) -> Result<f64, BenchError> {
    let injections: Vec<Vec<Complex64>> = (0..x.nrows()).map(|r| row_injections(f, x, r)).collect();
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        for inj in &injections {
            std::hint::black_box(solver.solve(inj, opts)?);
        }
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(median(times))
}

pub fn truth_from_solutions(f: &Feeder, tree: &ClusterTree, sols: &[PowerFlowSolution]) -> SurrogateOutput {
    let nodes = f.index().len();
    let vmag = DMatrix::from_fn(sols.len(), nodes, |r, c| sols[r].vmag(c));
    let vang = DMatrix::from_fn(sols.len(), nodes, |r, c| sols[r].vang_deg(c));
    let per_row: Vec<_> = sols.iter().map(|s| cluster_head_powers(f, tree, s)).collect();
    let heads = tree
        .clusters()
        .iter()
        .map(|c| {
            c.parent.map(|_| {
                DMatrix::from_fn(sols.len(), 6, |r, k| {
                    let p = &per_row[r][c.id];
                    if k % 2 == 0 {
                        p.p[k / 2]
                    } else {
                        p.q[k / 2]
                    }
                })
            })
        })
        .collect();
    SurrogateOutput { vmag, vang, heads }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMetrics {
    pub cluster: usize,
    pub label: String,
    pub layer: usize,
    /// |V| in pu.
    pub vmag: MetricSet,
    /// Angle in degrees per phase A, B, C (None when the phase is absent).
    pub vang: [Option<MetricSet>; 3],
    /// Phase-summed apparent power at the head, pu (None for the top).
    pub head_s: Option<MetricSet>,
}

/// Truth and prediction for one quantity of one cluster, row-major over
/// (sample, node-phase).
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterSet {
    pub cluster: usize,
    pub quantity: &'static str,
    pub rows: Vec<ScatterRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterRow {
    pub truth: f64,
    pub predicted: f64,
    pub bus: String,
    pub phase: String,
    pub sample: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub clusters: Vec<ClusterMetrics>,
    pub timing: TimingRecord,
    /// Median oracle wall time for the whole batch.
    pub oracle_seconds: f64,
    /// `oracle_seconds / timing.t_ats`.
    pub speedup: f64,
    /// Rows compared.
    pub rows: usize,
    /// Rows dropped because the oracle did not converge.
    pub excluded: Vec<usize>,
    pub scatter: Vec<ScatterSet>,
}

impl BenchmarkReport {
    pub fn empty() -> Self {
        Self {
            clusters: Vec::new(),
            timing: TimingRecord { cluster_seconds: Vec::new(), layer_max: Vec::new(), path_sums: Vec::new(), t_ats: 0.0 },
            oracle_seconds: 0.0,
            speedup: 0.0,
            rows: 0,
            excluded: Vec::new(),
            scatter: Vec::new(),
        }
    }

    pub fn worst_vmag_mae(&self) -> f64 {
        self.clusters.iter().map(|c| c.vmag.mae).fold(0.0, f64::max)
    }

    pub fn worst_vang_mae(&self) -> f64 {
        self.clusters.iter().flat_map(|c| c.vang.iter().flatten().map(|m| m.mae)).fold(0.0, f64::max)
    }

    pub fn worst_head_mape(&self) -> f64 {
        self.clusters
            .iter()
            .filter_map(|c| c.head_s.and_then(|m| m.mape))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub reps: usize,
    pub solver: SolverOptions,
    /// Keep per-point scatter data in the report.
    pub scatter: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { reps: 20, solver: SolverOptions::default(), scatter: true }
    }
}

/// Angle difference folded into (-180, 180].
fn wrap_deg(d: f64) -> f64 {
    let w = d.rem_euclid(360.0);
    if w > 180.0 {
        w - 360.0
    } else {
        w
    }
}

/// Runs oracle and surrogate on the same system inputs and compares them
/// cluster by cluster. `sample_ids` label rows in the scatter output.
pub fn run_benchmark(
    f: &Feeder,
    tree: &ClusterTree,
    surrogate: &dyn Surrogate,
    x: &DMatrix<f64>,
    sample_ids: &[usize],
    opts: &BenchOptions,
) -> Result<BenchmarkReport, BenchError> {
    if sample_ids.len() != x.nrows() {
        return Err(BenchError::LengthMismatch { truth: x.nrows(), predicted: sample_ids.len() });
    }
    let solver = FixedPointSolver::new(f)?;
    let batch = solve_batch(f, &solver, x, &opts.solver)?;
    let keep: Vec<usize> = (0..x.nrows()).filter(|&r| batch[r].is_some()).collect();
    let excluded: Vec<usize> = (0..x.nrows()).filter(|&r| batch[r].is_none()).collect();
    if !excluded.is_empty() {
        log::warn!("oracle did not converge on {} of {} benchmark rows", excluded.len(), x.nrows());
    }
    if keep.is_empty() {
        return Err(BenchError::Oracle("no benchmark row converged".into()));
    }
    let x = x.select_rows(&keep);
    let sols: Vec<PowerFlowSolution> = batch.into_iter().flatten().collect();
    let truth = truth_from_solutions(f, tree, &sols);
    let pred = surrogate.evaluate(&x)?;
    let oracle_seconds = time_oracle(f, &solver, &x, &opts.solver, opts.reps)?;
    let timing = surrogate.timing(&x, opts.reps)?;
    let samples: Vec<usize> = keep.iter().map(|&r| sample_ids[r]).collect();

    let mut clusters = Vec::new();
    let mut scatter = Vec::new();
    for c in tree.clusters() {
        let cols: Vec<(usize, usize, Phase)> = c
            .nodes
            .iter()
            .flat_map(|&b| f.buses()[b].phases.iter().map(move |ph| (b, ph)))
            .map(|(b, ph)| (f.index().row(b, ph).expect("present phase"), b, ph))
            .collect();
        let (mut vt, mut vp) = (Vec::new(), Vec::new());
        let mut at: [(Vec<f64>, Vec<f64>); 3] = Default::default();
        let mut vm_rows = Vec::new();
        let mut va_rows = Vec::new();
        for (r, &sample) in samples.iter().enumerate() {
            for &(col, b, ph) in &cols {
                let (t, p) = (truth.vmag[(r, col)], pred.vmag[(r, col)]);
                vt.push(t);
                vp.push(p);
                let ta = truth.vang[(r, col)];
                let pa = ta + wrap_deg(pred.vang[(r, col)] - ta);
                at[ph.index()].0.push(ta);
                at[ph.index()].1.push(pa);
                if opts.scatter {
                    let row = |truth, predicted| ScatterRow {
                        truth,
                        predicted,
                        bus: f.bus_id(b).to_string(),
                        phase: ph.to_string(),
                        sample,
                    };
                    vm_rows.push(row(t, p));
                    va_rows.push(row(ta, pred.vang[(r, col)]));
                }
            }
        }
        let vmag = compute_metrics(&vt, &vp, true)?;
        let vang = [0, 1, 2].map(|k| {
            let (t, p) = &at[k];
            (!t.is_empty()).then(|| compute_metrics(t, p, false).expect("equal non-empty lengths"))
        });
        let head_s = match (&truth.heads[c.id], &pred.heads[c.id]) {
            (Some(t), Some(p)) => {
                let s = |m: &DMatrix<f64>, r: usize| (0..3).map(|k| m[(r, 2 * k)].hypot(m[(r, 2 * k + 1)])).sum::<f64>();
                let st: Vec<f64> = (0..t.nrows()).map(|r| s(t, r)).collect();
                let sp: Vec<f64> = (0..p.nrows()).map(|r| s(p, r)).collect();
                if opts.scatter {
                    scatter.push(ScatterSet {
                        cluster: c.id,
                        quantity: "shead",
                        rows: samples
                            .iter()
                            .enumerate()
                            .map(|(r, &sample)| ScatterRow {
                                truth: st[r],
                                predicted: sp[r],
                                bus: f.bus_id(c.head).to_string(),
                                phase: "ABC".into(),
                                sample,
                            })
                            .collect(),
                    });
                }
                Some(match compute_metrics(&st, &sp, true) {
                    Ok(m) => m,
                    Err(BenchError::ZeroTruth(_)) => compute_metrics(&st, &sp, false)?,
                    Err(e) => return Err(e),
                })
            }
            (None, None) => None,
            _ => return Err(BenchError::Oracle(format!("cluster {}: head outputs disagree with the tree", c.id))),
        };
        if opts.scatter {
            scatter.push(ScatterSet { cluster: c.id, quantity: "vmag", rows: vm_rows });
            scatter.push(ScatterSet { cluster: c.id, quantity: "vang", rows: va_rows });
        }
        clusters.push(ClusterMetrics { cluster: c.id, label: tree.label(c.id), layer: c.layer, vmag, vang, head_s });
    }
    let speedup = if timing.t_ats > 0.0 { oracle_seconds / timing.t_ats } else { f64::INFINITY };
    Ok(BenchmarkReport { clusters, timing, oracle_seconds, speedup, rows: keep.len(), excluded, scatter })
}
