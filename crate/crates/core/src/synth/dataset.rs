use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::shapes::{moving_median, mu_law_family, CompandingConfig, Direction, LoadShape};
use super::SynthError;
use crate::cascade::{IoLayout, Quantity, Slot};
use crate::feeder::Feeder;
use crate::partition::ClusterTree;
use crate::solver::{branch_injected_power, specified_injections, FixedPointSolver, PhasePowers, PowerFlowSolution, SolverOptions};
use crate::textfmt::{fmt_f64, Writer};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_samples: usize,
    /// Companded variants generated per base shape.
    pub variants: usize,
    pub mu_min: f64,
    pub mu_max: f64,
    pub jitter_sigma: f64,
    pub shape_seed: u64,
    pub split_seed: u64,
    pub median_window: usize,
    /// Abort when more than this fraction of samples fail to converge.
    pub max_failure_ratio: f64,
    pub solver: SolverOptions,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            variants: 12,
            mu_min: 1.0,
            mu_max: 255.0,
            jitter_sigma: 0.01,
            shape_seed: 7,
            split_seed: 11,
            median_window: 3,
            max_failure_ratio: 0.1,
            solver: SolverOptions::default(),
        }
    }
}

impl SynthConfig {
    /// Stable text identifying every setting that affects the datasets.
    pub fn fingerprint(&self) -> String {
        format!(
            "n={} variants={} mu=[{},{}] jitter={} shape_seed={} split_seed={} window={} fail={} tol={} iters={}",
            self.n_samples,
            self.variants,
            fmt_f64(self.mu_min),
            fmt_f64(self.mu_max),
            fmt_f64(self.jitter_sigma),
            self.shape_seed,
            self.split_seed,
            self.median_window,
            fmt_f64(self.max_failure_ratio),
            fmt_f64(self.solver.tolerance),
            self.solver.max_iterations
        )
    }
}

/// Per-load multiplier series and the companding that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadProfiles {
    /// `series[k][t]`: multiplier of load k at sample t.
    pub series: Vec<Vec<f64>>,
    /// Variant id assigned to each load, e.g. `residential#3`.
    pub variant_ids: Vec<String>,
    /// Companding settings per base shape id.
    pub companding: BTreeMap<String, CompandingConfig>,
}

/// Builds one companded variant family per base shape and hands every load
/// its own member (cycling when loads outnumber variants). Shapes shorter
/// than `n_samples` repeat cyclically. Unknown shape ids fall back to the
/// built-in profiles.
pub fn build_load_profiles(
    f: &Feeder,
    cfg: &SynthConfig,
    bases: &BTreeMap<String, LoadShape>,
) -> Result<LoadProfiles, SynthError> {
    if cfg.n_samples == 0 {
        return Err(SynthError::InvalidConfig("n_samples must be at least 1".into()));
    }
    if cfg.variants == 0 {
        return Err(SynthError::InvalidConfig("variants must be at least 1".into()));
    }
    let ids: std::collections::BTreeSet<&str> = f.loads().iter().map(|l| l.shape_id.as_str()).collect();
    let mut families = BTreeMap::new();
    let mut companding = BTreeMap::new();
    for (k, id) in ids.into_iter().enumerate() {
        let base = match bases.get(id) {
            Some(s) => s.clone(),
            None => LoadShape::builtin(id, cfg.n_samples)
                .ok_or_else(|| SynthError::InvalidShape(format!("no shape named `{id}`")))?,
        };
        let seed = cfg.shape_seed.wrapping_add((k as u64 + 1).wrapping_mul(0x2545_f491_4f6c_dd1d));
        let cc = CompandingConfig::log_uniform(cfg.variants, cfg.mu_min, cfg.mu_max, cfg.jitter_sigma, seed);
        families.insert(id.to_string(), mu_law_family(&base, &cc, cfg.variants)?);
        companding.insert(id.to_string(), cc);
    }
    let mut used: HashMap<&str, usize> = HashMap::new();
    let mut series = Vec::with_capacity(f.loads().len());
    let mut variant_ids = Vec::with_capacity(f.loads().len());
    for load in f.loads() {
        let n = used.entry(&load.shape_id).or_insert(0);
        let family = &families[&load.shape_id];
        let shape = &family[*n % family.len()];
        *n += 1;
        series.push((0..cfg.n_samples).map(|t| shape.multipliers[t % shape.len()]).collect());
        variant_ids.push(shape.id.clone());
    }
    Ok(LoadProfiles {
        series,
        variant_ids,
        companding,
    })
}

/// Full-feeder oracle solutions, one per time sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    /// `multipliers[t][k]` for load k.
    pub multipliers: Vec<Vec<f64>>,
    /// None where the solve failed or did not converge.
    pub solutions: Vec<Option<PowerFlowSolution>>,
}

impl SampleSet {
    /// Solves every sample (concurrently; results ordered by sample index).
    pub fn run(f: &Feeder, profiles: &LoadProfiles, cfg: &SynthConfig) -> Result<Self, SynthError> {
        let solver = FixedPointSolver::new(f)?;
        let n = cfg.n_samples;
        let multipliers: Vec<Vec<f64>> = (0..n)
            .map(|t| profiles.series.iter().map(|s| s[t]).collect())
            .collect();
        let solutions: Vec<Option<PowerFlowSolution>> = multipliers
            .par_iter()
            .map(|m| {
                let s = specified_injections(f, m).ok()?;
                solver.solve(&s, &cfg.solver).ok().filter(|sol| sol.converged)
            })
            .collect();
        let failed = solutions.iter().filter(|s| s.is_none()).count();
        if failed as f64 > cfg.max_failure_ratio * n as f64 {
            return Err(SynthError::TooManyFailures { failed, total: n });
        }
        if failed > 0 {
            log::warn!("{failed} of {n} samples did not converge and were dropped");
        }
        Ok(Self {
            multipliers,
            solutions,
        })
    }

    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }

    /// Indices of converged samples, ascending.
    pub fn kept(&self) -> Vec<usize> {
        (0..self.len()).filter(|&t| self.solutions[t].is_some()).collect()
    }

    pub fn failed(&self) -> Vec<usize> {
        (0..self.len()).filter(|&t| self.solutions[t].is_none()).collect()
    }
}

/// Supervised data for one cluster, rows ordered by sample index.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDataset {
    pub cluster: usize,
    pub layout: IoLayout,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    /// Source sample index of each row.
    pub samples: Vec<usize>,
    pub inputs: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
    /// Row indices, ascending and disjoint.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl ClusterDataset {
    pub fn rows(&self) -> usize {
        self.samples.len()
    }

    pub fn train_inputs(&self) -> DMatrix<f64> {
        self.inputs.select_rows(&self.train)
    }

    pub fn train_outputs(&self) -> DMatrix<f64> {
        self.outputs.select_rows(&self.train)
    }

    pub fn test_inputs(&self) -> DMatrix<f64> {
        self.inputs.select_rows(&self.test)
    }

    pub fn test_outputs(&self) -> DMatrix<f64> {
        self.outputs.select_rows(&self.test)
    }
}

/// 80/20 split: `round(n/5)` rows drawn for test under `seed`, both sets sorted.
pub fn split_rows(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_test = (n as f64 / 5.0).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

/// Quantities every cluster reads from one solved sample.
struct SampleView {
    load: Vec<Complex64>,
    voltages: Vec<Complex64>,
    heads: Vec<PhasePowers>,
}

/// Power entering each cluster head from its parent side, summed over the
/// head branches (zero for the top cluster).
pub fn cluster_head_powers(f: &Feeder, tree: &ClusterTree, sol: &PowerFlowSolution) -> Vec<PhasePowers> {
    tree.clusters()
        .iter()
        .map(|c| {
            let mut acc = PhasePowers::default();
            for &b in &c.head_branches {
                let p = branch_injected_power(sol, f, b, c.head).expect("head branch touches head bus");
                for k in 0..3 {
                    acc.p[k] += p.p[k];
                    acc.q[k] += p.q[k];
                }
            }
            acc
        })
        .collect()
}

fn slot_value(f: &Feeder, head_cluster: &HashMap<usize, usize>, view: &SampleView, s: &Slot) -> f64 {
    let row = f.index().row(s.bus, s.phase);
    let k = s.phase.index();
    match s.quantity {
        Quantity::PLoad => row.map_or(0.0, |r| view.load[r].re),
        Quantity::QLoad => row.map_or(0.0, |r| view.load[r].im),
        Quantity::Vmag => row.map_or(0.0, |r| view.voltages[r].norm()),
        Quantity::Vang => row.map_or(0.0, |r| view.voltages[r].arg().to_degrees()),
        Quantity::PFed | Quantity::PHead => view.heads[head_cluster[&s.bus]].p[k],
        Quantity::QFed | Quantity::QHead => view.heads[head_cluster[&s.bus]].q[k],
    }
}

fn filter_columns(m: &mut DMatrix<f64>, window: usize) -> Result<(), SynthError> {
    if m.nrows() == 0 {
        return Ok(());
    }
    for c in 0..m.ncols() {
        let col: Vec<f64> = m.column(c).iter().copied().collect();
        let filtered = moving_median(&col, window)?;
        m.column_mut(c).copy_from_slice(&filtered);
    }
    Ok(())
}

/// Assembles the datasets of every cluster from one shared sample set:
/// slot values are read from the same solution per sample, each column is
/// median-filtered over time, and all clusters share one train/test split.
pub fn generate_datasets(
    f: &Feeder,
    tree: &ClusterTree,
    layouts: &[IoLayout],
    samples: &SampleSet,
    cfg: &SynthConfig,
) -> Result<Vec<ClusterDataset>, SynthError> {
    if layouts.len() != tree.len() {
        return Err(SynthError::Layout(format!("{} layouts for {} clusters", layouts.len(), tree.len())));
    }
    let kept = samples.kept();
    if kept.is_empty() {
        return Err(SynthError::InvalidConfig("no converged samples".into()));
    }
    let head_cluster: HashMap<usize, usize> = tree
        .clusters()
        .iter()
        .filter(|c| c.parent.is_some())
        .map(|c| (c.head, c.id))
        .collect();
    let views: Vec<SampleView> = kept
        .par_iter()
        .map(|&t| {
            let sol = samples.solutions[t].as_ref().expect("kept samples are solved");
            let load = specified_injections(f, &samples.multipliers[t])
                .expect("multipliers validated by the solve")
                .into_iter()
                .map(|s| -s)
                .collect();
            SampleView {
                load,
                voltages: sol.voltages.clone(),
                heads: cluster_head_powers(f, tree, sol),
            }
        })
        .collect();
    let (train, test) = split_rows(kept.len(), cfg.split_seed);
    layouts
        .iter()
        .map(|layout| {
            let fill = |slots: &[Slot]| {
                DMatrix::from_fn(views.len(), slots.len(), |r, c| slot_value(f, &head_cluster, &views[r], &slots[c]))
            };
            let mut inputs = fill(&layout.inputs);
            let mut outputs = fill(&layout.outputs);
            filter_columns(&mut inputs, cfg.median_window)?;
            filter_columns(&mut outputs, cfg.median_window)?;
            Ok(ClusterDataset {
                cluster: layout.cluster,
                layout: layout.clone(),
                input_names: layout.input_names(f),
                output_names: layout.output_names(f),
                samples: kept.clone(),
                inputs,
                outputs,
                train: train.clone(),
                test: test.clone(),
            })
        })
        .collect()
}

/// Single-cluster convenience: profiles, solves and assembly in one call.
pub fn generate_cluster_dataset(
    f: &Feeder,
    tree: &ClusterTree,
    cluster: usize,
    bases: &BTreeMap<String, LoadShape>,
    cfg: &SynthConfig,
) -> Result<ClusterDataset, SynthError> {
    if cluster >= tree.len() {
        return Err(SynthError::InvalidConfig(format!("cluster {cluster} does not exist")));
    }
    let layouts = crate::cascade::allocate_io(tree, f);
    let profiles = build_load_profiles(f, cfg, bases)?;
    let samples = SampleSet::run(f, &profiles, cfg)?;
    let mut all = generate_datasets(f, tree, &layouts, &samples, cfg)?;
    Ok(all.swap_remove(cluster))
}

pub fn dataset_path(dir: &Path, cluster: usize, split: &str) -> PathBuf {
    dir.join(format!("cluster_{cluster}_{split}.csv"))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> SynthError {
    SynthError::Io(format!("{}: {e}", path.display()))
}

/// Writes `cluster_<id>_train.csv` and `cluster_<id>_test.csv` with a
/// `sample` column followed by inputs then outputs, 9 significant digits.
pub fn write_dataset(dir: &Path, ds: &ClusterDataset) -> Result<(), SynthError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (split, rows) in [("train", &ds.train), ("test", &ds.test)] {
        let path = dataset_path(dir, ds.cluster, split);
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        let header = std::iter::once("sample".to_string())
            .chain(ds.input_names.iter().cloned())
            .chain(ds.output_names.iter().cloned());
        w.write_record(header).map_err(|e| io_err(&path, e))?;
        for &r in rows.iter() {
            let (inp, out) = (ds.inputs.row(r), ds.outputs.row(r));
            let rec = std::iter::once(ds.samples[r].to_string())
                .chain(inp.iter().map(|v| format!("{v:.8e}")))
                .chain(out.iter().map(|v| format!("{v:.8e}")));
            w.write_record(rec).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

/// Reads a dataset written by [`write_dataset`], checking the header
/// against `layout`. Rows are merged back into sample order.
pub fn read_dataset(dir: &Path, layout: &IoLayout, f: &Feeder) -> Result<ClusterDataset, SynthError> {
    let input_names = layout.input_names(f);
    let output_names = layout.output_names(f);
    let expected: Vec<String> = std::iter::once("sample".to_string())
        .chain(input_names.iter().cloned())
        .chain(output_names.iter().cloned())
        .collect();
    let width = expected.len();
    let mut rows: Vec<(usize, bool, Vec<f64>)> = Vec::new();
    for (split, is_test) in [("train", false), ("test", true)] {
        let path = dataset_path(dir, layout.cluster, split);
        let mut r = csv::Reader::from_path(&path).map_err(|e| io_err(&path, e))?;
        let header: Vec<String> = r.headers().map_err(|e| io_err(&path, e))?.iter().map(str::to_string).collect();
        if header != expected {
            return Err(SynthError::Layout(format!("{}: header does not match the cluster layout", path.display())));
        }
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| io_err(&path, e))?;
            let bad = |col: usize| SynthError::Format(format!("{}: row {} column {}", path.display(), line + 2, col + 1));
            if rec.len() != width {
                return Err(bad(rec.len()));
            }
            let sample: usize = rec[0].parse().map_err(|_| bad(0))?;
            let values = (1..width)
                .map(|c| rec[c].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad(c)))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push((sample, is_test, values));
        }
    }
    rows.sort_by_key(|r| r.0);
    if rows.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(SynthError::Format(format!("cluster {}: a sample appears twice", layout.cluster)));
    }
    let (ni, no) = (input_names.len(), output_names.len());
    let inputs = DMatrix::from_fn(rows.len(), ni, |r, c| rows[r].2[c]);
    let outputs = DMatrix::from_fn(rows.len(), no, |r, c| rows[r].2[ni + c]);
    Ok(ClusterDataset {
        cluster: layout.cluster,
        layout: layout.clone(),
        input_names,
        output_names,
        samples: rows.iter().map(|r| r.0).collect(),
        inputs,
        outputs,
        train: (0..rows.len()).filter(|&i| !rows[i].1).collect(),
        test: (0..rows.len()).filter(|&i| rows[i].1).collect(),
    })
}

/// Sidecar describing how a dataset directory was produced.
pub fn manifest_text(
    cfg: &SynthConfig,
    profiles: &LoadProfiles,
    samples: &SampleSet,
    feeder_hash: &str,
    cache_key: &str,
) -> String {
    let mut w = Writer::new();
    w.section("synth");
    w.line(["n_samples".to_string(), cfg.n_samples.to_string()]);
    w.line(["kept".to_string(), samples.kept().len().to_string()]);
    w.line(["failed".to_string(), samples.failed().len().to_string()]);
    w.line(["variants".to_string(), cfg.variants.to_string()]);
    w.line(["mu_range".to_string(), fmt_f64(cfg.mu_min), fmt_f64(cfg.mu_max)]);
    w.line(["jitter_sigma".to_string(), fmt_f64(cfg.jitter_sigma)]);
    w.line(["shape_seed".to_string(), cfg.shape_seed.to_string()]);
    w.line(["split_seed".to_string(), cfg.split_seed.to_string()]);
    w.line(["median_window".to_string(), cfg.median_window.to_string()]);
    w.line(["median_columns", "inputs+outputs"]);
    w.line(["split", "80/20"]);
    w.line(["feeder_hash", feeder_hash]);
    w.line(["cache_key", cache_key]);
    w.section("companding");
    w.comment("shape variant direction mu");
    for (id, cc) in &profiles.companding {
        for (k, (&mu, &dir)) in cc.mu_values.iter().zip(&cc.directions).enumerate() {
            let d = match dir {
                Direction::Compress => "compress",
                Direction::Expand => "expand",
            };
            w.line([id.clone(), k.to_string(), d.to_string(), fmt_f64(mu)]);
        }
    }
    w.section("loads");
    w.comment("load variant");
    for (k, v) in profiles.variant_ids.iter().enumerate() {
        w.line([k.to_string(), v.clone()]);
    }
    let failed = samples.failed();
    if !failed.is_empty() {
        w.section("failed");
        for chunk in failed.chunks(16) {
            w.line(std::iter::once("samples".to_string()).chain(chunk.iter().map(|t| t.to_string())));
        }
    }
    w.finish()
}

/// Cache key recorded in a manifest, if the file exists and has one.
pub fn manifest_cache_key(path: &Path) -> Option<String> {
    let text = fs::read_to_string(path).ok()?;
    let doc = crate::textfmt::Document::parse(&text).ok()?;
    let line = doc.section("synth")?.get("cache_key")?;
    line.values().first().map(|t| t.text.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_eighty_twenty() {
        let (train, test) = split_rows(1000, 3);
        assert_eq!((train.len(), test.len()), (800, 200));
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        for n in 1..40 {
            let (tr, te) = split_rows(n, 9);
            assert!((te.len() as f64 - n as f64 / 5.0).abs() <= 0.5, "n={n}");
            assert_eq!(tr.len() + te.len(), n);
        }
        assert_eq!(split_rows(57, 5), split_rows(57, 5));
    }
}
