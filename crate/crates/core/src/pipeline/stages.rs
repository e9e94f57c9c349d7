use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::{AtStage, Error, Stage, StageError};
use crate::bench::{emit_report, run_benchmark, BenchOptions, BenchmarkReport, CascadeSurrogate};
use crate::cascade::{
    allocate_io, gather_system_inputs, load_bundle, save_bundle, train_tree, BundleManifest, CascadeModel, IoLayout,
    Quantity, PARTITION_FILE,
};
use crate::feeder::{parse_feeder, Feeder};
use crate::neural::{grid_search, GridEntry, TrainReport};
use crate::partition::{detect_communities, legalize_to_cluster_tree, ClusterTree, FlowGraph, GranularityPolicy};
use crate::solver::PowerFlowSolution;
use crate::synth::{
    build_load_profiles, generate_datasets, manifest_cache_key, manifest_text, read_dataset, write_dataset,
    ClusterDataset, SampleSet, SynthConfig,
};
use crate::textfmt::Document;

pub const DATASET_DIR: &str = "datasets";
pub const BUNDLE_DIR: &str = "bundle";
pub const REPORT_DIR: &str = "report";

fn io(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

pub fn load_feeder(path: &Path) -> Result<Feeder, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    parse_feeder(&text).map_err(|source| Error::Feeder { path: path.display().to_string(), source })
}

pub fn partition_stage(f: &Feeder, policy: &GranularityPolicy) -> Result<ClusterTree, Error> {
    let g = FlowGraph::from_feeder(f)?;
    let raw = detect_communities(&g, &policy.detect);
    let tree = legalize_to_cluster_tree(f, &raw, policy)?;
    log::info!(
        "partition: {} raw modules legalized into {} clusters over {} layers",
        raw.module_count(),
        tree.len(),
        tree.depth()
    );
    Ok(tree)
}

/// Hash of everything the datasets depend on.
pub fn dataset_cache_key(f: &Feeder, tree: &ClusterTree, synth: &SynthConfig) -> String {
    let mut h = Sha256::new();
    h.update(f.content_hash().as_bytes());
    h.update(b"\n");
    h.update(tree.export(f).as_bytes());
    h.update(b"\n");
    h.update(synth.fingerprint().as_bytes());
    hex::encode(h.finalize())
}

/// Feeder, tree and per-cluster datasets as reloaded from disk.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub feeder: Feeder,
    pub tree: ClusterTree,
    pub layouts: Vec<IoLayout>,
    pub datasets: Vec<ClusterDataset>,
    /// True when the dataset stage was skipped because the cache matched.
    pub cache_hit: bool,
}

impl Prepared {
    /// Source sample ids of the train and test rows (shared by all clusters).
    pub fn sample_ids(&self) -> (Vec<usize>, Vec<usize>) {
        let d = &self.datasets[0];
        let ids = |rows: &[usize]| rows.iter().map(|&r| d.samples[r]).collect();
        (ids(&d.train), ids(&d.test))
    }
}

/// Parse, partition and dataset stages. Datasets are regenerated only when
/// the cache key in the dataset manifest differs; they are always read back
/// from the CSV files so cached and fresh runs see identical numbers.
pub fn prepare_datasets(cfg: &RunConfig) -> Result<Prepared, StageError> {
    let f = load_feeder(&cfg.feeder).at(Stage::Parse)?;
    let tree = partition_stage(&f, &cfg.policy).at(Stage::Partition)?;
    std::fs::create_dir_all(&cfg.output).map_err(|e| io(&cfg.output, e)).at(Stage::Partition)?;
    let p = cfg.output.join(PARTITION_FILE);
    std::fs::write(&p, tree.export(&f)).map_err(|e| io(&p, e)).at(Stage::Partition)?;

    let layouts = allocate_io(&tree, &f);
    let dir = cfg.output.join(DATASET_DIR);
    let manifest = dir.join("manifest.txt");
    let key = dataset_cache_key(&f, &tree, &cfg.synth);
    let cache_hit = manifest_cache_key(&manifest).as_deref() == Some(key.as_str())
        && (0..tree.len()).all(|id| {
            ["train", "test"].iter().all(|s| crate::synth::dataset_path(&dir, id, s).exists())
        });
    if cache_hit {
        log::info!("datasets: cache key matches, generation skipped");
    } else {
        let profiles = build_load_profiles(&f, &cfg.synth, &BTreeMap::new()).at(Stage::Datasets)?;
        let samples = SampleSet::run(&f, &profiles, &cfg.synth).at(Stage::Datasets)?;
        let ds = generate_datasets(&f, &tree, &layouts, &samples, &cfg.synth).at(Stage::Datasets)?;
        for d in &ds {
            write_dataset(&dir, d).at(Stage::Datasets)?;
        }
        let text = manifest_text(&cfg.synth, &profiles, &samples, &f.content_hash(), &key);
        std::fs::write(&manifest, text).map_err(|e| io(&manifest, e)).at(Stage::Datasets)?;
        log::info!("datasets: {} samples kept, {} failed", samples.kept().len(), samples.failed().len());
    }
    let datasets = layouts
        .iter()
        .map(|l| read_dataset(&dir, l, &f))
        .collect::<Result<Vec<_>, _>>()
        .at(Stage::Datasets)?;
    Ok(Prepared { feeder: f, tree, layouts, datasets, cache_hit })
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub prepared: Prepared,
    pub model: CascadeModel,
    pub train_reports: Vec<TrainReport>,
    pub report: BenchmarkReport,
}

fn output_groups(l: &IoLayout) -> [Vec<usize>; 4] {
    let pick = |q: Quantity| l.outputs.iter().enumerate().filter(|(_, s)| s.quantity == q).map(|(k, _)| k).collect();
    [pick(Quantity::Vmag), pick(Quantity::Vang), pick(Quantity::PHead), pick(Quantity::QHead)]
}

fn write_training_csv(dir: &Path, tree: &ClusterTree, layouts: &[IoLayout], reports: &[TrainReport]) -> Result<(), Error> {
    let p = dir.join("training.csv");
    let mut w = csv::Writer::from_path(&p).map_err(|e| io(&p, e))?;
    w.write_record([
        "cluster",
        "label",
        "layer",
        "inputs",
        "outputs",
        "final_loss",
        "val_mae_vmag_pu",
        "val_mae_vang_deg",
        "val_mae_phead_pu",
        "val_mae_qhead_pu",
    ])
    .map_err(|e| io(&p, e))?;
    for (id, r) in reports.iter().enumerate() {
        let groups = output_groups(&layouts[id]);
        let g = r.group_mae(&groups);
        let mut rec = vec![
            id.to_string(),
            tree.label(id),
            tree.cluster(id).layer.to_string(),
            layouts[id].n_inputs().to_string(),
            layouts[id].n_outputs().to_string(),
            format!("{}", r.epoch_loss.last().copied().unwrap_or(f64::NAN)),
        ];
        // a top cluster has no head columns
        rec.extend(g.iter().zip(&groups).map(|(v, cols)| if cols.is_empty() { String::new() } else { format!("{v}") }));
        w.write_record(&rec).map_err(|e| io(&p, e))?;
    }
    w.flush().map_err(|e| io(&p, e))?;

    let p = dir.join("training_timing.csv");
    let mut w = csv::Writer::from_path(&p).map_err(|e| io(&p, e))?;
    w.write_record(["cluster", "label", "seconds"]).map_err(|e| io(&p, e))?;
    for (id, r) in reports.iter().enumerate() {
        w.write_record([id.to_string(), tree.label(id), format!("{}", r.seconds)]).map_err(|e| io(&p, e))?;
    }
    w.flush().map_err(|e| io(&p, e))
}

fn bench_prepared(prep: &Prepared, cm: &CascadeModel, cfg: &RunConfig) -> Result<BenchmarkReport, StageError> {
    let (_, test_ids) = prep.sample_ids();
    let x = gather_system_inputs(&prep.datasets, prep.feeder.buses().len(), &prep.datasets[0].test);
    let sur = CascadeSurrogate { model: cm, feeder: &prep.feeder };
    let opts = BenchOptions { reps: cfg.bench.reps, solver: cfg.synth.solver.clone(), scatter: true };
    let report = run_benchmark(&prep.feeder, &prep.tree, &sur, &x, &test_ids, &opts).at(Stage::Bench)?;
    emit_report(&report, &cfg.output.join(REPORT_DIR)).at(Stage::Report)?;
    log::info!(
        "bench: {} rows, worst |V| MAE {:.4}%, t_ATS {:.6} s, oracle {:.6} s, speedup {:.1}x",
        report.rows,
        100.0 * report.worst_vmag_mae(),
        report.timing.t_ats,
        report.oracle_seconds,
        report.speedup
    );
    Ok(report)
}

/// Full run: datasets, training (bundle saved), benchmark and reports.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutcome, StageError> {
    let prep = prepare_datasets(cfg)?;
    let (model, train_reports) = train_tree(&prep.feeder, &prep.tree, &prep.datasets, &cfg.train).at(Stage::Train)?;
    for (id, r) in train_reports.iter().enumerate() {
        for w in &r.warnings {
            log::debug!("cluster {}: {w}", prep.tree.label(id));
        }
    }
    let (train_samples, test_samples) = prep.sample_ids();
    let manifest = BundleManifest {
        feeder_hash: model.feeder_hash.clone(),
        partition_hash: model.partition_hash.clone(),
        seed: cfg.train.seed,
        train_samples,
        test_samples,
    };
    save_bundle(&cfg.output.join(BUNDLE_DIR), &model, &prep.feeder, &manifest).at(Stage::Train)?;
    write_training_csv(&cfg.output, &prep.tree, &prep.layouts, &train_reports).at(Stage::Train)?;
    let report = bench_prepared(&prep, &model, cfg)?;
    Ok(PipelineOutcome { prepared: prep, model, train_reports, report })
}

/// Benchmarks a previously saved bundle against the cached test rows.
pub fn run_bench(cfg: &RunConfig) -> Result<BenchmarkReport, StageError> {
    let prep = prepare_datasets(cfg)?;
    let (cm, manifest) = load_bundle(&cfg.output.join(BUNDLE_DIR), &prep.feeder).at(Stage::Bench)?;
    let (_, test_ids) = prep.sample_ids();
    if let Some(s) = test_ids.iter().find(|s| manifest.train_samples.contains(s)) {
        return Err(Error::Input(format!("test sample {s} was used to train the bundle"))).at(Stage::Bench);
    }
    if cm.partition_hash != crate::cascade::partition_hash(&prep.tree, &prep.feeder) {
        return Err(Error::Input("bundle partition differs from the configured partition".into())).at(Stage::Bench);
    }
    bench_prepared(&prep, &cm, cfg)
}

/// Grid search on the configured cluster; writes `sweep.csv` (ranking) and
/// `sweep_timing.csv`.
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<GridEntry>, StageError> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("no [sweep] section".into()))
        .at(Stage::Config)?;
    let prep = prepare_datasets(cfg)?;
    let ds = prep
        .datasets
        .get(sweep.cluster)
        .ok_or_else(|| Error::Config(format!("sweep cluster {} does not exist ({} clusters)", sweep.cluster, prep.tree.len())))
        .at(Stage::Config)?;
    let ranking = grid_search(ds, &sweep.grid, &cfg.train).at(Stage::Sweep)?;
    write_sweep_csv(&cfg.output, &ranking).at(Stage::Sweep)?;
    Ok(ranking)
}

pub fn write_sweep_csv(dir: &Path, ranking: &[GridEntry]) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let p = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&p).map_err(|e| io(&p, e))?;
    w.write_record([
        "rank",
        "cell",
        "hidden_scale",
        "hidden_layers",
        "activation_hidden",
        "activation_output",
        "optimizer",
        "learning_rate",
        "batch_size",
        "epochs",
        "val_mae",
        "diverged",
    ])
    .map_err(|e| io(&p, e))?;
    for (rank, e) in ranking.iter().enumerate() {
        let c = &e.config;
        w.write_record([
            (rank + 1).to_string(),
            e.cell.to_string(),
            format!("{}", c.hidden_scale),
            c.hidden_layers.to_string(),
            c.activation_hidden.to_string(),
            c.activation_output.to_string(),
            c.optimizer.to_string(),
            format!("{}", c.learning_rate()),
            c.batch_size.to_string(),
            c.epochs.to_string(),
            format!("{}", e.val_mae),
            e.diverged.to_string(),
        ])
        .map_err(|e| io(&p, e))?;
    }
    w.flush().map_err(|e| io(&p, e))?;
    let p = dir.join("sweep_timing.csv");
    let mut w = csv::Writer::from_path(&p).map_err(|e| io(&p, e))?;
    w.write_record(["cell", "seconds"]).map_err(|e| io(&p, e))?;
    for e in ranking {
        w.write_record([e.cell.to_string(), format!("{}", e.seconds)]).map_err(|e| io(&p, e))?;
    }
    w.flush().map_err(|e| io(&p, e))
}

/// Multipliers file:
///
/// ```text
/// [multipliers]
/// * 1.0        # every load
/// 3 0.5        # load 3 (0-based, feeder order) overrides
/// ```
///
/// Loads not mentioned default to 1.
pub fn parse_multipliers(text: &str, n_loads: usize) -> Result<Vec<f64>, Error> {
    let bad = |e: crate::textfmt::SyntaxError| Error::Input(format!("multipliers: {e}"));
    let doc = Document::parse(text).map_err(bad)?;
    if let Some(s) = doc.sections.iter().find(|s| s.name != "multipliers") {
        return Err(Error::Input(format!("multipliers: unknown section [{}]", s.name)));
    }
    let s = doc.require("multipliers").map_err(bad)?;
    let mut out = vec![1.0; n_loads];
    let mut ordered: Vec<_> = s.lines.iter().collect();
    // the wildcard applies first so explicit entries win
    ordered.sort_by_key(|l| l.key() != "*");
    for l in ordered {
        l.expect_len(2, 2).map_err(bad)?;
        let v = l.f64_at(1).map_err(bad)?;
        if v < 0.0 {
            return Err(bad(l.error_at(1, "multipliers must be non-negative")));
        }
        if l.key() == "*" {
            out.iter_mut().for_each(|m| *m = v);
        } else {
            let k = l.usize_at(0).map_err(bad)?;
            if k >= n_loads {
                return Err(bad(l.error_at(0, format!("load {k} does not exist ({n_loads} loads)"))));
            }
            out[k] = v;
        }
    }
    Ok(out)
}

/// One row per node-phase: `bus,phase,vmag_pu,vang_deg`.
pub fn solution_csv(f: &Feeder, sol: &PowerFlowSolution) -> String {
    let mut out = String::from("bus,phase,vmag_pu,vang_deg\n");
    for (row, &(bus, phase)) in f.index().rows().iter().enumerate() {
        out.push_str(&format!("{},{},{:.10},{:.8}\n", f.bus_id(bus), phase, sol.vmag(row), sol.vang_deg(row)));
    }
    out
}
