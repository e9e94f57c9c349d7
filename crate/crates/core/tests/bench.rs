use std::collections::BTreeMap;

use hpf_core::bench::*;
use hpf_core::cascade::*;
use hpf_core::feeder::{parse_feeder, Feeder};
use hpf_core::neural::MlpConfig;
use hpf_core::partition::{detect_communities, legalize_to_cluster_tree, ClusterTree, DetectOptions, FlowGraph, GranularityPolicy};
use hpf_core::solver::SolverOptions;
use hpf_core::synth::{build_load_profiles, generate_datasets, ClusterDataset, SampleSet, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(n: usize) -> (Feeder, ClusterTree, Vec<ClusterDataset>) {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../assets/feeders/synthetic36.feeder")).unwrap();
    let f = parse_feeder(&text).unwrap();
    let g = FlowGraph::from_feeder(&f).unwrap();
    let tree = legalize_to_cluster_tree(&f, &detect_communities(&g, &DetectOptions::default()), &GranularityPolicy::default()).unwrap();
    let cfg = SynthConfig { n_samples: n, ..Default::default() };
    let profiles = build_load_profiles(&f, &cfg, &BTreeMap::new()).unwrap();
    let samples = SampleSet::run(&f, &profiles, &cfg).unwrap();
    let ds = generate_datasets(&f, &tree, &allocate_io(&tree, &f), &samples, &cfg).unwrap();
    (f, tree, ds)
}

/// Straight loops over the definitions, no shared code with the library.
fn naive(truth: &[f64], pred: &[f64]) -> (f64, f64, f64, f64) {
    let n = truth.len() as f64;
    let mut abs = Vec::new();
    let mut rel = Vec::new();
    for i in 0..truth.len() {
        abs.push((truth[i] - pred[i]).abs());
        rel.push((truth[i] - pred[i]).abs() / truth[i].abs() * 100.0);
    }
    let mut mae = 0.0;
    let mut mape = 0.0;
    for i in 0..abs.len() {
        mae += abs[i];
        mape += rel[i];
    }
    let maxae = abs.iter().cloned().fold(f64::MIN, f64::max);
    let maxape = rel.iter().cloned().fold(f64::MIN, f64::max);
    (mae / n, maxae, mape / n, maxape)
}

#[test]
fn metrics_agree_with_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let n = rng.random_range(1..60);
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0) * if rng.random_bool(0.3) { -1.0 } else { 1.0 }).collect();
        let pred: Vec<f64> = truth.iter().map(|t| t + rng.random_range(-0.2..0.2)).collect();
        let m = compute_metrics(&truth, &pred, true).unwrap();
        let (mae, maxae, mape, maxape) = naive(&truth, &pred);
        assert!((m.mae - mae).abs() <= 1e-12);
        assert!((m.maxae - maxae).abs() <= 1e-12);
        assert!((m.mape.unwrap() - mape).abs() <= 1e-12 * mape.max(1.0));
        assert!((m.maxape.unwrap() - maxape).abs() <= 1e-12 * maxape.max(1.0));
        assert!(m.maxae >= m.mae && m.mae >= 0.0);
    }
}

#[test]
fn oracle_loopback_has_zero_error() {
    let (f, tree, ds) = setup(80);
    let x = gather_system_inputs(&ds, f.buses().len(), &ds[0].test);
    let ids: Vec<usize> = ds[0].test.iter().map(|&r| ds[0].samples[r]).collect();
    let sur = OracleSurrogate::new(&f, &tree, SolverOptions::default()).unwrap();
    let r = run_benchmark(&f, &tree, &sur, &x, &ids, &BenchOptions { reps: 3, ..Default::default() }).unwrap();
    assert_eq!(r.clusters.len(), tree.len());
    assert!(r.excluded.is_empty());
    for c in &r.clusters {
        assert_eq!(c.vmag.maxae, 0.0);
        assert!(c.vang.iter().flatten().all(|m| m.maxae == 0.0));
        assert!(c.head_s.is_none_or(|m| m.maxae == 0.0));
    }
    // both sides time the same solves; only scheduling noise separates them
    assert!(r.speedup > 0.3 && r.speedup < 3.0, "loopback speedup {}", r.speedup);
}

#[test]
fn cascade_report_files_match_the_report() {
    let (f, tree, ds) = setup(150);
    let (cm, _) = train_tree(&f, &tree, &ds, &MlpConfig { epochs: 10, ..Default::default() }).unwrap();
    let x = gather_system_inputs(&ds, f.buses().len(), &ds[0].test);
    let ids: Vec<usize> = ds[0].test.iter().map(|&r| ds[0].samples[r]).collect();
    let sur = CascadeSurrogate { model: &cm, feeder: &f };
    let r = run_benchmark(&f, &tree, &sur, &x, &ids, &BenchOptions { reps: 3, ..Default::default() }).unwrap();

    // t_ATS is re-derivable from the stored per-cluster times
    assert_eq!(critical_path_time(&r.timing.cluster_seconds, &tree.parents()).unwrap(), r.timing.t_ats);
    assert_eq!(r.speedup, r.oracle_seconds / r.timing.t_ats);
    assert!(r.clusters.iter().all(|c| c.head_s.is_some() == tree.cluster(c.cluster).parent.is_some()));

    let dir = std::env::temp_dir().join(format!("hpf-report-{}", std::process::id()));
    emit_report(&r, &dir).unwrap();
    let back = read_metrics_csv(&dir.join("metrics.csv")).unwrap();
    assert_eq!(back, r.clusters);
    for c in tree.clusters() {
        let label = tree.label(c.id);
        let node_phases: usize = c.nodes.iter().map(|&b| f.buses()[b].phases.len()).sum();
        let text = std::fs::read_to_string(dir.join(format!("scatter_{label}_vmag.csv"))).unwrap();
        assert_eq!(text.lines().count() - 1, r.rows * node_phases);
        assert!(text.starts_with("truth,predicted,bus,phase,sample"));
    }
    let timing = std::fs::read_to_string(dir.join("timing.csv")).unwrap();
    assert_eq!(timing.lines().count(), 1 + tree.len());
    std::fs::remove_dir_all(&dir).ok();
}
