use std::collections::BTreeMap;

use hpf_core::cascade::allocate_io;
use hpf_core::feeder::{parse_feeder, Feeder};
use hpf_core::fixtures::two_bus_feeder;
use hpf_core::partition::{detect_communities, legalize_to_cluster_tree, ClusterTree, DetectOptions, FlowGraph, GranularityPolicy};
use hpf_core::synth::*;
use num_complex::Complex64;

fn desk() -> (Feeder, ClusterTree) {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../assets/feeders/synthetic36.feeder")).unwrap();
    let f = parse_feeder(&text).unwrap();
    let g = FlowGraph::from_feeder(&f).unwrap();
    let p = detect_communities(&g, &DetectOptions::default());
    let tree = legalize_to_cluster_tree(&f, &p, &GranularityPolicy::default()).unwrap();
    (f, tree)
}

fn small_cfg(n: usize) -> SynthConfig {
    SynthConfig { n_samples: n, ..Default::default() }
}

fn build(f: &Feeder, tree: &ClusterTree, cfg: &SynthConfig) -> Vec<ClusterDataset> {
    let layouts = allocate_io(tree, f);
    let profiles = build_load_profiles(f, cfg, &BTreeMap::new()).unwrap();
    let samples = SampleSet::run(f, &profiles, cfg).unwrap();
    generate_datasets(f, tree, &layouts, &samples, cfg).unwrap()
}

fn assert_boundaries_match(tree: &ClusterTree, ds: &[ClusterDataset]) {
    for (id, d) in ds.iter().enumerate() {
        for &(child, off) in &d.layout.fed {
            let h = ds[child].layout.head.unwrap();
            for r in 0..d.rows() {
                for k in 0..6 {
                    assert_eq!(
                        d.inputs[(r, off + k)].to_bits(),
                        ds[child].outputs[(r, h + k)].to_bits(),
                        "cluster {id} row {r} slot {k}"
                    );
                }
            }
        }
        assert_eq!(d.layout.fed.len(), tree.cluster(id).children.len());
    }
}

#[test]
fn datasets_are_deterministic_and_boundary_consistent() {
    let (f, tree) = desk();
    let cfg = small_cfg(250);
    let a = build(&f, &tree, &cfg);
    let b = build(&f, &tree, &cfg);
    assert_eq!(a, b);
    assert_boundaries_match(&tree, &a);
    for d in &a {
        assert_eq!(d.rows(), 250);
        assert_eq!((d.train.len(), d.test.len()), (200, 50));
        assert!(d.train.iter().all(|r| !d.test.contains(r)));
        assert_eq!(d.inputs.ncols(), d.layout.n_inputs());
        assert_eq!(d.outputs.ncols(), d.layout.n_outputs());
        assert!(d.inputs.iter().chain(d.outputs.iter()).all(|v| v.is_finite()));
    }
    // every bus-phase voltage appears in exactly one cluster's outputs
    let vm: usize = a.iter().map(|d| d.output_names.iter().filter(|n| n.starts_with("Vmag")).count()).sum();
    assert_eq!(vm, f.index().len());
}

#[test]
fn thousand_samples_split_800_200() {
    let (f, tree) = desk();
    let d = generate_cluster_dataset(&f, &tree, 0, &BTreeMap::new(), &small_cfg(1000)).unwrap();
    assert_eq!((d.train.len(), d.test.len()), (800, 200));
}

#[test]
fn csv_round_trip_keeps_boundaries_consistent() {
    let (f, tree) = desk();
    let ds = build(&f, &tree, &small_cfg(60));
    let dir = std::env::temp_dir().join(format!("hpf-synth-{}", std::process::id()));
    for d in &ds {
        write_dataset(&dir, d).unwrap();
    }
    let back: Vec<ClusterDataset> = ds.iter().map(|d| read_dataset(&dir, &d.layout, &f).unwrap()).collect();
    for (a, b) in ds.iter().zip(&back) {
        assert_eq!(a.samples, b.samples);
        assert_eq!((&a.train, &a.test), (&b.train, &b.test));
        for (x, y) in a.inputs.iter().zip(b.inputs.iter()).chain(a.outputs.iter().zip(b.outputs.iter())) {
            assert!((x - y).abs() <= 1e-8 * x.abs().max(1e-30), "{x} vs {y}");
        }
    }
    assert_boundaries_match(&tree, &back);

    // header mismatch is reported against the layout
    let wrong = ds[1].layout.clone();
    let mut renamed = wrong.clone();
    renamed.cluster = 0;
    assert!(matches!(read_dataset(&dir, &renamed, &f), Err(SynthError::Layout(_))));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn mostly_divergent_sweep_aborts() {
    // 100x nominal collapse load on a weak line: every sample fails
    let f = two_bus_feeder(Complex64::new(0.05, 0.05), Complex64::new(40.0, 20.0));
    let cfg = small_cfg(20);
    let profiles = build_load_profiles(&f, &cfg, &BTreeMap::new()).unwrap();
    match SampleSet::run(&f, &profiles, &cfg) {
        Err(SynthError::TooManyFailures { failed, total }) => {
            assert_eq!(total, 20);
            assert!(failed > 2);
        }
        other => panic!("expected abort, got {other:?}"),
    }
}

#[test]
fn unknown_shape_is_rejected() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../assets/feeders/two_bus.feeder"))
        .unwrap()
        .replace("residential", "mystery");
    let f = parse_feeder(&text).unwrap();
    assert!(matches!(
        build_load_profiles(&f, &small_cfg(10), &BTreeMap::new()),
        Err(SynthError::InvalidShape(_))
    ));
    let mut bases = BTreeMap::new();
    bases.insert("mystery".to_string(), LoadShape::new("mystery", vec![0.2, 0.4, 1.0]).unwrap());
    let p = build_load_profiles(&f, &small_cfg(10), &bases).unwrap();
    assert_eq!(p.series[0].len(), 10);
}

#[test]
fn manifest_records_cache_key() {
    let (f, _) = desk();
    let cfg = small_cfg(12);
    let profiles = build_load_profiles(&f, &cfg, &BTreeMap::new()).unwrap();
    let samples = SampleSet::run(&f, &profiles, &cfg).unwrap();
    let text = manifest_text(&cfg, &profiles, &samples, &f.content_hash(), "abc123");
    let path = std::env::temp_dir().join(format!("hpf-manifest-{}.txt", std::process::id()));
    std::fs::write(&path, text).unwrap();
    assert_eq!(manifest_cache_key(&path).as_deref(), Some("abc123"));
    std::fs::remove_file(&path).ok();
}
