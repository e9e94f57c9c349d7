use std::collections::BTreeMap;

use hpf_core::cascade::*;
use hpf_core::feeder::{parse_feeder, Feeder};
use hpf_core::neural::{predict_mlp, train_mlp, train_on_dataset, MlpConfig};
use hpf_core::partition::{detect_communities, legalize_to_cluster_tree, ClusterTree, DetectOptions, FlowGraph, GranularityPolicy};
use hpf_core::synth::{build_load_profiles, generate_datasets, ClusterDataset, SampleSet, SynthConfig};
use proptest::prelude::*;

fn desk_feeder() -> Feeder {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../assets/feeders/synthetic36.feeder")).unwrap();
    parse_feeder(&text).unwrap()
}

fn desk_tree(f: &Feeder) -> ClusterTree {
    let g = FlowGraph::from_feeder(f).unwrap();
    legalize_to_cluster_tree(f, &detect_communities(&g, &DetectOptions::default()), &GranularityPolicy::default()).unwrap()
}

fn datasets(f: &Feeder, tree: &ClusterTree, n: usize) -> Vec<ClusterDataset> {
    let cfg = SynthConfig { n_samples: n, ..Default::default() };
    let profiles = build_load_profiles(f, &cfg, &BTreeMap::new()).unwrap();
    let samples = SampleSet::run(f, &profiles, &cfg).unwrap();
    generate_datasets(f, tree, &allocate_io(tree, f), &samples, &cfg).unwrap()
}

fn quick() -> MlpConfig {
    MlpConfig { epochs: 15, ..Default::default() }
}

#[test]
fn published_cluster_times_give_published_critical_paths() {
    // A on top; B and C below A; D below C
    let t = critical_path_time(&[0.012, 0.005, 0.004, 0.006], &[None, Some(0), Some(0), Some(2)]).unwrap();
    assert!((t - 0.022).abs() < 1e-12, "{t}");
    // A on top with B..G all directly below
    let times = [7.005, 4.743, 1.841, 2.367, 3.474, 0.388, 0.246];
    let parents = [None, Some(0), Some(0), Some(0), Some(0), Some(0), Some(0)];
    let t = critical_path_time(&times, &parents).unwrap();
    assert!((t - 11.748).abs() < 1e-12, "{t}");
}

proptest! {
    #[test]
    fn critical_path_is_bracketed(times in prop::collection::vec(0.0f64..10.0, 1..12), links in prop::collection::vec(any::<prop::sample::Index>(), 12)) {
        // parent of k is some earlier cluster
        let parents: Vec<Option<usize>> = (0..times.len()).map(|k| (k > 0).then(|| links[k].index(k))).collect();
        let t = critical_path_time(&times, &parents).unwrap();
        let sum: f64 = times.iter().sum();
        let max = times.iter().copied().fold(0.0, f64::max);
        prop_assert!(t <= sum + 1e-12);
        prop_assert!(t >= max - 1e-12);
    }
}

#[test]
fn cascade_wiring_and_parallel_equivalence() {
    let f = desk_feeder();
    let tree = desk_tree(&f);
    let ds = datasets(&f, &tree, 200);
    let (cm, reports) = train_tree(&f, &tree, &ds, &quick()).unwrap();
    assert_eq!(reports.len(), tree.len());

    // concurrent training equals one-by-one training with the same seeds
    for (id, d) in ds.iter().enumerate() {
        let c = MlpConfig { seed: quick().seed + id as u64, ..quick() };
        assert_eq!(train_on_dataset(d, &c).unwrap().0.network, cm.models[id].network, "cluster {id}");
    }

    let x = gather_system_inputs(&ds, f.buses().len(), &ds[0].test);
    let (par, t) = predict_cascade(&cm, &x, EvalMode::Parallel).unwrap();
    let (seq, _) = predict_cascade(&cm, &x, EvalMode::Sequential).unwrap();
    assert_eq!(par, seq);
    par.check_wiring(&cm).unwrap();
    for (id, l) in cm.layouts.iter().enumerate() {
        for &(child, off) in &l.fed {
            let h = cm.layouts[child].head.unwrap();
            for k in 0..6 {
                let fed: Vec<u64> = par.inputs[id].column(off + k).iter().map(|v| v.to_bits()).collect();
                let head: Vec<u64> = par.outputs[child].column(h + k).iter().map(|v| v.to_bits()).collect();
                assert_eq!(fed, head);
            }
        }
    }
    let (vm, va) = par.node_voltages(&cm, &f).unwrap();
    assert_eq!((vm.ncols(), va.ncols()), (f.index().len(), f.index().len()));
    assert_eq!(vm.nrows(), x.nrows());
    assert!(t.t_ats <= t.total() + 1e-15);

    // load slots of the system inputs reproduce each dataset's own load columns
    for d in &ds {
        for (k, s) in d.layout.inputs.iter().enumerate() {
            if matches!(s.quantity, Quantity::PLoad | Quantity::QLoad) {
                for (i, &r) in d.test.iter().enumerate() {
                    assert_eq!(par.inputs[d.cluster][(i, k)], d.inputs[(r, k)]);
                }
            }
        }
    }

    // tampering with a fed value is caught
    let mut bad = par.clone();
    let off = cm.layouts[0].fed[0].1;
    bad.inputs[0][(0, off)] += 1.0;
    assert!(bad.check_wiring(&cm).is_err());
}

#[test]
fn single_cluster_tree_is_plain_mlp() {
    let f = desk_feeder();
    let tree = ClusterTree::from_assignment(&f, &vec![0; f.buses().len()]).unwrap();
    let ds = datasets(&f, &tree, 120);
    let (cm, _) = train_tree(&f, &tree, &ds, &quick()).unwrap();
    let plain = train_mlp(&ds[0].train_inputs(), &ds[0].train_outputs(), None, &quick()).unwrap().0;
    assert_eq!(plain.network, cm.models[0].network);
    let x = gather_system_inputs(&ds, f.buses().len(), &ds[0].test);
    let (p, t) = predict_cascade(&cm, &x, EvalMode::Parallel).unwrap();
    assert_eq!(p.outputs[0], predict_mlp(&plain, &ds[0].test_inputs()).unwrap().outputs);
    assert_eq!(t.t_ats, t.cluster_seconds[0]);
}

#[test]
fn missing_dataset_names_the_cluster() {
    let f = desk_feeder();
    let tree = desk_tree(&f);
    let mut ds = datasets(&f, &tree, 60);
    ds.remove(2);
    match train_tree(&f, &tree, &ds, &quick()) {
        Err(CascadeError::MissingDataset(2)) => {}
        other => panic!("expected missing dataset 2, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn bundle_round_trip_predicts_identically() {
    let f = desk_feeder();
    let tree = desk_tree(&f);
    let ds = datasets(&f, &tree, 100);
    let (cm, _) = train_tree(&f, &tree, &ds, &quick()).unwrap();
    let dir = std::env::temp_dir().join(format!("hpf-bundle-{}", std::process::id()));
    let manifest = BundleManifest {
        feeder_hash: cm.feeder_hash.clone(),
        partition_hash: cm.partition_hash.clone(),
        seed: 1,
        train_samples: ds[0].train.iter().map(|&r| ds[0].samples[r]).collect(),
        test_samples: ds[0].test.iter().map(|&r| ds[0].samples[r]).collect(),
    };
    save_bundle(&dir, &cm, &f, &manifest).unwrap();
    let (back, m) = load_bundle(&dir, &f).unwrap();
    assert_eq!(m, manifest);
    assert_eq!(back, cm);
    assert!(m.train_samples.iter().all(|s| !m.test_samples.contains(s)));

    let other = parse_feeder(
        &std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../assets/feeders/two_bus.feeder")).unwrap(),
    )
    .unwrap();
    assert!(matches!(load_bundle(&dir, &other), Err(CascadeError::Bundle(_))));
    std::fs::remove_dir_all(&dir).ok();
}
