use std::collections::BTreeMap;

use hpf_core::cascade::allocate_io;
use hpf_core::feeder::parse_feeder;
use hpf_core::neural::*;
use hpf_core::partition::{detect_communities, legalize_to_cluster_tree, DetectOptions, FlowGraph, GranularityPolicy};
use hpf_core::synth::{generate_cluster_dataset, SynthConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest relative gap between the analytic gradient and central differences.
fn gradient_gap(net: &Network, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let (_, g) = net.loss_and_gradient(x, y);
    let p0 = net.params();
    let h = 1e-6;
    let mut probe = net.clone();
    let mut fd = vec![0.0; p0.len()];
    for k in 0..p0.len() {
        let mut p = p0.clone();
        p[k] = p0[k] + h;
        probe.set_params(&p);
        let up = probe.loss(x, y);
        p[k] = p0[k] - h;
        probe.set_params(&p);
        let down = probe.loss(x, y);
        fd[k] = (up - down) / (2.0 * h);
    }
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&g).max(norm(&fd)).max(1e-10)
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for hidden in Activation::ALL {
        for output in Activation::ALL {
            let mut worst: f64 = 0.0;
            for probe in 0..100 {
                let (n_in, n_out) = (rng.random_range(1..5), rng.random_range(1..4));
                let cfg = MlpConfig {
                    hidden_neurons: Some(rng.random_range(2..7)),
                    hidden_layers: 1 + probe % 2,
                    activation_hidden: hidden,
                    activation_output: output,
                    seed: rng.random(),
                    ..Default::default()
                };
                let mut net = Network::init(n_in, n_out, &cfg);
                let p: Vec<f64> = net.params().iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
                net.set_params(&p);
                let rows = rng.random_range(1..9);
                let x = DMatrix::from_fn(rows, n_in, |_, _| rng.random_range(-2.0..2.0));
                let y = DMatrix::from_fn(rows, n_out, |_, _| rng.random_range(-1.0..1.0));
                worst = worst.max(gradient_gap(&net, &x, &y));
            }
            assert!(worst <= 1e-4, "{hidden}/{output}: relative error {worst:e}");
        }
    }
}

proptest! {
    #[test]
    fn normalization_round_trip(rows in 2usize..20, cols in 1usize..6, seed in any::<u64>(), spread in 1e-3f64..1e6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0) * spread + spread);
        let (n, _) = Normalizer::fit(&x, 1.0);
        prop_assert!(n.scale.iter().all(|s| *s > 0.0));
        let back = n.denormalize(&n.normalize(&x));
        for (a, b) in x.iter().zip(back.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300) + 1e-300, "{} vs {}", a, b);
        }
    }

    #[test]
    fn prediction_is_repeatable(seed in any::<u64>(), rows in 1usize..12) {
        let cfg = MlpConfig { hidden_neurons: Some(5), seed, ..Default::default() };
        let m = MlpModel {
            config: cfg.clone(),
            network: Network::init(3, 2, &cfg),
            input_norm: Normalizer::identity(3),
            output_norm: Normalizer::identity(2),
            input_min: vec![-1.0; 3],
            input_max: vec![1.0; 3],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x = DMatrix::from_fn(rows, 3, |_, _| rng.random_range(-1.0..1.0));
        let a = predict_mlp(&m, &x).unwrap();
        let b = predict_mlp(&m, &x).unwrap();
        prop_assert_eq!(a.outputs.nrows(), rows);
        prop_assert_eq!(a, b);
        // row order: predicting a single row matches the batch row
        let single = predict_mlp(&m, &x.rows(rows - 1, 1).into_owned()).unwrap();
        prop_assert_eq!(single.outputs.row(0).into_owned(), predict_mlp(&m, &x).unwrap().outputs.row(rows - 1).into_owned());
    }
}

fn desk_cluster_a(n: usize) -> hpf_core::synth::ClusterDataset {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../assets/feeders/synthetic36.feeder")).unwrap();
    let f = parse_feeder(&text).unwrap();
    let g = FlowGraph::from_feeder(&f).unwrap();
    let tree = legalize_to_cluster_tree(&f, &detect_communities(&g, &DetectOptions::default()), &GranularityPolicy::default()).unwrap();
    assert_eq!(allocate_io(&tree, &f).len(), tree.len());
    generate_cluster_dataset(&f, &tree, 0, &BTreeMap::new(), &SynthConfig { n_samples: n, ..Default::default() }).unwrap()
}

#[test]
fn grid_ranks_every_cell_ascending() {
    let ds = desk_cluster_a(150);
    let base = MlpConfig { epochs: 5, ..Default::default() };
    let mut grid = Grid::single(&base);
    grid.optimizer = vec![Optimizer::Sgd, Optimizer::Adam];
    grid.batch_size = vec![32, 64];
    let ranked = grid_search(&ds, &grid, &base).unwrap();
    assert_eq!(ranked.len(), 4);
    assert!(ranked.windows(2).all(|w| w[0].val_mae <= w[1].val_mae));
    let mut cells: Vec<usize> = ranked.iter().map(|e| e.cell).collect();
    cells.sort_unstable();
    assert_eq!(cells, vec![0, 1, 2, 3]);
    let strip = |v: Vec<GridEntry>| -> Vec<GridEntry> { v.into_iter().map(|e| GridEntry { seconds: 0.0, ..e }).collect() };
    assert_eq!(strip(grid_search(&ds, &grid, &base).unwrap()), strip(ranked));

    let one = grid_search(&ds, &Grid::single(&base), &base).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].config, base);
}

#[test]
fn dataset_training_reports_per_column_mae() {
    let ds = desk_cluster_a(150);
    let cfg = MlpConfig { epochs: 10, ..Default::default() };
    let (m, r) = train_on_dataset(&ds, &cfg).unwrap();
    assert_eq!(m.n_inputs(), ds.layout.n_inputs());
    assert_eq!(m.n_outputs(), ds.layout.n_outputs());
    assert_eq!(r.epoch_loss.len(), 10);
    assert_eq!(r.val_mae.len(), ds.layout.n_outputs());
    assert!(r.val_mae.iter().all(|v| v.is_finite() && *v >= 0.0));
}
