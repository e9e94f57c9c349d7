//! Small deterministic feeders for tests, examples and property checks.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::feeder::{Block3, Branch, Bus, BusKind, Feeder, Load, Phase, PhaseSet, Source, ZERO_BLOCK};

/// Base line-to-neutral voltage of a 4.16 kV system, kV.
pub const BASE_KV_LN: f64 = 2.4018;
/// Per-phase base power, kVA.
pub const BASE_KVA: f64 = 1000.0;

/// Overhead line impedance per mile (ohm), three-wire phasing ABC.
const Z_ABC: [[(f64, f64); 3]; 3] = [
    [(0.3465, 1.0179), (0.1560, 0.5017), (0.1580, 0.4236)],
    [(0.1560, 0.5017), (0.3375, 1.0478), (0.1535, 0.3849)],
    [(0.1580, 0.4236), (0.1535, 0.3849), (0.3414, 1.0348)],
];
const Z_TWO: [[(f64, f64); 2]; 2] = [[(1.3294, 1.3471), (0.2066, 0.4591)], [(0.2066, 0.4591), (1.3238, 1.3569)]];
const Z_ONE: (f64, f64) = (1.3292, 1.3475);

fn z_base() -> f64 {
    (BASE_KV_LN * 1e3).powi(2) / (BASE_KVA * 1e3)
}

/// Series admittance block in per-unit for a line of `miles` over `phases`.
pub fn line_admittance(phases: PhaseSet, miles: f64) -> Block3 {
    let idx: Vec<usize> = phases.iter().map(Phase::index).collect();
    let k = idx.len();
    let zb = z_base();
    let z = DMatrix::from_fn(k, k, |a, b| {
        let (r, x) = match k {
            3 => Z_ABC[a][b],
            2 => Z_TWO[a][b],
            _ => Z_ONE,
        };
        Complex64::new(r, x) * (miles / zb)
    });
    let y = z.try_inverse().expect("line impedance is non-singular");
    let mut out = ZERO_BLOCK;
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            out[i][j] = y[(a, b)];
        }
    }
    out
}

fn bus(i: usize, phases: PhaseSet) -> Bus {
    Bus {
        id: format!("{}", i + 1),
        phases,
        kind: if i == 0 { BusKind::Slack } else { BusKind::Load },
        base_kv: BASE_KV_LN,
    }
}

/// Radial feeder with `n` buses (n ≥ 2): three-phase trunk, occasional one-
/// and two-phase laterals, 0.05-0.3 mile segments and loads on most buses.
pub fn random_radial_feeder(n: usize, seed: u64) -> Feeder {
    assert!(n >= 2, "a feeder needs at least two buses");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phases = vec![PhaseSet::ABC];
    let mut branches = Vec::with_capacity(n - 1);
    for i in 1..n {
        // favour recent buses so trees get some depth
        let lo = i.saturating_sub(4);
        let parent = if rng.random_bool(0.8) { rng.random_range(lo..i) } else { rng.random_range(0..i) };
        let pp = phases[parent];
        // the first segment carries every phase so no slack phase is isolated
        let mine = if i > 1 && pp.len() > 1 && rng.random_bool(0.2) {
            let present: Vec<Phase> = pp.iter().collect();
            let keep = rng.random_range(1..present.len());
            let start = rng.random_range(0..present.len());
            let subset: Vec<Phase> = (0..keep).map(|k| present[(start + k) % present.len()]).collect();
            PhaseSet::new(&subset).expect("non-empty subset")
        } else {
            pp
        };
        phases.push(mine);
        let miles = rng.random_range(0.05..0.3);
        branches.push(Branch {
            from: parent,
            to: i,
            series: line_admittance(mine, miles),
            shunt: ZERO_BLOCK,
        });
    }
    let shapes = ["residential", "commercial", "industrial"];
    let mut loads = Vec::new();
    for (i, ph) in phases.iter().enumerate().skip(1) {
        if !rng.random_bool(0.75) {
            continue;
        }
        let shape = shapes[rng.random_range(0..shapes.len())];
        for p in ph.iter() {
            let kw: f64 = rng.random_range(5.0..20.0);
            let pf: f64 = rng.random_range(0.85..0.95);
            loads.push(Load {
                bus: i,
                phase: p,
                base_p_kw: (kw * 10.0).round() / 10.0,
                base_q_kvar: (kw * pf.acos().tan() * 10.0).round() / 10.0,
                shape_id: shape.to_string(),
            });
        }
    }
    let buses = phases.iter().enumerate().map(|(i, &p)| bus(i, p)).collect();
    Feeder::new(buses, branches, loads, BASE_KVA, Source::default()).expect("fixture is well formed")
}

/// Phase-A-only two-bus feeder with series impedance `z` (pu) and load `s`
/// (pu, consumption positive) at bus 2.
pub fn two_bus_feeder(z: Complex64, s: Complex64) -> Feeder {
    let a = PhaseSet::new(&[Phase::A]).expect("one phase");
    let mut series = ZERO_BLOCK;
    series[0][0] = z.inv();
    let branches = vec![Branch { from: 0, to: 1, series, shunt: ZERO_BLOCK }];
    let loads = vec![Load {
        bus: 1,
        phase: Phase::A,
        base_p_kw: s.re * BASE_KVA,
        base_q_kvar: s.im * BASE_KVA,
        shape_id: "residential".to_string(),
    }];
    Feeder::new(vec![bus(0, a), bus(1, a)], branches, loads, BASE_KVA, Source::default())
        .expect("fixture is well formed")
}

/// Balanced three-phase chain with identical loads on every phase: all three
/// phases must solve to the same magnitudes.
pub fn balanced_chain(n: usize, load_kw: f64) -> Feeder {
    assert!(n >= 2);
    let mut series = ZERO_BLOCK;
    let y = Complex64::new(0.01, 0.02).inv();
    for (i, row) in series.iter_mut().enumerate() {
        row[i] = y;
    }
    let branches = (1..n)
        .map(|i| Branch { from: i - 1, to: i, series, shunt: ZERO_BLOCK })
        .collect();
    let loads = (1..n)
        .flat_map(|i| {
            Phase::ALL.into_iter().map(move |p| Load {
                bus: i,
                phase: p,
                base_p_kw: load_kw,
                base_q_kvar: load_kw * 0.4,
                shape_id: "residential".to_string(),
            })
        })
        .collect();
    let buses = (0..n).map(|i| bus(i, PhaseSet::ABC)).collect();
    Feeder::new(buses, branches, loads, BASE_KVA, Source::default()).expect("fixture is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_feeders_validate() {
        for seed in 0..20 {
            let f = random_radial_feeder(30, seed);
            assert!(f.validate().is_empty(), "seed {seed}: {:?}", f.validate());
            assert_eq!(f.branches().len(), 29);
        }
    }

    #[test]
    fn line_block_inverts_impedance() {
        let y = line_admittance(PhaseSet::new(&[Phase::B]).unwrap(), 1.0);
        let z = Complex64::new(Z_ONE.0, Z_ONE.1) / z_base();
        assert!((y[1][1] * z - 1.0).norm() < 1e-12);
        assert_eq!(y[0][0], Complex64::new(0.0, 0.0));
    }
}
