//! Fixed-point current-injection power flow used as the numerical oracle.
//!
//! With constant-PQ loads the non-slack voltages satisfy
//! `Y_LL V_L = conj(S / V_L) - Y_LS V_S`. The iteration freezes the right-hand
//! side at the current iterate and solves the linear system with a
//! factorization of `Y_LL` computed once per feeder.

use nalgebra::{DMatrix, DVector, LU};
use num_complex::Complex64;

use crate::feeder::{build_admittance, AdmittanceMatrix, Feeder, FeederError, Phase};

/// Voltages below this magnitude abort the iteration.
pub const MIN_VOLTAGE_PU: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialGuess {
    /// Every node-phase starts at the slack phasor of its phase.
    FlatStart,
    /// Full node-phase voltage vector (slack entries are overwritten).
    Provided(Vec<Complex64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Bound on the per-unit complex power mismatch.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub initial_guess: InitialGuess,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 200,
            initial_guess: InitialGuess::FlatStart,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error(transparent)]
    Feeder(#[from] FeederError),
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("multiplier {index} is {value}; multipliers must be finite and non-negative")]
    InvalidMultiplier { index: usize, value: f64 },
    #[error("Y_LL is singular")]
    SingularMatrix,
    #[error("voltage collapsed at {bus}.{phase} in iteration {iteration}")]
    ZeroVoltage { bus: String, phase: Phase, iteration: usize },
    #[error("branch {0} does not exist")]
    BranchNotFound(usize),
    #[error("bus {bus} is not an endpoint of branch {branch}")]
    NotAnEndpoint { branch: usize, bus: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    /// Complex voltage per node-phase (row order of the feeder's node index).
    pub voltages: Vec<Complex64>,
    pub iterations: usize,
    /// Final max power mismatch in per-unit.
    pub mismatch: f64,
    pub converged: bool,
}

impl PowerFlowSolution {
    pub fn vmag(&self, row: usize) -> f64 {
        self.voltages[row].norm()
    }

    /// Angle in degrees.
    pub fn vang_deg(&self, row: usize) -> f64 {
        self.voltages[row].arg().to_degrees()
    }
}

/// Per-phase active/reactive power, phases absent from the branch are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhasePowers {
    pub p: [f64; 3],
    pub q: [f64; 3],
}

impl PhasePowers {
    /// Sum over phases of per-phase apparent power.
    pub fn apparent_sum(&self) -> f64 {
        (0..3).map(|k| self.p[k].hypot(self.q[k])).sum()
    }
}

/// Specified complex injection per node-phase (loads enter negative).
pub fn specified_injections(f: &Feeder, multipliers: &[f64]) -> Result<Vec<Complex64>, SolverError> {
    if multipliers.len() != f.loads().len() {
        return Err(SolverError::DimensionMismatch {
            expected: f.loads().len(),
            got: multipliers.len(),
        });
    }
    let mut s = vec![Complex64::new(0.0, 0.0); f.index().len()];
    for (k, (load, &m)) in f.loads().iter().zip(multipliers).enumerate() {
        if !(m >= 0.0) || !m.is_finite() {
            return Err(SolverError::InvalidMultiplier { index: k, value: m });
        }
        let row = f
            .index()
            .row(load.bus, load.phase)
            .expect("load phase validated against bus");
        s[row] -= f.load_power_pu(load) * m;
    }
    Ok(s)
}

/// Reusable solver holding the factorized `Y_LL` of one feeder.
pub struct FixedPointSolver {
    y: AdmittanceMatrix,
    slack_rows: Vec<usize>,
    load_rows: Vec<usize>,
    /// Position of each node-phase row inside `load_rows`, or usize::MAX.
    load_pos: Vec<usize>,
    v_slack: Vec<Complex64>,
    lu: LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    /// `-Y_LS * V_S`, fixed for a given source.
    rhs_source: DVector<Complex64>,
    bus_ids: Vec<String>,
}

impl FixedPointSolver {
    pub fn new(f: &Feeder) -> Result<Self, SolverError> {
        let y = build_admittance(f)?;
        let index = f.index();
        let slack = f.slack();
        let mut slack_rows = Vec::new();
        let mut load_rows = Vec::new();
        let mut v_slack = Vec::new();
        for (row, &(bus, phase)) in index.rows().iter().enumerate() {
            if bus == slack {
                slack_rows.push(row);
                v_slack.push(f.source_voltage(phase));
            } else {
                load_rows.push(row);
            }
        }
        let mut load_pos = vec![usize::MAX; index.len()];
        for (k, &r) in load_rows.iter().enumerate() {
            load_pos[r] = k;
        }
        let y_ll = y.matrix.submatrix(&load_rows, &load_rows);
        let y_ls = y.matrix.submatrix(&load_rows, &slack_rows);
        let lu = y_ll.lu();
        if !load_rows.is_empty() && !lu.is_invertible() {
            return Err(SolverError::SingularMatrix);
        }
        let vs = DVector::from_vec(v_slack.clone());
        let rhs_source = -(&y_ls * &vs);
        let bus_ids = f.buses().iter().map(|b| b.id.clone()).collect();
        Ok(Self {
            y,
            slack_rows,
            load_rows,
            load_pos,
            v_slack,
            lu,
            rhs_source,
            bus_ids,
        })
    }

    pub fn admittance(&self) -> &AdmittanceMatrix {
        &self.y
    }

    pub fn dim(&self) -> usize {
        self.y.dim()
    }

    fn zero_voltage(&self, row: usize, iteration: usize) -> SolverError {
        let (bus, phase) = self.y.index.node(row);
        SolverError::ZeroVoltage {
            bus: self.bus_ids[bus].clone(),
            phase,
            iteration,
        }
    }

    /// Max |S_computed - S_specified| over non-slack node-phases.
    pub fn mismatch(&self, injections: &[Complex64], v: &[Complex64]) -> Result<f64, SolverError> {
        let n = self.dim();
        for len in [injections.len(), v.len()] {
            if len != n {
                return Err(SolverError::DimensionMismatch { expected: n, got: len });
            }
        }
        let mut worst = 0.0f64;
        for &r in &self.load_rows {
            let i: Complex64 = self.y.matrix.row(r).map(|(c, yv)| yv * v[c]).sum();
            let s = v[r] * i.conj();
            worst = worst.max((s - injections[r]).norm());
        }
        Ok(worst)
    }

    /// Runs the fixed-point iteration for one set of specified injections.
    pub fn solve(&self, injections: &[Complex64], opts: &SolverOptions) -> Result<PowerFlowSolution, SolverError> {
        if !(opts.tolerance > 0.0) {
            return Err(SolverError::InvalidOptions("tolerance must be positive".into()));
        }
        if opts.max_iterations == 0 {
            return Err(SolverError::InvalidOptions("max_iterations must be at least 1".into()));
        }
        let n = self.dim();
        if injections.len() != n {
            return Err(SolverError::DimensionMismatch {
                expected: n,
                got: injections.len(),
            });
        }

        let mut v = match &opts.initial_guess {
            InitialGuess::FlatStart => {
                let mut v = vec![Complex64::new(0.0, 0.0); n];
                for (row, &(_, phase)) in self.y.index.rows().iter().enumerate() {
                    let k = self
                        .slack_rows
                        .iter()
                        .position(|&sr| self.y.index.node(sr).1 == phase)
                        .unwrap_or(0);
                    v[row] = self.v_slack.get(k).copied().unwrap_or(Complex64::new(1.0, 0.0));
                }
                v
            }
            InitialGuess::Provided(v0) => {
                if v0.len() != n {
                    return Err(SolverError::DimensionMismatch { expected: n, got: v0.len() });
                }
                v0.clone()
            }
        };
        for (k, &r) in self.slack_rows.iter().enumerate() {
            v[r] = self.v_slack[k];
        }

        if self.load_rows.is_empty() {
            return Ok(PowerFlowSolution {
                voltages: v,
                iterations: 0,
                mismatch: 0.0,
                converged: true,
            });
        }

        let mut rhs = DVector::zeros(self.load_rows.len());
        let mut mismatch = f64::INFINITY;
        let mut iterations = 0;
        let mut converged = false;
        for it in 1..=opts.max_iterations {
            iterations = it;
            for (k, &r) in self.load_rows.iter().enumerate() {
                if v[r].norm() < MIN_VOLTAGE_PU {
                    return Err(self.zero_voltage(r, it));
                }
                rhs[k] = (injections[r] / v[r]).conj() + self.rhs_source[k];
            }
            let v_l = self.lu.solve(&rhs).ok_or(SolverError::SingularMatrix)?;
            for (k, &r) in self.load_rows.iter().enumerate() {
                if !(v_l[k].norm() >= MIN_VOLTAGE_PU) {
                    return Err(self.zero_voltage(r, it));
                }
                v[r] = v_l[k];
            }
            mismatch = self.mismatch(injections, &v)?;
            if mismatch <= opts.tolerance {
                converged = true;
                break;
            }
        }
        Ok(PowerFlowSolution {
            voltages: v,
            iterations,
            mismatch,
            converged,
        })
    }

    /// Complex power injected at each node-phase by the network, `V ⊙ conj(Y V)`.
    pub fn network_injections(&self, v: &[Complex64]) -> Vec<Complex64> {
        let i = self.y.matrix.mul_vec(v);
        v.iter().zip(&i).map(|(a, b)| a * b.conj()).collect()
    }

    pub fn is_slack_row(&self, row: usize) -> bool {
        self.load_pos[row] == usize::MAX
    }
}

/// One-shot solve with per-load multipliers.
pub fn solve_fixed_point(
    f: &Feeder,
    multipliers: &[f64],
    opts: &SolverOptions,
) -> Result<PowerFlowSolution, SolverError> {
    let s = specified_injections(f, multipliers)?;
    FixedPointSolver::new(f)?.solve(&s, opts)
}

/// Worst-case power mismatch of candidate voltages against the specified loads.
pub fn power_mismatch(f: &Feeder, multipliers: &[f64], v: &[Complex64]) -> Result<f64, SolverError> {
    let s = specified_injections(f, multipliers)?;
    FixedPointSolver::new(f)?.mismatch(&s, v)
}

/// Power flowing through `branch` measured at the end opposite `toward`,
/// positive in the direction of `toward`. Includes the branch losses.
pub fn branch_injected_power(
    sol: &PowerFlowSolution,
    f: &Feeder,
    branch: usize,
    toward: usize,
) -> Result<PhasePowers, SolverError> {
    let br = f.branches().get(branch).ok_or(SolverError::BranchNotFound(branch))?;
    let upstream = if br.to == toward {
        br.from
    } else if br.from == toward {
        br.to
    } else {
        return Err(SolverError::NotAnEndpoint { branch, bus: toward });
    };
    if sol.voltages.len() != f.index().len() {
        return Err(SolverError::DimensionMismatch {
            expected: f.index().len(),
            got: sol.voltages.len(),
        });
    }
    let index = f.index();
    let volt = |bus: usize, p: Phase| {
        index
            .row(bus, p)
            .map(|r| sol.voltages[r])
            .unwrap_or(Complex64::new(0.0, 0.0))
    };
    let mut out = PhasePowers::default();
    for p in Phase::ALL {
        let Some(_) = index.row(upstream, p) else { continue };
        let mut current = Complex64::new(0.0, 0.0);
        for q in Phase::ALL {
            let ys = br.series[p.index()][q.index()];
            let ysh = br.shunt[p.index()][q.index()] * 0.5;
            current += ys * (volt(upstream, q) - volt(toward, q)) + ysh * volt(upstream, q);
        }
        let s = volt(upstream, p) * current.conj();
        out.p[p.index()] = s.re;
        out.q[p.index()] = s.im;
    }
    Ok(out)
}

/// Dense `Y_LL` view for diagnostics and tests.
pub fn dense_admittance(f: &Feeder) -> Result<DMatrix<Complex64>, SolverError> {
    Ok(build_admittance(f)?.matrix.to_dense())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feeder::parse_feeder;

    const TWO_BUS: &str = "\
[source]
bus 1
base_kva 1000
[buses]
1 A slack 2.4
2 A load 2.4
[branches]
1 2 50-50j 0+0j 0+0j 0+0j 0+0j 0+0j 0+0j 0+0j 0+0j
[loads]
2 A 100 50 residential
";

    #[test]
    fn flat_start_mismatch_is_load_norm() {
        let f = parse_feeder(TWO_BUS).unwrap();
        let flat = vec![Complex64::new(1.0, 0.0); 2];
        let m = power_mismatch(&f, &[1.0], &flat).unwrap();
        assert!((m - 0.111_803_398_874_989_5).abs() < 1e-12);
    }

    #[test]
    fn zero_load_is_flat_in_one_iteration() {
        let f = parse_feeder(TWO_BUS).unwrap();
        let sol = solve_fixed_point(&f, &[0.0], &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 1);
        assert!((sol.voltages[1] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        let flat = vec![Complex64::new(1.0, 0.0); 2];
        assert_eq!(power_mismatch(&f, &[0.0], &flat).unwrap(), 0.0);
    }

    #[test]
    fn dimension_and_option_errors() {
        let f = parse_feeder(TWO_BUS).unwrap();
        assert!(matches!(
            power_mismatch(&f, &[1.0], &[Complex64::new(1.0, 0.0)]),
            Err(SolverError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            solve_fixed_point(&f, &[1.0, 2.0], &SolverOptions::default()),
            Err(SolverError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            solve_fixed_point(&f, &[-1.0], &SolverOptions::default()),
            Err(SolverError::InvalidMultiplier { .. })
        ));
        let bad = SolverOptions {
            tolerance: 0.0,
            ..Default::default()
        };
        assert!(matches!(solve_fixed_point(&f, &[1.0], &bad), Err(SolverError::InvalidOptions(_))));
    }

    #[test]
    fn non_convergence_returns_last_iterate() {
        let f = parse_feeder(TWO_BUS).unwrap();
        let opts = SolverOptions {
            max_iterations: 1,
            ..Default::default()
        };
        let sol = solve_fixed_point(&f, &[1.0], &opts).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 1);
        assert!(sol.mismatch > opts.tolerance);
    }

    #[test]
    fn collapse_is_reported() {
        let f = parse_feeder(TWO_BUS).unwrap();
        // far beyond the nose point of a 0.01+0.01j line
        let r = solve_fixed_point(&f, &[1e4], &SolverOptions::default());
        match r {
            Err(SolverError::ZeroVoltage { .. }) => {}
            Ok(sol) => assert!(!sol.converged),
            Err(e) => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn branch_power_errors() {
        let f = parse_feeder(TWO_BUS).unwrap();
        let sol = solve_fixed_point(&f, &[1.0], &SolverOptions::default()).unwrap();
        assert!(matches!(branch_injected_power(&sol, &f, 3, 1), Err(SolverError::BranchNotFound(3))));
        let zero = solve_fixed_point(&f, &[0.0], &SolverOptions::default()).unwrap();
        let hp = branch_injected_power(&zero, &f, 0, 1).unwrap();
        assert!(hp.p.iter().chain(&hp.q).all(|x| x.abs() < 1e-12));
    }
}
