use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{Block3, Feeder, FeederError, NodeIndex, Phase};

/// Compressed sparse row matrix of complex entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<Complex64>,
}

impl CsrMatrix {
    /// Builds from entries already keyed by (row, col).
    fn from_map(n: usize, entries: BTreeMap<(usize, usize), Complex64>) -> Self {
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (&(r, c), &v) in &entries {
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.n, "dimension mismatch in CSR mat-vec");
        (0..self.n)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }

    /// Dense copy of the rows/cols selected by `rows` x `cols`.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> DMatrix<Complex64> {
        let mut pos = vec![usize::MAX; self.n];
        for (k, &c) in cols.iter().enumerate() {
            pos[c] = k;
        }
        let mut m = DMatrix::zeros(rows.len(), cols.len());
        for (i, &r) in rows.iter().enumerate() {
            for (c, v) in self.row(r) {
                if pos[c] != usize::MAX {
                    m[(i, pos[c])] = v;
                }
            }
        }
        m
    }

    /// True when the sparsity pattern is symmetric.
    pub fn pattern_symmetric(&self) -> bool {
        (0..self.n).all(|r| {
            self.row(r).all(|(c, _)| {
                let span = self.row_ptr[c]..self.row_ptr[c + 1];
                self.col_idx[span].binary_search(&r).is_ok()
            })
        })
    }
}

/// Three-phase nodal admittance matrix over the compacted node-phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub matrix: CsrMatrix,
    pub index: NodeIndex,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn get(&self, (bi, pi): (usize, Phase), (bj, pj): (usize, Phase)) -> Complex64 {
        match (self.index.row(bi, pi), self.index.row(bj, pj)) {
            (Some(r), Some(c)) => self.matrix.get(r, c),
            _ => Complex64::new(0.0, 0.0),
        }
    }
}

fn add_block(
    entries: &mut BTreeMap<(usize, usize), Complex64>,
    index: &NodeIndex,
    bi: usize,
    bj: usize,
    block: &Block3,
) {
    for p in Phase::ALL {
        let Some(r) = index.row(bi, p) else { continue };
        for q in Phase::ALL {
            let Some(c) = index.row(bj, q) else { continue };
            *entries.entry((r, c)).or_insert(Complex64::new(0.0, 0.0)) += block[p.index()][q.index()];
        }
    }
}

/// Assembles Y from per-branch 3x3 blocks: `+(series + shunt/2)` on both
/// diagonal blocks and `-series` on the two coupling blocks.
pub fn build_admittance(f: &Feeder) -> Result<AdmittanceMatrix, FeederError> {
    let index = f.index().clone();
    let mut entries = BTreeMap::new();
    for br in f.branches() {
        let mut own = br.series;
        let mut mutual = br.series;
        for i in 0..3 {
            for j in 0..3 {
                own[i][j] = br.series[i][j] + br.shunt[i][j] * 0.5;
                mutual[i][j] = -br.series[i][j];
            }
        }
        add_block(&mut entries, &index, br.from, br.from, &own);
        add_block(&mut entries, &index, br.from, br.to, &mutual);
        add_block(&mut entries, &index, br.to, br.from, &mutual);
        add_block(&mut entries, &index, br.to, br.to, &own);
    }
    let matrix = CsrMatrix::from_map(index.len(), entries);
    for r in 0..matrix.dim() {
        if matrix.row(r).all(|(_, v)| v == Complex64::new(0.0, 0.0)) {
            let (bus, phase) = index.node(r);
            return Err(FeederError::SingularNode {
                bus: f.bus_id(bus).to_string(),
                phase,
            });
        }
    }
    Ok(AdmittanceMatrix { matrix, index })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feeder::{Branch, Bus, BusKind, Feeder, PhaseSet, Source, ZERO_BLOCK};

    fn feeder(branches: Vec<Branch>, n: usize) -> Feeder {
        let buses = (0..n)
            .map(|i| Bus {
                id: format!("{}", i + 1),
                phases: PhaseSet::ABC,
                kind: if i == 0 { BusKind::Slack } else { BusKind::Load },
                base_kv: 2.4,
            })
            .collect();
        Feeder::new(buses, branches, vec![], 1000.0, Source::default()).unwrap()
    }

    fn block(seed: f64) -> Block3 {
        let mut b = ZERO_BLOCK;
        for i in 0..3 {
            for j in 0..3 {
                let v = if i == j {
                    Complex64::new(10.0 + seed, -30.0 - seed)
                } else {
                    Complex64::new(-2.0 - 0.1 * seed, 6.0 + 0.2 * seed)
                };
                b[i][j] = v;
            }
        }
        b
    }

    #[test]
    fn single_branch_block_pattern() {
        let yb = block(1.0);
        let f = feeder(
            vec![Branch {
                from: 0,
                to: 1,
                series: yb,
                shunt: ZERO_BLOCK,
            }],
            2,
        );
        let y = build_admittance(&f).unwrap();
        assert_eq!(y.dim(), 6);
        for p in Phase::ALL {
            for q in Phase::ALL {
                let v = yb[p.index()][q.index()];
                assert_eq!(y.get((0, p), (0, q)), v);
                assert_eq!(y.get((1, p), (1, q)), v);
                assert_eq!(y.get((0, p), (1, q)), -v);
                assert_eq!(y.get((1, p), (0, q)), -v);
            }
        }
        assert!(y.matrix.pattern_symmetric());
    }

    #[test]
    fn parallel_branches_superpose() {
        let (b1, b2) = (block(1.0), block(3.0));
        let f = feeder(
            vec![
                Branch { from: 0, to: 1, series: b1, shunt: ZERO_BLOCK },
                Branch { from: 1, to: 0, series: b2, shunt: ZERO_BLOCK },
            ],
            2,
        );
        let y = build_admittance(&f).unwrap();
        for p in Phase::ALL {
            for q in Phase::ALL {
                let want = -(b1[p.index()][q.index()] + b2[p.index()][q.index()]);
                assert_eq!(y.get((0, p), (1, q)), want);
            }
        }
    }

    #[test]
    fn branch_rows_sum_to_zero_without_shunt() {
        let f = feeder(
            vec![Branch {
                from: 0,
                to: 1,
                series: block(2.0),
                shunt: ZERO_BLOCK,
            }],
            2,
        );
        let y = build_admittance(&f).unwrap();
        for r in 0..y.dim() {
            let s: Complex64 = y.matrix.row(r).map(|(_, v)| v).sum();
            assert!(s.norm() < 1e-12, "row {r} sums to {s}");
        }
    }

    #[test]
    fn isolated_node_is_singular() {
        let f = feeder(vec![], 2);
        assert!(matches!(build_admittance(&f), Err(FeederError::SingularNode { .. })));
    }

    #[test]
    fn submatrix_and_matvec() {
        let f = feeder(
            vec![Branch {
                from: 0,
                to: 1,
                series: block(0.0),
                shunt: ZERO_BLOCK,
            }],
            2,
        );
        let y = build_admittance(&f).unwrap();
        let dense = y.matrix.to_dense();
        let x: Vec<Complex64> = (0..6).map(|k| Complex64::new(k as f64, 1.0)).collect();
        let dv = &dense * nalgebra::DVector::from_vec(x.clone());
        let sv = y.matrix.mul_vec(&x);
        for k in 0..6 {
            assert!((dv[k] - sv[k]).norm() < 1e-12);
        }
        let sub = y.matrix.submatrix(&[3, 4], &[0, 5]);
        assert_eq!(sub[(1, 1)], dense[(4, 5)]);
    }
}
