//! Map-equation community detection over the feeder graph and legalization of
//! the detected modules into a layered cluster tree.

mod detect;
mod mapeq;
mod tree;

pub use detect::{detect_communities, DetectOptions};
pub use mapeq::{map_equation_cost, plogp, stationary_distribution};
pub use tree::{cluster_label, legalize_to_cluster_tree, Cluster, ClusterTree, GranularityPolicy};

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::feeder::Feeder;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PartitionError {
    #[error("graph is disconnected")]
    Disconnected,
    #[error("module {0} is empty")]
    EmptyModule(usize),
    #[error("partition covers {got} nodes but the graph has {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("edge {0}-{1} has non-positive or non-finite weight {2}")]
    BadWeight(usize, usize, f64),
    #[error("edge endpoint {0} out of range")]
    BadNode(usize),
    #[error("cluster tree is not legal: {0}")]
    IllegalTree(String),
    #[error("partition export: {0}")]
    Export(String),
}

/// Undirected weighted graph with the stationary visit rates of its random walk.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGraph {
    n: usize,
    /// Aggregated undirected edges (i < j).
    edges: Vec<(usize, usize, f64)>,
    adj: Vec<Vec<(usize, f64)>>,
    visit: Vec<f64>,
    total_weight: f64,
}

impl FlowGraph {
    /// Parallel edges are summed; self-loops are dropped.
    pub fn new(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, PartitionError> {
        let mut agg: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(a, b, w) in edges {
            if a >= n {
                return Err(PartitionError::BadNode(a));
            }
            if b >= n {
                return Err(PartitionError::BadNode(b));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(PartitionError::BadWeight(a, b, w));
            }
            if a == b {
                continue;
            }
            *agg.entry((a.min(b), a.max(b))).or_insert(0.0) += w;
        }
        let edges: Vec<(usize, usize, f64)> = agg.into_iter().map(|((a, b), w)| (a, b, w)).collect();
        let mut adj = vec![Vec::new(); n];
        let mut strength = vec![0.0; n];
        let mut total = 0.0;
        for &(a, b, w) in &edges {
            adj[a].push((b, w));
            adj[b].push((a, w));
            strength[a] += w;
            strength[b] += w;
            total += w;
        }
        let visit = if total > 0.0 {
            strength.iter().map(|s| s / (2.0 * total)).collect()
        } else {
            vec![1.0 / n.max(1) as f64; n]
        };
        Ok(Self {
            n,
            edges,
            adj,
            visit,
            total_weight: total,
        })
    }

    /// Buses as nodes; edge weight is the magnitude of the summed entries of
    /// the branch series blocks between two buses.
    pub fn from_feeder(f: &Feeder) -> Result<Self, PartitionError> {
        let mut agg: BTreeMap<(usize, usize), Complex64> = BTreeMap::new();
        for br in f.branches() {
            let s: Complex64 = br.series.iter().flatten().sum();
            *agg.entry((br.from.min(br.to), br.from.max(br.to)))
                .or_insert(Complex64::new(0.0, 0.0)) += s;
        }
        let edges: Vec<_> = agg
            .into_iter()
            .map(|((a, b), s)| (a, b, s.norm().max(f64::MIN_POSITIVE)))
            .collect();
        Self::new(f.buses().len(), &edges)
    }

    /// Induced subgraph on `nodes` (renumbered in the given order).
    pub fn subgraph(&self, nodes: &[usize]) -> Self {
        let mut pos = vec![usize::MAX; self.n];
        for (k, &v) in nodes.iter().enumerate() {
            pos[v] = k;
        }
        let edges: Vec<_> = self
            .edges
            .iter()
            .filter(|(a, b, _)| pos[*a] != usize::MAX && pos[*b] != usize::MAX)
            .map(|&(a, b, w)| (pos[a], pos[b], w))
            .collect();
        Self::new(nodes.len(), &edges).expect("subgraph of a valid graph")
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adj[v]
    }

    pub fn visit_rates(&self) -> &[f64] {
        &self.visit
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// Per-direction flow on an edge of weight `w`.
    pub fn edge_flow(&self, w: f64) -> f64 {
        w / (2.0 * self.total_weight)
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let comps = self.components(&(0..self.n).collect::<Vec<_>>());
        comps.len() == 1
    }

    /// Connected components of the subgraph induced by `nodes`, each sorted,
    /// ordered by their smallest node.
    pub fn components(&self, nodes: &[usize]) -> Vec<Vec<usize>> {
        let mut inside = vec![false; self.n];
        for &v in nodes {
            inside[v] = true;
        }
        let mut seen = vec![false; self.n];
        let mut sorted = nodes.to_vec();
        sorted.sort_unstable();
        let mut out = Vec::new();
        for &start in &sorted {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                for &(u, _) in &self.adj[v] {
                    if inside[u] && !seen[u] {
                        seen[u] = true;
                        comp.push(u);
                        stack.push(u);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }
}

/// Assignment of every node to a module.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
    module_count: usize,
}

impl Partition {
    /// Renumbers module labels densely in order of first appearance.
    pub fn new(labels: &[usize]) -> Self {
        let mut map = BTreeMap::new();
        let mut assignment = Vec::with_capacity(labels.len());
        for &l in labels {
            let next = map.len();
            assignment.push(*map.entry(l).or_insert(next));
        }
        Self {
            assignment,
            module_count: map.len(),
        }
    }

    /// Keeps labels as given; modules without members are allowed here and
    /// rejected by the cost function.
    pub fn from_raw(assignment: Vec<usize>, module_count: usize) -> Self {
        Self {
            assignment,
            module_count,
        }
    }

    pub fn single(n: usize) -> Self {
        Self::new(&vec![0; n])
    }

    pub fn singletons(n: usize) -> Self {
        Self::new(&(0..n).collect::<Vec<_>>())
    }

    pub fn module_of(&self, v: usize) -> usize {
        self.assignment[v]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn module_count(&self) -> usize {
        self.module_count
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn modules(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.module_count];
        for (v, &m) in self.assignment.iter().enumerate() {
            if m < self.module_count {
                out[m].push(v);
            }
        }
        out
    }
}
