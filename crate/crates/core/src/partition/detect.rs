use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mapeq::{map_equation_cost, plogp};
use super::{FlowGraph, Partition};

const MIN_IMPROVEMENT: f64 = 1e-10;
const MAX_SWEEPS: usize = 64;
const MAX_TUNE_ROUNDS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectOptions {
    pub seed: u64,
    /// Independent searches with shuffled node orders; the cheapest wins.
    pub trials: usize,
    /// 1 returns the two-level partition; each extra level recursively
    /// splits every module and the finest level is returned.
    pub max_levels: usize,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            seed: 42,
            trials: 10,
            max_levels: 1,
        }
    }
}

/// Node-level view used by the search: visit rates and per-direction flows
/// between distinct nodes.
#[derive(Debug, Clone)]
struct Net {
    flow: Vec<f64>,
    adj: Vec<Vec<(usize, f64)>>,
    exit: Vec<f64>,
}

impl Net {
    fn from_graph(g: &FlowGraph) -> Self {
        let mut adj = vec![Vec::new(); g.len()];
        for &(a, b, w) in g.edges() {
            let f = g.edge_flow(w);
            adj[a].push((b, f));
            adj[b].push((a, f));
        }
        Self::with_adj(g.visit_rates().to_vec(), adj)
    }

    fn with_adj(flow: Vec<f64>, adj: Vec<Vec<(usize, f64)>>) -> Self {
        let exit = adj.iter().map(|nb| nb.iter().map(|&(_, f)| f).sum()).collect();
        Self { flow, adj, exit }
    }

    fn len(&self) -> usize {
        self.flow.len()
    }

    /// Collapses nodes sharing a module label (labels dense in 0..k).
    fn aggregate(&self, assign: &[usize], k: usize) -> Self {
        let mut flow = vec![0.0; k];
        let mut links: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for v in 0..self.len() {
            flow[assign[v]] += self.flow[v];
            for &(u, f) in &self.adj[v] {
                let (a, b) = (assign[v], assign[u]);
                if a != b {
                    *links.entry((a, b)).or_insert(0.0) += f;
                }
            }
        }
        let mut adj = vec![Vec::new(); k];
        for ((a, b), f) in links {
            adj[a].push((b, f));
        }
        Self::with_adj(flow, adj)
    }

    /// Standalone view of `nodes`; flows leaving the subset are dropped.
    fn restrict(&self, nodes: &[usize]) -> Self {
        let mut pos = vec![usize::MAX; self.len()];
        for (k, &v) in nodes.iter().enumerate() {
            pos[v] = k;
        }
        let adj = nodes
            .iter()
            .map(|&v| {
                self.adj[v]
                    .iter()
                    .filter(|(u, _)| pos[*u] != usize::MAX)
                    .map(|&(u, f)| (pos[u], f))
                    .collect()
            })
            .collect();
        Self::with_adj(nodes.iter().map(|&v| self.flow[v]).collect(), adj)
    }
}

/// Module bookkeeping for the terms of the map equation that change under moves.
struct Modules {
    exit: Vec<f64>,
    flow: Vec<f64>,
    members: Vec<usize>,
    total_exit: f64,
}

impl Modules {
    fn new(net: &Net, assign: &[usize]) -> Self {
        let n = net.len();
        let mut m = Self {
            exit: vec![0.0; n],
            flow: vec![0.0; n],
            members: vec![0; n],
            total_exit: 0.0,
        };
        for v in 0..n {
            let a = assign[v];
            m.flow[a] += net.flow[v];
            m.members[a] += 1;
            for &(u, f) in &net.adj[v] {
                if assign[u] != a {
                    m.exit[a] += f;
                }
            }
        }
        m.total_exit = m.exit.iter().sum();
        m
    }

    fn term(&self, q: f64, p: f64) -> f64 {
        -2.0 * plogp(q) + plogp(q + p)
    }
}

/// One round of greedy single-node moves until no move improves the cost.
/// Returns true when anything moved.
fn local_moves(net: &Net, assign: &mut [usize], rng: &mut ChaCha8Rng) -> bool {
    let n = net.len();
    let mut mods = Modules::new(net, assign);
    let mut order: Vec<usize> = (0..n).collect();
    let mut moved_any = false;
    let mut to_module: BTreeMap<usize, f64> = BTreeMap::new();
    for _ in 0..MAX_SWEEPS {
        order.shuffle(rng);
        let mut moved = false;
        for &v in &order {
            let a = assign[v];
            to_module.clear();
            for &(u, f) in &net.adj[v] {
                *to_module.entry(assign[u]).or_insert(0.0) += f;
            }
            let e_a = to_module.get(&a).copied().unwrap_or(0.0);
            let (qv, pv) = (net.exit[v], net.flow[v]);
            let qa_new = mods.exit[a] - qv + 2.0 * e_a;
            let pa_new = mods.flow[a] - pv;

            let mut candidates: Vec<(usize, f64)> =
                to_module.iter().filter(|(&m, _)| m != a).map(|(&m, &f)| (m, f)).collect();
            if mods.members[a] > 1 {
                if let Some(empty) = mods.members.iter().position(|&c| c == 0) {
                    candidates.push((empty, 0.0));
                }
            }

            let mut best: Option<(usize, f64, f64)> = None;
            for (b, e_b) in candidates {
                let qb_new = mods.exit[b] + qv - 2.0 * e_b;
                let total_new = mods.total_exit - mods.exit[a] - mods.exit[b] + qa_new + qb_new;
                let delta = plogp(total_new) - plogp(mods.total_exit)
                    + mods.term(qa_new, pa_new)
                    + mods.term(qb_new, mods.flow[b] + pv)
                    - mods.term(mods.exit[a], mods.flow[a])
                    - mods.term(mods.exit[b], mods.flow[b]);
                let better = match best {
                    None => true,
                    Some((bm, bd, _)) => delta < bd - 1e-15 || (delta <= bd + 1e-15 && b < bm),
                };
                if better {
                    best = Some((b, delta, qb_new));
                }
            }
            if let Some((b, delta, qb_new)) = best {
                if delta < -MIN_IMPROVEMENT {
                    mods.total_exit += qa_new + qb_new - mods.exit[a] - mods.exit[b];
                    mods.exit[a] = qa_new;
                    mods.flow[a] = pa_new;
                    mods.members[a] -= 1;
                    mods.exit[b] = qb_new;
                    mods.flow[b] += pv;
                    mods.members[b] += 1;
                    assign[v] = b;
                    moved = true;
                    moved_any = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    moved_any
}

/// Relabels densely in order of first appearance; returns the label count.
fn compact(assign: &mut [usize]) -> usize {
    let mut map = BTreeMap::new();
    for a in assign.iter_mut() {
        let next = map.len();
        *a = *map.entry(*a).or_insert(next);
    }
    map.len()
}

/// Local moves followed by repeated aggregation, starting from `init`.
fn optimize(net: &Net, init: Vec<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut result = init;
    compact(&mut result);
    let mut level = net.clone();
    let mut level_assign = result.clone();
    // result[v] maps original node -> node of `level`; level_assign maps
    // nodes of `level` -> module.
    let mut to_level: Vec<usize> = (0..net.len()).collect();
    loop {
        local_moves(&level, &mut level_assign, rng);
        let k = compact(&mut level_assign);
        for v in 0..net.len() {
            result[v] = level_assign[to_level[v]];
        }
        if k == level.len() || k == 1 {
            break;
        }
        level = level.aggregate(&level_assign, k);
        to_level = result.clone();
        level_assign = (0..k).collect();
    }
    result
}

/// Re-optimizes with sub-modules of each module as movable units.
fn coarse_tune(net: &Net, assign: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let k = assign.iter().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); k];
    for (v, &m) in assign.iter().enumerate() {
        members[m].push(v);
    }
    let mut sub = vec![0usize; net.len()];
    let mut sub_parent = Vec::new();
    for (m, nodes) in members.iter().enumerate() {
        let local = optimize(&net.restrict(nodes), (0..nodes.len()).collect(), rng);
        let base = sub_parent.len();
        let count = local.iter().max().map_or(0, |x| x + 1);
        for (i, &v) in nodes.iter().enumerate() {
            sub[v] = base + local[i];
        }
        sub_parent.extend(std::iter::repeat_n(m, count));
    }
    let coarse = net.aggregate(&sub, sub_parent.len());
    let moved = optimize(&coarse, sub_parent, rng);
    sub.iter().map(|&s| moved[s]).collect()
}

fn search(g: &FlowGraph, net: &Net, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let cost = |a: &[usize]| {
        map_equation_cost(g, &Partition::new(a)).expect("search keeps modules non-empty")
    };
    let mut best = optimize(net, (0..net.len()).collect(), rng);
    let mut best_cost = cost(&best);
    for _ in 0..MAX_TUNE_ROUNDS {
        let fine = optimize(net, best.clone(), rng);
        let coarse = coarse_tune(net, &fine, rng);
        let (fc, cc) = (cost(&fine), cost(&coarse));
        let (cand, cand_cost) = if cc < fc { (coarse, cc) } else { (fine, fc) };
        if cand_cost < best_cost - MIN_IMPROVEMENT {
            best = cand;
            best_cost = cand_cost;
        } else {
            break;
        }
    }
    (best, best_cost)
}

fn detect_two_level(g: &FlowGraph, opts: &DetectOptions) -> Partition {
    let n = g.len();
    if n <= 1 || g.total_weight() <= 0.0 {
        return Partition::single(n);
    }
    let net = Net::from_graph(g);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let single = Partition::single(n);
    let mut best = single.clone();
    let mut best_cost = map_equation_cost(g, &single).expect("single module is valid");
    for _ in 0..opts.trials.max(1) {
        let (assign, cost) = search(g, &net, &mut rng);
        if cost < best_cost - MIN_IMPROVEMENT {
            best = Partition::new(&assign);
            best_cost = cost;
        }
    }
    best
}

/// Greedy map-equation minimization: node moves, module aggregation and
/// repeated fine/coarse tuning over several seeded trials. The result never
/// costs more than the one-module partition.
pub fn detect_communities(g: &FlowGraph, opts: &DetectOptions) -> Partition {
    let top = detect_two_level(g, opts);
    if opts.max_levels <= 1 || top.module_count() <= 1 {
        return top;
    }
    let deeper = DetectOptions {
        max_levels: opts.max_levels - 1,
        ..*opts
    };
    let mut labels = vec![0usize; g.len()];
    let mut next = 0;
    for nodes in top.modules() {
        let sub = g.subgraph(&nodes);
        let part = if nodes.len() > 2 && sub.is_connected() {
            detect_communities(&sub, &deeper)
        } else {
            Partition::single(nodes.len())
        };
        for (i, &v) in nodes.iter().enumerate() {
            labels[v] = next + part.module_of(i);
        }
        next += part.module_count();
    }
    Partition::new(&labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clique_pair(k: usize) -> FlowGraph {
        let mut e = Vec::new();
        for off in [0, k] {
            for i in 0..k {
                for j in i + 1..k {
                    e.push((off + i, off + j, 1.0));
                }
            }
        }
        e.push((k - 1, k, 1.0));
        FlowGraph::new(2 * k, &e).unwrap()
    }

    #[test]
    fn two_cliques_recovered() {
        let g = clique_pair(5);
        let p = detect_communities(&g, &DetectOptions::default());
        assert_eq!(p.assignment(), &[0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn complete_graph_stays_whole() {
        let mut e = Vec::new();
        for i in 0..5 {
            for j in i + 1..5 {
                e.push((i, j, 1.0));
            }
        }
        let g = FlowGraph::new(5, &e).unwrap();
        assert_eq!(detect_communities(&g, &DetectOptions::default()).module_count(), 1);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let g = clique_pair(4);
        let opts = DetectOptions { seed: 7, ..Default::default() };
        assert_eq!(detect_communities(&g, &opts), detect_communities(&g, &opts));
    }

    #[test]
    fn multilevel_refines() {
        // four 4-cliques: pairs of cliques joined densely, pairs joined by one edge
        let mut e = Vec::new();
        for c in 0..4 {
            for i in 0..4 {
                for j in i + 1..4 {
                    e.push((4 * c + i, 4 * c + j, 1.0));
                }
            }
        }
        e.push((3, 4, 1.0));
        e.push((11, 12, 1.0));
        e.push((7, 8, 1.0));
        let g = FlowGraph::new(16, &e).unwrap();
        let one = detect_communities(&g, &DetectOptions::default());
        let two = detect_communities(&g, &DetectOptions { max_levels: 2, ..Default::default() });
        assert!(two.module_count() >= one.module_count());
        // finer level nests inside the coarser one
        for v in 0..16 {
            for u in 0..16 {
                if two.module_of(v) == two.module_of(u) {
                    assert_eq!(one.module_of(v), one.module_of(u));
                }
            }
        }
    }
}
