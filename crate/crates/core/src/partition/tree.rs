use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::detect::{detect_communities, DetectOptions};
use super::{FlowGraph, Partition, PartitionError};
use crate::feeder::Feeder;
use crate::textfmt::{Document, Writer};

/// Target cluster size band and how hard to try to reach it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GranularityPolicy {
    pub min_size: usize,
    pub max_size: usize,
    /// Rounds of sub-splitting applied to clusters above `max_size`.
    pub max_levels: usize,
    pub detect: DetectOptions,
}

impl Default for GranularityPolicy {
    fn default() -> Self {
        Self {
            min_size: 5,
            max_size: 25,
            max_levels: 2,
            detect: DetectOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub id: usize,
    /// Bus indices, ascending.
    pub nodes: Vec<usize>,
    /// Head node: the slack bus for the top cluster, otherwise the bus fed
    /// from the parent.
    pub head: usize,
    /// Parent-side bus of the head branch.
    pub attach: Option<usize>,
    /// Branches between `attach` and `head` (usually one).
    pub head_branches: Vec<usize>,
    pub parent: Option<usize>,
    /// Ordered by smallest bus index.
    pub children: Vec<usize>,
    pub layer: usize,
}

/// Layered tree of connected bus clusters; cluster 0 is the top and ids
/// follow breadth-first order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterTree {
    clusters: Vec<Cluster>,
    bus_cluster: Vec<usize>,
}

/// Distinct bus pairs joined by at least one branch, with their branches.
fn bus_links(f: &Feeder) -> BTreeMap<(usize, usize), Vec<usize>> {
    let mut links: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (k, br) in f.branches().iter().enumerate() {
        if br.from != br.to {
            links.entry((br.from.min(br.to), br.from.max(br.to))).or_default().push(k);
        }
    }
    links
}

/// `A`, `B`, ..., `Z`, `AA`, `AB`, ...
pub fn cluster_label(mut id: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'A' + (id % 26) as u8);
        if id < 26 {
            break;
        }
        id = id / 26 - 1;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

fn compact(labels: &mut [usize]) -> usize {
    let mut map = BTreeMap::new();
    for l in labels.iter_mut() {
        let next = map.len();
        *l = *map.entry(*l).or_insert(next);
    }
    map.len()
}

fn groups(labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); k];
    for (v, &c) in labels.iter().enumerate() {
        out[c].push(v);
    }
    out
}

impl ClusterTree {
    /// Builds the canonical tree for a bus → cluster labelling, rejecting
    /// labellings that violate any tree invariant.
    pub fn from_assignment(f: &Feeder, assignment: &[usize]) -> Result<Self, PartitionError> {
        let n = f.buses().len();
        if assignment.len() != n {
            return Err(PartitionError::SizeMismatch {
                expected: n,
                got: assignment.len(),
            });
        }
        let graph = FlowGraph::from_feeder(f)?;
        let mut labels = assignment.to_vec();
        let k = compact(&mut labels);
        let members = groups(&labels, k);
        for nodes in &members {
            if graph.components(nodes).len() != 1 {
                return Err(PartitionError::IllegalTree(format!(
                    "cluster containing bus {} is not connected",
                    f.bus_id(nodes[0])
                )));
            }
        }

        // cluster pair -> (bus in lower-labelled cluster, bus in the other)
        let mut between: BTreeMap<(usize, usize), BTreeSet<(usize, usize)>> = BTreeMap::new();
        let links = bus_links(f);
        for &(a, b) in links.keys() {
            let (ca, cb) = (labels[a], labels[b]);
            if ca == cb {
                continue;
            }
            let (key, pair) = if ca < cb { ((ca, cb), (a, b)) } else { ((cb, ca), (b, a)) };
            between.entry(key).or_default().insert(pair);
        }
        let mut nbrs = vec![Vec::new(); k];
        for (&(ca, cb), pairs) in &between {
            if pairs.len() > 1 {
                return Err(PartitionError::IllegalTree(format!(
                    "clusters of buses {} and {} are joined by {} branches",
                    f.bus_id(members[ca][0]),
                    f.bus_id(members[cb][0]),
                    pairs.len()
                )));
            }
            let &(a, b) = pairs.iter().next().expect("non-empty");
            nbrs[ca].push((cb, a, b));
            nbrs[cb].push((ca, b, a));
        }
        if between.len() + 1 != k {
            return Err(PartitionError::IllegalTree(
                "cluster graph is not a tree".to_string(),
            ));
        }

        let top = labels[f.slack()];
        let mut new_id = vec![usize::MAX; k];
        new_id[top] = 0;
        let mut order = vec![top];
        let mut parent_link: Vec<Option<(usize, usize, usize)>> = vec![None; k];
        let mut queue = VecDeque::from([top]);
        while let Some(c) = queue.pop_front() {
            let mut kids: Vec<(usize, usize, usize)> = nbrs[c]
                .iter()
                .filter(|(d, _, _)| new_id[*d] == usize::MAX)
                .map(|&(d, mine, theirs)| (d, mine, theirs))
                .collect();
            kids.sort_by_key(|(d, _, _)| members[*d][0]);
            for (d, attach, head) in kids {
                new_id[d] = order.len();
                order.push(d);
                parent_link[d] = Some((c, attach, head));
                queue.push_back(d);
            }
        }
        if order.len() != k {
            return Err(PartitionError::IllegalTree(
                "some clusters are unreachable from the slack".to_string(),
            ));
        }

        let mut clusters: Vec<Cluster> = order
            .iter()
            .enumerate()
            .map(|(id, &c)| {
                let (parent, attach, head) = match parent_link[c] {
                    Some((p, a, h)) => (Some(new_id[p]), Some(a), h),
                    None => (None, None, f.slack()),
                };
                let head_branches = attach
                    .map(|a| links[&(a.min(head), a.max(head))].clone())
                    .unwrap_or_default();
                Cluster {
                    id,
                    nodes: members[c].clone(),
                    head,
                    attach,
                    head_branches,
                    parent,
                    children: Vec::new(),
                    layer: 0,
                }
            })
            .collect();
        for id in 1..clusters.len() {
            let p = clusters[id].parent.expect("non-top has a parent");
            clusters[id].layer = clusters[p].layer + 1;
            clusters[p].children.push(id);
        }
        let bus_cluster = labels.iter().map(|&c| new_id[c]).collect();
        Ok(Self { clusters, bus_cluster })
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn cluster(&self, id: usize) -> &Cluster {
        &self.clusters[id]
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn bus_cluster(&self) -> &[usize] {
        &self.bus_cluster
    }

    pub fn cluster_of(&self, bus: usize) -> usize {
        self.bus_cluster[bus]
    }

    pub fn top(&self) -> usize {
        0
    }

    pub fn parents(&self) -> Vec<Option<usize>> {
        self.clusters.iter().map(|c| c.parent).collect()
    }

    pub fn depth(&self) -> usize {
        self.clusters.iter().map(|c| c.layer).max().map_or(0, |l| l + 1)
    }

    /// Cluster ids per layer, top first.
    pub fn layers(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.depth()];
        for c in &self.clusters {
            out[c.layer].push(c.id);
        }
        out
    }

    pub fn label(&self, id: usize) -> String {
        cluster_label(id)
    }

    pub fn partition(&self) -> Partition {
        Partition::new(&self.bus_cluster)
    }

    /// Re-derives every tree invariant from scratch against the feeder.
    pub fn check(&self, f: &Feeder) -> Result<(), PartitionError> {
        let bad = |m: String| Err(PartitionError::IllegalTree(m));
        let n = f.buses().len();
        if self.bus_cluster.len() != n {
            return bad("assignment does not cover the buses".into());
        }
        let mut seen = vec![false; n];
        for (id, c) in self.clusters.iter().enumerate() {
            if c.id != id {
                return bad(format!("cluster {id} carries id {}", c.id));
            }
            if c.nodes.is_empty() {
                return bad(format!("cluster {id} is empty"));
            }
            for &v in &c.nodes {
                if seen[v] || self.bus_cluster[v] != id {
                    return bad(format!("bus {} assigned inconsistently", f.bus_id(v)));
                }
                seen[v] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return bad("clusters do not cover every bus".into());
        }
        if self.bus_cluster[f.slack()] != 0 || self.clusters[0].parent.is_some() {
            return bad("top cluster must hold the slack bus".into());
        }
        let rebuilt = Self::from_assignment(f, &self.bus_cluster)?;
        let graph = FlowGraph::from_feeder(f)?;
        for c in &self.clusters {
            if graph.components(&c.nodes).len() != 1 {
                return bad(format!("cluster {} is not connected", c.id));
            }
            match c.parent {
                None if c.id != 0 => return bad(format!("cluster {} has no parent", c.id)),
                None => {
                    if c.layer != 0 || c.head != f.slack() {
                        return bad("top cluster layer or head is wrong".into());
                    }
                }
                Some(p) => {
                    let pc = &self.clusters[p];
                    if c.layer != pc.layer + 1 || !pc.children.contains(&c.id) {
                        return bad(format!("cluster {} disagrees with its parent", c.id));
                    }
                    let attach = c.attach.unwrap_or(usize::MAX);
                    if self.bus_cluster.get(attach) != Some(&p) || self.bus_cluster[c.head] != c.id {
                        return bad(format!("cluster {} head link is wrong", c.id));
                    }
                }
            }
        }
        if rebuilt != *self {
            return bad("tree differs from the canonical tree of its assignment".into());
        }
        Ok(())
    }

    /// Structured text: a `[clusters]` table (id label parent head layer)
    /// and an `[assignment]` table (bus cluster).
    pub fn export(&self, f: &Feeder) -> String {
        let mut w = Writer::new();
        w.section("clusters");
        w.comment("id label parent head_bus layer");
        for c in &self.clusters {
            let parent = c.parent.map_or("-".to_string(), |p| p.to_string());
            w.line([
                c.id.to_string(),
                cluster_label(c.id),
                parent,
                f.bus_id(c.head).to_string(),
                c.layer.to_string(),
            ]);
        }
        w.section("assignment");
        for (v, &c) in self.bus_cluster.iter().enumerate() {
            w.line([f.bus_id(v).to_string(), c.to_string()]);
        }
        w.finish()
    }

    /// Inverse of [`ClusterTree::export`]; the cluster table must agree with
    /// the tree rebuilt from the assignment.
    pub fn import(f: &Feeder, text: &str) -> Result<Self, PartitionError> {
        let err = |m: String| PartitionError::Export(m);
        let doc = Document::parse(text).map_err(|e| err(e.to_string()))?;
        let asg = doc.require("assignment").map_err(|e| err(e.to_string()))?;
        let mut labels = vec![usize::MAX; f.buses().len()];
        for line in &asg.lines {
            line.expect_len(2, 2).map_err(|e| err(e.to_string()))?;
            let bus = f
                .bus_index(line.key())
                .ok_or_else(|| err(format!("line {}: unknown bus `{}`", line.number, line.key())))?;
            labels[bus] = line.usize_at(1).map_err(|e| err(e.to_string()))?;
        }
        if let Some(v) = labels.iter().position(|&l| l == usize::MAX) {
            return Err(err(format!("bus {} has no cluster", f.bus_id(v))));
        }
        let tree = Self::from_assignment(f, &labels)?;
        if tree.bus_cluster != labels {
            return Err(err("cluster ids are not in canonical order".into()));
        }
        let table = doc.require("clusters").map_err(|e| err(e.to_string()))?;
        if table.lines.len() != tree.len() {
            return Err(err(format!(
                "{} cluster rows for {} clusters",
                table.lines.len(),
                tree.len()
            )));
        }
        for line in &table.lines {
            line.expect_len(5, 5).map_err(|e| err(e.to_string()))?;
            let id = line.usize_at(0).map_err(|e| err(e.to_string()))?;
            let c = tree
                .clusters
                .get(id)
                .ok_or_else(|| err(format!("line {}: unknown cluster {id}", line.number)))?;
            let parent = c.parent.map_or("-".to_string(), |p| p.to_string());
            let row: Vec<&str> = line.tokens.iter().map(|t| t.text.as_str()).collect();
            let want = [
                id.to_string(),
                cluster_label(id),
                parent,
                f.bus_id(c.head).to_string(),
                c.layer.to_string(),
            ];
            if row != want {
                return Err(err(format!("line {}: cluster row disagrees with assignment", line.number)));
            }
        }
        Ok(tree)
    }
}

fn split_components(graph: &FlowGraph, labels: &mut Vec<usize>) {
    let k = compact(labels);
    let mut next = 0;
    let mut out = vec![0; labels.len()];
    for nodes in groups(labels, k) {
        for comp in graph.components(&nodes) {
            for v in comp {
                out[v] = next;
            }
            next += 1;
        }
    }
    *labels = out;
}

fn split_oversized(graph: &FlowGraph, labels: &mut Vec<usize>, policy: &GranularityPolicy) {
    let k = compact(labels);
    let opts = DetectOptions {
        max_levels: 1,
        ..policy.detect
    };
    let mut next = 0;
    let mut out = vec![0; labels.len()];
    for nodes in groups(labels, k) {
        let sub = graph.subgraph(&nodes);
        let part = if nodes.len() > policy.max_size && sub.is_connected() {
            detect_communities(&sub, &opts)
        } else {
            Partition::single(nodes.len())
        };
        for (i, &v) in nodes.iter().enumerate() {
            out[v] = next + part.module_of(i);
        }
        next += part.module_count();
    }
    *labels = out;
}

/// Merges clusters until the cluster graph is a tree with single-link edges.
fn merge_to_tree(f: &Feeder, labels: &mut [usize]) {
    let links = bus_links(f);
    loop {
        let k = compact(labels);
        let mut count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for &(a, b) in links.keys() {
            let (ca, cb) = (labels[a], labels[b]);
            if ca != cb {
                *count.entry((ca.min(cb), ca.max(cb))).or_insert(0) += 1;
            }
        }
        let merge = count.iter().find(|(_, &c)| c > 1).map(|(&p, _)| p).or_else(|| {
            // any edge closing a cycle in the cluster graph
            let mut root: Vec<usize> = (0..k).collect();
            fn find(root: &mut [usize], x: usize) -> usize {
                let mut r = x;
                while root[r] != r {
                    r = root[r];
                }
                root[x] = r;
                r
            }
            count.keys().copied().find(|&(a, b)| {
                let (ra, rb) = (find(&mut root, a), find(&mut root, b));
                root[ra] = rb;
                ra == rb
            })
        });
        match merge {
            Some((a, b)) => {
                for l in labels.iter_mut() {
                    if *l == b {
                        *l = a;
                    }
                }
            }
            None => return,
        }
    }
}

/// Folds clusters below `min_size` into their parents, deepest first; an
/// undersized top absorbs its smallest child.
fn merge_undersized(f: &Feeder, labels: &mut Vec<usize>, min_size: usize) -> ClusterTree {
    loop {
        let tree = ClusterTree::from_assignment(f, labels).expect("legal before merging");
        let small = tree
            .clusters
            .iter()
            .filter(|c| c.parent.is_some() && c.nodes.len() < min_size)
            .max_by_key(|c| (c.layer, std::cmp::Reverse(c.id)));
        let (from, into) = match small {
            Some(c) => (c.id, c.parent.expect("non-top")),
            None => {
                let top = &tree.clusters[0];
                if top.nodes.len() >= min_size || top.children.is_empty() {
                    return tree;
                }
                let child = top
                    .children
                    .iter()
                    .copied()
                    .min_by_key(|&c| (tree.clusters[c].nodes.len(), c))
                    .expect("non-empty");
                (child, 0)
            }
        };
        *labels = tree
            .bus_cluster
            .iter()
            .map(|&c| if c == from { into } else { c })
            .collect();
    }
}

/// Turns a raw partition into a legal cluster tree: splits disconnected
/// modules, sub-splits oversized ones, merges clusters joined by several
/// branches or by cycles, then folds undersized clusters into their parents.
pub fn legalize_to_cluster_tree(
    f: &Feeder,
    part: &Partition,
    policy: &GranularityPolicy,
) -> Result<ClusterTree, PartitionError> {
    let n = f.buses().len();
    if part.len() != n {
        return Err(PartitionError::SizeMismatch {
            expected: n,
            got: part.len(),
        });
    }
    let graph = FlowGraph::from_feeder(f)?;
    let mut labels = part.assignment().to_vec();
    split_components(&graph, &mut labels);
    for _ in 1..policy.max_levels.max(1) {
        split_oversized(&graph, &mut labels, policy);
        split_components(&graph, &mut labels);
    }
    merge_to_tree(f, &mut labels);
    if graph.components(&(0..n).collect::<Vec<_>>()).len() != 1 {
        // disconnected feeder: nothing sensible to orient
        return Err(PartitionError::Disconnected);
    }
    Ok(merge_undersized(f, &mut labels, policy.min_size))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feeder::{Branch, Bus, BusKind, PhaseSet, Source, ZERO_BLOCK};
    use num_complex::Complex64;

    fn feeder(n: usize, edges: &[(usize, usize)]) -> Feeder {
        let buses = (0..n)
            .map(|i| Bus {
                id: format!("{i}"),
                phases: PhaseSet::ABC,
                kind: if i == 0 { BusKind::Slack } else { BusKind::Load },
                base_kv: 2.4,
            })
            .collect();
        let mut series = ZERO_BLOCK;
        for (i, row) in series.iter_mut().enumerate() {
            row[i] = Complex64::new(10.0, -20.0);
        }
        let branches = edges
            .iter()
            .map(|&(from, to)| Branch { from, to, series, shunt: ZERO_BLOCK })
            .collect();
        Feeder::new(buses, branches, vec![], 1000.0, Source::default()).unwrap()
    }

    fn loose() -> GranularityPolicy {
        GranularityPolicy { min_size: 1, max_size: 100, max_levels: 1, ..Default::default() }
    }

    #[test]
    fn chain_split_has_head_at_four() {
        let f = feeder(7, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6)]);
        let part = Partition::new(&[0, 0, 0, 0, 1, 1, 1]);
        let t = legalize_to_cluster_tree(&f, &part, &loose()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.cluster(1).head, 4);
        assert_eq!(t.cluster(1).attach, Some(3));
        assert_eq!(t.cluster(1).head_branches, vec![3]);
        assert_eq!((t.cluster(0).layer, t.cluster(1).layer), (0, 1));
        t.check(&f).unwrap();
    }

    #[test]
    fn disconnected_module_becomes_two_clusters() {
        // 0-1-2 with 3 hanging off 1 and 4 hanging off 3; module {2,4} is split
        let f = feeder(5, &[(0, 1), (1, 2), (1, 3), (3, 4)]);
        let part = Partition::new(&[0, 0, 1, 0, 1]);
        let t = legalize_to_cluster_tree(&f, &part, &loose()).unwrap();
        assert_eq!(t.len(), 3);
        assert_ne!(t.cluster_of(2), t.cluster_of(4));
        t.check(&f).unwrap();
    }

    #[test]
    fn double_link_merges() {
        // ring 0-1-2-3-0 split into {0,1} and {2,3}: two connecting branches
        let f = feeder(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let part = Partition::new(&[0, 0, 1, 1]);
        let t = legalize_to_cluster_tree(&f, &part, &loose()).unwrap();
        assert_eq!(t.len(), 1);
        t.check(&f).unwrap();
    }

    #[test]
    fn undersized_leaf_folds_into_parent() {
        let f = feeder(7, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6)]);
        let part = Partition::new(&[0, 0, 0, 0, 0, 1, 1]);
        let policy = GranularityPolicy { min_size: 3, ..loose() };
        let t = legalize_to_cluster_tree(&f, &part, &policy).unwrap();
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn export_round_trips() {
        let f = feeder(7, &[(0, 1), (1, 2), (1, 3), (3, 4), (2, 5), (5, 6)]);
        let part = Partition::new(&[0, 0, 1, 2, 2, 1, 1]);
        let t = legalize_to_cluster_tree(&f, &part, &loose()).unwrap();
        let text = t.export(&f);
        assert_eq!(ClusterTree::import(&f, &text).unwrap(), t);
        let tampered = text.replace("1 B 0 2 1", "1 B 0 5 1");
        assert!(ClusterTree::import(&f, &tampered).is_err());
    }

    #[test]
    fn labels() {
        assert_eq!(cluster_label(0), "A");
        assert_eq!(cluster_label(25), "Z");
        assert_eq!(cluster_label(26), "AA");
        assert_eq!(cluster_label(27), "AB");
    }
}
