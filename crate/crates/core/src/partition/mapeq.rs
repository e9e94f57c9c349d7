use super::{FlowGraph, Partition, PartitionError};

/// `p log2 p` with the 0 log 0 = 0 convention.
pub fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

fn entropy(weights: impl Iterator<Item = f64>, total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    -weights.map(|w| plogp(w / total)).sum::<f64>()
}

/// Visit rates of the undirected random walk, `strength_i / total strength`.
pub fn stationary_distribution(g: &FlowGraph) -> Result<Vec<f64>, PartitionError> {
    if !g.is_connected() {
        return Err(PartitionError::Disconnected);
    }
    let mut strength = vec![0.0; g.len()];
    for &(a, b, w) in g.edges() {
        strength[a] += w;
        strength[b] += w;
    }
    let total: f64 = strength.iter().sum();
    if total <= 0.0 {
        // single isolated node
        return Ok(vec![1.0 / g.len().max(1) as f64; g.len()]);
    }
    Ok(strength.into_iter().map(|s| s / total).collect())
}

/// Two-level map equation in bits:
///
/// `L = q H({q_m / q}) + Σ_m (q_m + Σ_{i∈m} p_i) H({q_m, p_i} / (q_m + Σ p_i))`
///
/// where `q_m` is the exit flow of module m and `q = Σ q_m`.
pub fn map_equation_cost(g: &FlowGraph, part: &Partition) -> Result<f64, PartitionError> {
    if part.len() != g.len() {
        return Err(PartitionError::SizeMismatch {
            expected: g.len(),
            got: part.len(),
        });
    }
    let k = part.module_count();
    let mut size = vec![0usize; k];
    for &m in part.assignment() {
        if m >= k {
            return Err(PartitionError::EmptyModule(m));
        }
        size[m] += 1;
    }
    if let Some(m) = size.iter().position(|&s| s == 0) {
        return Err(PartitionError::EmptyModule(m));
    }

    let p = g.visit_rates();
    let mut exit = vec![0.0; k];
    for &(a, b, w) in g.edges() {
        let (ma, mb) = (part.module_of(a), part.module_of(b));
        if ma != mb {
            let flow = g.edge_flow(w);
            exit[ma] += flow;
            exit[mb] += flow;
        }
    }
    let q: f64 = exit.iter().sum();
    let index_term = q * entropy(exit.iter().copied(), q);

    let mut members: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (v, &m) in part.assignment().iter().enumerate() {
        members[m].push(p[v]);
    }
    let module_term: f64 = (0..k)
        .map(|m| {
            let total = exit[m] + members[m].iter().sum::<f64>();
            let weights = std::iter::once(exit[m]).chain(members[m].iter().copied());
            total * entropy(weights, total)
        })
        .sum();
    Ok(index_term + module_term)
}
