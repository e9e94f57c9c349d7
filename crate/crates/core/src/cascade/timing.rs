use super::CascadeError;
use crate::partition::ClusterTree;

/// Per-cluster prediction times and the critical path through the tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRecord {
    /// Seconds per cluster, indexed by cluster id.
    pub cluster_seconds: Vec<f64>,
    /// Largest cluster time in each layer, top first.
    pub layer_max: Vec<f64>,
    /// (leaf cluster, summed time along its root path).
    pub path_sums: Vec<(usize, f64)>,
    pub t_ats: f64,
}

fn path_sums(times: &[f64], parents: &[Option<usize>]) -> Result<Vec<(usize, f64)>, CascadeError> {
    if times.len() != parents.len() {
        return Err(CascadeError::MissingTime(times.len().min(parents.len())));
    }
    if let Some(k) = times.iter().position(|t| !t.is_finite() || *t < 0.0) {
        return Err(CascadeError::MissingTime(k));
    }
    let mut has_child = vec![false; parents.len()];
    for p in parents.iter().flatten() {
        if *p >= parents.len() {
            return Err(CascadeError::Layout(format!("parent {p} out of range")));
        }
        has_child[*p] = true;
    }
    let mut out = Vec::new();
    for leaf in (0..parents.len()).filter(|&k| !has_child[k]) {
        let (mut sum, mut at, mut steps) = (0.0, Some(leaf), 0);
        while let Some(k) = at {
            sum += times[k];
            at = parents[k];
            steps += 1;
            if steps > parents.len() {
                return Err(CascadeError::Layout("parent links form a cycle".into()));
            }
        }
        out.push((leaf, sum));
    }
    Ok(out)
}

/// Longest root-to-leaf path, weighting each cluster by its own time: a
/// parent can only start once every child on its branch has finished, while
/// separate branches run side by side.
///
/// Layerings used to check published timings (inferred, not given there):
/// four clusters as A on top, B and C under A, D under C; seven clusters as
/// A on top with B through G all directly under A.
pub fn critical_path_time(times: &[f64], parents: &[Option<usize>]) -> Result<f64, CascadeError> {
    Ok(path_sums(times, parents)?
        .into_iter()
        .map(|(_, s)| s)
        .fold(0.0, f64::max))
}

impl TimingRecord {
    pub fn new(tree: &ClusterTree, cluster_seconds: Vec<f64>) -> Result<Self, CascadeError> {
        let parents = tree.parents();
        let path_sums = path_sums(&cluster_seconds, &parents)?;
        let t_ats = path_sums.iter().map(|p| p.1).fold(0.0, f64::max);
        let layer_max = tree
            .layers()
            .iter()
            .map(|l| l.iter().map(|&k| cluster_seconds[k]).fold(0.0, f64::max))
            .collect();
        Ok(Self { cluster_seconds, layer_max, path_sums, t_ats })
    }

    pub fn total(&self) -> f64 {
        self.cluster_seconds.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_is_its_own_time() {
        assert_eq!(critical_path_time(&[0.3], &[None]).unwrap(), 0.3);
    }

    #[test]
    fn branches_run_in_parallel() {
        // 0 <- 1 <- 3, 0 <- 2
        let parents = [None, Some(0), Some(0), Some(1)];
        let t = critical_path_time(&[1.0, 2.0, 5.0, 0.5], &parents).unwrap();
        assert_eq!(t, 6.0);
        assert!(matches!(critical_path_time(&[1.0, f64::NAN, 1.0, 1.0], &parents), Err(CascadeError::MissingTime(1))));
        assert!(critical_path_time(&[1.0; 3], &parents).is_err());
    }
}
