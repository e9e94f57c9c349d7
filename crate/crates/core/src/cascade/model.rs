use nalgebra::DMatrix;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::layout::{allocate_io, layouts_consistent, IoLayout, Quantity};
use super::CascadeError;
use crate::feeder::Feeder;
use crate::neural::{train_on_dataset, MlpConfig, MlpModel, TrainReport};
use crate::partition::ClusterTree;
use crate::synth::ClusterDataset;

/// One trained model per cluster, wired by the layouts of the tree.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub tree: ClusterTree,
    pub layouts: Vec<IoLayout>,
    pub models: Vec<MlpModel>,
    pub feeder_hash: String,
    /// SHA-256 of the partition export.
    pub partition_hash: String,
    /// Number of buses in the source feeder (width of system inputs / 6).
    pub n_buses: usize,
}

pub fn partition_hash(tree: &ClusterTree, f: &Feeder) -> String {
    hex::encode(Sha256::digest(tree.export(f).as_bytes()))
}

/// Column of a load slot in the system input matrix: six per bus
/// (P then Q for phases A, B, C).
pub fn system_column(bus: usize, phase: crate::feeder::Phase, q: bool) -> usize {
    6 * bus + 2 * phase.index() + usize::from(q)
}

impl CascadeModel {
    pub fn new(
        f: &Feeder,
        tree: ClusterTree,
        layouts: Vec<IoLayout>,
        models: Vec<MlpModel>,
    ) -> Result<Self, CascadeError> {
        layouts_consistent(&tree, &layouts).map_err(CascadeError::Layout)?;
        if models.len() != tree.len() {
            return Err(CascadeError::Layout(format!("{} models for {} clusters", models.len(), tree.len())));
        }
        for (id, (m, l)) in models.iter().zip(&layouts).enumerate() {
            if m.n_inputs() != l.n_inputs() || m.n_outputs() != l.n_outputs() {
                return Err(CascadeError::Layout(format!(
                    "cluster {id}: model is {}x{} but layout needs {}x{}",
                    m.n_inputs(),
                    m.n_outputs(),
                    l.n_inputs(),
                    l.n_outputs()
                )));
            }
        }
        Ok(Self {
            partition_hash: partition_hash(&tree, f),
            feeder_hash: f.content_hash(),
            n_buses: f.buses().len(),
            tree,
            layouts,
            models,
        })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn n_system_inputs(&self) -> usize {
        6 * self.n_buses
    }
}

/// Trains every cluster model on its own dataset with ground-truth fed
/// inputs. Cluster `j` uses seed `cfg.seed + j`, so the result does not
/// depend on scheduling.
pub fn train_tree(
    f: &Feeder,
    tree: &ClusterTree,
    datasets: &[ClusterDataset],
    cfg: &MlpConfig,
) -> Result<(CascadeModel, Vec<TrainReport>), CascadeError> {
    let layouts = allocate_io(tree, f);
    for id in 0..tree.len() {
        let ds = datasets
            .iter()
            .find(|d| d.cluster == id)
            .ok_or(CascadeError::MissingDataset(id))?;
        if ds.layout != layouts[id] {
            return Err(CascadeError::Layout(format!("dataset for cluster {id} has a different layout")));
        }
    }
    let trained: Vec<(MlpModel, TrainReport)> = (0..tree.len())
        .into_par_iter()
        .map(|id| {
            let ds = datasets.iter().find(|d| d.cluster == id).expect("checked above");
            let c = MlpConfig { seed: cfg.seed.wrapping_add(id as u64), ..cfg.clone() };
            train_on_dataset(ds, &c).map_err(|source| CascadeError::Training { cluster: id, source })
        })
        .collect::<Result<_, _>>()?;
    let (models, reports): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
    Ok((CascadeModel::new(f, tree.clone(), layouts, models)?, reports))
}

/// Rebuilds system inputs for the given dataset rows from the load slots of
/// every cluster dataset (each bus belongs to exactly one cluster).
pub fn gather_system_inputs(datasets: &[ClusterDataset], n_buses: usize, rows: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), 6 * n_buses);
    for ds in datasets {
        for (k, s) in ds.layout.inputs.iter().enumerate() {
            let q = match s.quantity {
                Quantity::PLoad => false,
                Quantity::QLoad => true,
                _ => continue,
            };
            let col = system_column(s.bus, s.phase, q);
            for (i, &r) in rows.iter().enumerate() {
                out[(i, col)] = ds.inputs[(r, k)];
            }
        }
    }
    out
}
