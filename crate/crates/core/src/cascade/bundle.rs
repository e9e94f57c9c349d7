use std::path::{Path, PathBuf};

use super::layout::allocate_io;
use super::model::{partition_hash, CascadeModel};
use super::CascadeError;
use crate::feeder::Feeder;
use crate::neural::{read_model, write_model};
use crate::partition::ClusterTree;
use crate::textfmt::{Document, Writer};

pub const PARTITION_FILE: &str = "partition.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn model_path(dir: &Path, cluster: usize) -> PathBuf {
    dir.join(format!("model_{cluster}.txt"))
}

/// Bookkeeping stored next to the models.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BundleManifest {
    pub feeder_hash: String,
    pub partition_hash: String,
    pub seed: u64,
    /// Source sample ids used for training and held out for testing.
    pub train_samples: Vec<usize>,
    pub test_samples: Vec<usize>,
}

fn io(path: &Path, e: std::io::Error) -> CascadeError {
    CascadeError::Bundle(format!("{}: {e}", path.display()))
}

pub fn save_bundle(dir: &Path, cm: &CascadeModel, f: &Feeder, manifest: &BundleManifest) -> Result<(), CascadeError> {
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let p = dir.join(PARTITION_FILE);
    std::fs::write(&p, cm.tree.export(f)).map_err(|e| io(&p, e))?;
    for (id, m) in cm.models.iter().enumerate() {
        write_model(&model_path(dir, id), m).map_err(|e| CascadeError::Bundle(e.to_string()))?;
    }
    let mut w = Writer::new();
    w.section("bundle");
    w.line(["feeder_hash", &cm.feeder_hash]);
    w.line(["partition_hash", &cm.partition_hash]);
    w.line(["clusters".to_string(), cm.len().to_string()]);
    w.line(["seed".to_string(), manifest.seed.to_string()]);
    w.section("layouts");
    for l in &cm.layouts {
        w.line([l.cluster.to_string(), l.n_inputs().to_string(), l.n_outputs().to_string()]);
    }
    w.section("samples");
    w.line(std::iter::once("train".to_string()).chain(manifest.train_samples.iter().map(|s| s.to_string())));
    w.line(std::iter::once("test".to_string()).chain(manifest.test_samples.iter().map(|s| s.to_string())));
    let p = dir.join(MANIFEST_FILE);
    std::fs::write(&p, w.finish()).map_err(|e| io(&p, e))
}

pub fn read_manifest(dir: &Path) -> Result<BundleManifest, CascadeError> {
    let p = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| io(&p, e))?;
    let bad = |e: crate::textfmt::SyntaxError| CascadeError::Bundle(format!("{}: {e}", p.display()));
    let doc = Document::parse(&text).map_err(bad)?;
    let b = doc.require("bundle").map_err(bad)?;
    let s = doc.require("samples").map_err(bad)?;
    let ids = |key: &str| -> Result<Vec<usize>, CascadeError> {
        let l = s.require(key).map_err(bad)?;
        (1..l.tokens.len()).map(|i| l.usize_at(i).map_err(bad)).collect()
    };
    Ok(BundleManifest {
        feeder_hash: b.require("feeder_hash").and_then(|l| l.str_at(1).map(str::to_string)).map_err(bad)?,
        partition_hash: b.require("partition_hash").and_then(|l| l.str_at(1).map(str::to_string)).map_err(bad)?,
        seed: b.require("seed").and_then(|l| l.u64_at(1)).map_err(bad)?,
        train_samples: ids("train")?,
        test_samples: ids("test")?,
    })
}

/// Loads a bundle for prediction; the feeder must be the one it was built for.
pub fn load_bundle(dir: &Path, f: &Feeder) -> Result<(CascadeModel, BundleManifest), CascadeError> {
    let manifest = read_manifest(dir)?;
    if manifest.feeder_hash != f.content_hash() {
        return Err(CascadeError::Bundle("bundle was built for a different feeder".into()));
    }
    let p = dir.join(PARTITION_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| io(&p, e))?;
    let tree = ClusterTree::import(f, &text).map_err(|e| CascadeError::Bundle(e.to_string()))?;
    if partition_hash(&tree, f) != manifest.partition_hash {
        return Err(CascadeError::Bundle("partition does not match the manifest".into()));
    }
    let models = (0..tree.len())
        .map(|id| read_model(&model_path(dir, id)).map_err(|e| CascadeError::Bundle(format!("cluster {id}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let layouts = allocate_io(&tree, f);
    Ok((CascadeModel::new(f, tree, layouts, models)?, manifest))
}
