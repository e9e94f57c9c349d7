use std::fmt;

use crate::feeder::{Feeder, Phase};
use crate::partition::ClusterTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quantity {
    PLoad,
    QLoad,
    PFed,
    QFed,
    Vmag,
    Vang,
    PHead,
    QHead,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::PLoad => "Pload",
            Quantity::QLoad => "Qload",
            Quantity::PFed => "Pfed",
            Quantity::QFed => "Qfed",
            Quantity::Vmag => "Vmag",
            Quantity::Vang => "Vang",
            Quantity::PHead => "Phead",
            Quantity::QHead => "Qhead",
        }
    }

    pub fn parse(s: &str) -> Option<Quantity> {
        [
            Quantity::PLoad,
            Quantity::QLoad,
            Quantity::PFed,
            Quantity::QFed,
            Quantity::Vmag,
            Quantity::Vang,
            Quantity::PHead,
            Quantity::QHead,
        ]
        .into_iter()
        .find(|q| q.name() == s)
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Slot {
    pub bus: usize,
    pub phase: Phase,
    pub quantity: Quantity,
}

impl Slot {
    /// Column name such as `Vmag[12.A]`.
    pub fn name(&self, f: &Feeder) -> String {
        format!("{}[{}.{}]", self.quantity, f.bus_id(self.bus), self.phase)
    }
}

/// Ordered input and output slots of one cluster model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoLayout {
    pub cluster: usize,
    pub inputs: Vec<Slot>,
    pub outputs: Vec<Slot>,
    /// (child cluster, offset of its six fed slots in `inputs`).
    pub fed: Vec<(usize, usize)>,
    /// Offset of the six head-power slots in `outputs` (None for the top).
    pub head: Option<usize>,
}

fn six(bus: usize, p: Quantity, q: Quantity) -> impl Iterator<Item = Slot> {
    Phase::ALL.into_iter().flat_map(move |phase| {
        [
            Slot { bus, phase, quantity: p },
            Slot { bus, phase, quantity: q },
        ]
    })
}

impl IoLayout {
    pub fn n_inputs(&self) -> usize {
        self.inputs.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn input_names(&self, f: &Feeder) -> Vec<String> {
        self.inputs.iter().map(|s| s.name(f)).collect()
    }

    pub fn output_names(&self, f: &Feeder) -> Vec<String> {
        self.outputs.iter().map(|s| s.name(f)).collect()
    }

    /// Number of independent (load) input slots.
    pub fn n_load_inputs(&self) -> usize {
        self.inputs
            .iter()
            .filter(|s| matches!(s.quantity, Quantity::PLoad | Quantity::QLoad))
            .count()
    }
}

/// Slot allocation per cluster: six load slots (P, Q per phase) for every
/// cluster bus, six fed slots per child head bus; outputs |V| and angle per
/// present bus-phase, then six head-power slots unless the cluster is the top.
/// Absent phases keep their load, fed and head slots as structural zeros.
pub fn allocate_io(tree: &ClusterTree, f: &Feeder) -> Vec<IoLayout> {
    tree.clusters()
        .iter()
        .map(|c| {
            let mut inputs: Vec<Slot> = c
                .nodes
                .iter()
                .flat_map(|&b| six(b, Quantity::PLoad, Quantity::QLoad))
                .collect();
            let mut fed = Vec::new();
            for &child in &c.children {
                fed.push((child, inputs.len()));
                inputs.extend(six(tree.cluster(child).head, Quantity::PFed, Quantity::QFed));
            }
            let mut outputs: Vec<Slot> = Vec::new();
            for &b in &c.nodes {
                for phase in f.buses()[b].phases.iter() {
                    outputs.push(Slot { bus: b, phase, quantity: Quantity::Vmag });
                    outputs.push(Slot { bus: b, phase, quantity: Quantity::Vang });
                }
            }
            let head = c.parent.map(|_| {
                let at = outputs.len();
                outputs.extend(six(c.head, Quantity::PHead, Quantity::QHead));
                at
            });
            IoLayout {
                cluster: c.id,
                inputs,
                outputs,
                fed,
                head,
            }
        })
        .collect()
}

/// Checks that every parent's fed slots mirror its children's head outputs.
pub fn layouts_consistent(tree: &ClusterTree, layouts: &[IoLayout]) -> Result<(), String> {
    if layouts.len() != tree.len() {
        return Err(format!("{} layouts for {} clusters", layouts.len(), tree.len()));
    }
    for (id, l) in layouts.iter().enumerate() {
        let c = tree.cluster(id);
        if l.cluster != id {
            return Err(format!("layout {id} belongs to cluster {}", l.cluster));
        }
        if l.fed.iter().map(|&(k, _)| k).collect::<Vec<_>>() != c.children {
            return Err(format!("cluster {id}: fed slots do not match its children"));
        }
        if l.head.is_some() != c.parent.is_some() {
            return Err(format!("cluster {id}: head slots do not match its position"));
        }
        for &(child, off) in &l.fed {
            let Some(h) = layouts[child].head else {
                return Err(format!("cluster {child} has no head outputs"));
            };
            for k in 0..6 {
                let (fs, hs) = (l.inputs[off + k], layouts[child].outputs[h + k]);
                let paired = matches!(
                    (fs.quantity, hs.quantity),
                    (Quantity::PFed, Quantity::PHead) | (Quantity::QFed, Quantity::QHead)
                );
                if fs.bus != hs.bus || fs.phase != hs.phase || !paired {
                    return Err(format!("cluster {id}: fed slot {} disagrees with child {child}", off + k));
                }
            }
        }
    }
    Ok(())
}
