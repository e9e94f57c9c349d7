//! Distribution network model: buses, three-phase branches, constant-PQ loads.
//!
//! All electrical quantities are held in per-unit on the feeder's per-phase
//! base power and each bus's line-to-neutral base voltage. Absent phases are
//! carried as structural zeros inside the 3x3 branch blocks; [`NodeIndex`]
//! compacts them away when the nodal system is formed.

mod admittance;
mod parse;

pub use admittance::{build_admittance, AdmittanceMatrix, CsrMatrix};
pub use parse::{parse_complex, parse_feeder, serialize_feeder};

use std::collections::{HashMap, VecDeque};
use std::fmt;

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::textfmt::SyntaxError;

pub type Block3 = [[Complex64; 3]; 3];

pub const ZERO_BLOCK: Block3 = [[Complex64::new(0.0, 0.0); 3]; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Phase {
        Self::ALL[i]
    }

    /// Nominal angle offset in degrees (A at 0, B lagging, C leading).
    pub fn nominal_angle_deg(self) -> f64 {
        match self {
            Phase::A => 0.0,
            Phase::B => -120.0,
            Phase::C => 120.0,
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        match s {
            "A" | "a" => Some(Phase::A),
            "B" | "b" => Some(Phase::B),
            "C" | "c" => Some(Phase::C),
            _ => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::A => "A",
            Phase::B => "B",
            Phase::C => "C",
        })
    }
}

/// Non-empty subset of {A, B, C}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const ABC: PhaseSet = PhaseSet(0b111);

    pub fn new(phases: &[Phase]) -> Option<PhaseSet> {
        let mask = phases.iter().fold(0u8, |m, p| m | (1 << p.index()));
        (mask != 0).then_some(PhaseSet(mask))
    }

    pub fn parse(s: &str) -> Option<PhaseSet> {
        let mut mask = 0u8;
        for ch in s.chars() {
            let p = Phase::parse(&ch.to_string())?;
            if mask & (1 << p.index()) != 0 {
                return None;
            }
            mask |= 1 << p.index();
        }
        (mask != 0).then_some(PhaseSet(mask))
    }

    pub fn contains(self, p: Phase) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Slack,
    Load,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub phases: PhaseSet,
    pub kind: BusKind,
    /// Line-to-neutral base voltage in kV.
    pub base_kv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// Series admittance in per-unit.
    pub series: Block3,
    /// Total shunt admittance in per-unit; half is placed at each end.
    pub shunt: Block3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: usize,
    pub phase: Phase,
    pub base_p_kw: f64,
    pub base_q_kvar: f64,
    pub shape_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Source {
    pub vmag_pu: f64,
    pub angle_deg: f64,
}

impl Default for Source {
    fn default() -> Self {
        Self {
            vmag_pu: 1.0,
            angle_deg: 0.0,
        }
    }
}

/// Row map for the compacted (bus, phase) index space.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeIndex {
    rows: Vec<(usize, Phase)>,
    lookup: Vec<[Option<usize>; 3]>,
}

impl NodeIndex {
    fn new(buses: &[Bus]) -> Self {
        let mut rows = Vec::new();
        let mut lookup = Vec::with_capacity(buses.len());
        for (b, bus) in buses.iter().enumerate() {
            let mut entry = [None; 3];
            for p in bus.phases.iter() {
                entry[p.index()] = Some(rows.len());
                rows.push((b, p));
            }
            lookup.push(entry);
        }
        Self { rows, lookup }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, bus: usize, phase: Phase) -> Option<usize> {
        self.lookup.get(bus).and_then(|e| e[phase.index()])
    }

    pub fn node(&self, row: usize) -> (usize, Phase) {
        self.rows[row]
    }

    pub fn rows(&self) -> &[(usize, Phase)] {
        &self.rows
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeederError {
    #[error("syntax error at {0}")]
    Syntax(#[from] SyntaxError),
    #[error("line {line}: {what} references unknown bus `{id}`")]
    DanglingReference { line: usize, what: String, id: String },
    #[error("duplicate bus id `{0}`")]
    DuplicateId(String),
    #[error("{what} must be positive, got {value}")]
    InvalidBase { what: String, value: f64 },
    #[error("feeder has no slack bus")]
    NoSlack,
    #[error("feeder failed validation: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("node-phase {bus}.{phase} has an all-zero admittance row")]
    SingularNode { bus: String, phase: Phase },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    MultipleSlack(Vec<String>),
    Disconnected { unreachable: Vec<String> },
    LoadPhase { bus: String, phase: Phase },
    BranchPhase { from: String, to: String, phase: Phase },
    AsymmetricSeries { from: String, to: String },
    NegativeLoad { bus: String, phase: Phase },
    SelfLoop { bus: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MultipleSlack(ids) => write!(f, "multiple slack buses: {}", ids.join(", ")),
            Violation::Disconnected { unreachable } => {
                write!(f, "buses unreachable from slack: {}", unreachable.join(", "))
            }
            Violation::LoadPhase { bus, phase } => {
                write!(f, "load on phase {phase} of bus {bus} which lacks that phase")
            }
            Violation::BranchPhase { from, to, phase } => write!(
                f,
                "branch {from}-{to} has nonzero entries on phase {phase} absent at an endpoint"
            ),
            Violation::AsymmetricSeries { from, to } => {
                write!(f, "branch {from}-{to} series block is not symmetric")
            }
            Violation::NegativeLoad { bus, phase } => {
                write!(f, "load at {bus}.{phase} has negative active power")
            }
            Violation::SelfLoop { bus } => write!(f, "branch connects bus {bus} to itself"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feeder {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    loads: Vec<Load>,
    slack: usize,
    /// Per-phase base power in kVA.
    base_kva: f64,
    source: Source,
    index: NodeIndex,
    bus_lookup: HashMap<String, usize>,
}

impl Feeder {
    /// Structural construction: resolves the slack bus and checks bases.
    /// Topology and phase consistency are left to [`Feeder::validate`].
    pub fn new(
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        loads: Vec<Load>,
        base_kva: f64,
        source: Source,
    ) -> Result<Self, FeederError> {
        if !(base_kva > 0.0) {
            return Err(FeederError::InvalidBase {
                what: "base_kva".into(),
                value: base_kva,
            });
        }
        if !(source.vmag_pu > 0.0) {
            return Err(FeederError::InvalidBase {
                what: "source vmag".into(),
                value: source.vmag_pu,
            });
        }
        let mut bus_lookup = HashMap::with_capacity(buses.len());
        for (i, b) in buses.iter().enumerate() {
            if !(b.base_kv > 0.0) {
                return Err(FeederError::InvalidBase {
                    what: format!("base_kv of bus {}", b.id),
                    value: b.base_kv,
                });
            }
            if bus_lookup.insert(b.id.clone(), i).is_some() {
                return Err(FeederError::DuplicateId(b.id.clone()));
            }
        }
        let n = buses.len();
        for br in &branches {
            if br.from >= n || br.to >= n {
                return Err(FeederError::DanglingReference {
                    line: 0,
                    what: "branch".into(),
                    id: format!("#{}", br.from.max(br.to)),
                });
            }
        }
        for l in &loads {
            if l.bus >= n {
                return Err(FeederError::DanglingReference {
                    line: 0,
                    what: "load".into(),
                    id: format!("#{}", l.bus),
                });
            }
        }
        let slack = buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .ok_or(FeederError::NoSlack)?;
        let index = NodeIndex::new(&buses);
        Ok(Self {
            buses,
            branches,
            loads,
            slack,
            base_kva,
            source,
            index,
            bus_lookup,
        })
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn loads(&self) -> &[Load] {
        &self.loads
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn base_kva(&self) -> f64 {
        self.base_kva
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn index(&self) -> &NodeIndex {
        &self.index
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.bus_lookup.get(id).copied()
    }

    pub fn bus_id(&self, bus: usize) -> &str {
        &self.buses[bus].id
    }

    /// Slack phasor for one phase, in per-unit.
    pub fn source_voltage(&self, phase: Phase) -> Complex64 {
        let ang = (self.source.angle_deg + phase.nominal_angle_deg()).to_radians();
        Complex64::from_polar(self.source.vmag_pu, ang)
    }

    /// Load power in per-unit (consumption positive) at multiplier 1.
    pub fn load_power_pu(&self, load: &Load) -> Complex64 {
        Complex64::new(load.base_p_kw, load.base_q_kvar) / self.base_kva
    }

    /// Adjacency list of (neighbor, branch index).
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.buses.len()];
        for (k, br) in self.branches.iter().enumerate() {
            adj[br.from].push((br.to, k));
            adj[br.to].push((br.from, k));
        }
        adj
    }

    /// SHA-256 of the canonical serialization.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(serialize_feeder(self).as_bytes()))
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_feeder(self)
    }
}

/// Reports connectivity, phase-consistency and slack-count violations.
pub fn validate_feeder(f: &Feeder) -> Vec<Violation> {
    let mut out = Vec::new();
    let slacks: Vec<String> = f
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Slack)
        .map(|b| b.id.clone())
        .collect();
    if slacks.len() > 1 {
        out.push(Violation::MultipleSlack(slacks));
    }

    let adj = f.adjacency();
    let mut seen = vec![false; f.buses.len()];
    let mut queue = VecDeque::from([f.slack]);
    seen[f.slack] = true;
    while let Some(b) = queue.pop_front() {
        for &(nb, _) in &adj[b] {
            if !seen[nb] {
                seen[nb] = true;
                queue.push_back(nb);
            }
        }
    }
    let unreachable: Vec<String> = seen
        .iter()
        .enumerate()
        .filter(|(_, s)| !**s)
        .map(|(i, _)| f.buses[i].id.clone())
        .collect();
    if !unreachable.is_empty() {
        out.push(Violation::Disconnected { unreachable });
    }

    for br in &f.branches {
        let from = &f.buses[br.from];
        let to = &f.buses[br.to];
        if br.from == br.to {
            out.push(Violation::SelfLoop { bus: from.id.clone() });
            continue;
        }
        for p in Phase::ALL {
            let present = from.phases.contains(p) && to.phases.contains(p);
            if present {
                continue;
            }
            let i = p.index();
            let nonzero = (0..3).any(|j| {
                br.series[i][j] != Complex64::new(0.0, 0.0)
                    || br.series[j][i] != Complex64::new(0.0, 0.0)
                    || br.shunt[i][j] != Complex64::new(0.0, 0.0)
                    || br.shunt[j][i] != Complex64::new(0.0, 0.0)
            });
            if nonzero {
                out.push(Violation::BranchPhase {
                    from: from.id.clone(),
                    to: to.id.clone(),
                    phase: p,
                });
            }
        }
        let symmetric = (0..3).all(|i| (0..3).all(|j| br.series[i][j] == br.series[j][i]));
        if !symmetric {
            out.push(Violation::AsymmetricSeries {
                from: from.id.clone(),
                to: to.id.clone(),
            });
        }
    }

    for l in &f.loads {
        let bus = &f.buses[l.bus];
        if !bus.phases.contains(l.phase) {
            out.push(Violation::LoadPhase {
                bus: bus.id.clone(),
                phase: l.phase,
            });
        }
        if l.base_p_kw < 0.0 {
            out.push(Violation::NegativeLoad {
                bus: bus.id.clone(),
                phase: l.phase,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bus(id: &str, kind: BusKind) -> Bus {
        Bus {
            id: id.into(),
            phases: PhaseSet::ABC,
            kind,
            base_kv: 2.4,
        }
    }

    fn line(from: usize, to: usize) -> Branch {
        let mut series = ZERO_BLOCK;
        for (p, row) in series.iter_mut().enumerate() {
            row[p] = Complex64::new(10.0, -20.0);
        }
        Branch {
            from,
            to,
            series,
            shunt: ZERO_BLOCK,
        }
    }

    #[test]
    fn valid_two_bus_has_no_violations() {
        let f = Feeder::new(
            vec![bus("1", BusKind::Slack), bus("2", BusKind::Load)],
            vec![line(0, 1)],
            vec![],
            1000.0,
            Source::default(),
        )
        .unwrap();
        assert!(validate_feeder(&f).is_empty());
    }

    #[test]
    fn two_slack_buses_reported_once_with_both_ids() {
        let f = Feeder::new(
            vec![bus("s1", BusKind::Slack), bus("s2", BusKind::Slack)],
            vec![line(0, 1)],
            vec![],
            1000.0,
            Source::default(),
        )
        .unwrap();
        let v = validate_feeder(&f);
        assert_eq!(v, vec![Violation::MultipleSlack(vec!["s1".into(), "s2".into()])]);
    }

    #[test]
    fn disconnected_component_listed() {
        let f = Feeder::new(
            vec![
                bus("1", BusKind::Slack),
                bus("2", BusKind::Load),
                bus("3", BusKind::Load),
                bus("4", BusKind::Load),
            ],
            vec![line(0, 1), line(2, 3)],
            vec![],
            1000.0,
            Source::default(),
        )
        .unwrap();
        let v = validate_feeder(&f);
        assert_eq!(
            v,
            vec![Violation::Disconnected {
                unreachable: vec!["3".into(), "4".into()]
            }]
        );
    }

    #[test]
    fn load_on_absent_phase_flagged() {
        let mut b2 = bus("2", BusKind::Load);
        b2.phases = PhaseSet::new(&[Phase::A]).unwrap();
        let mut br = line(0, 1);
        br.series[1][1] = Complex64::new(0.0, 0.0);
        br.series[2][2] = Complex64::new(0.0, 0.0);
        let f = Feeder::new(
            vec![bus("1", BusKind::Slack), b2],
            vec![br],
            vec![Load {
                bus: 1,
                phase: Phase::C,
                base_p_kw: 1.0,
                base_q_kvar: 0.0,
                shape_id: "x".into(),
            }],
            1000.0,
            Source::default(),
        )
        .unwrap();
        assert_eq!(
            validate_feeder(&f),
            vec![Violation::LoadPhase {
                bus: "2".into(),
                phase: Phase::C
            }]
        );
    }

    #[test]
    fn branch_entries_on_absent_phase_flagged() {
        let mut b2 = bus("2", BusKind::Load);
        b2.phases = PhaseSet::new(&[Phase::A, Phase::B]).unwrap();
        let f = Feeder::new(
            vec![bus("1", BusKind::Slack), b2],
            vec![line(0, 1)],
            vec![],
            1000.0,
            Source::default(),
        )
        .unwrap();
        assert!(matches!(
            validate_feeder(&f).as_slice(),
            [Violation::BranchPhase { phase: Phase::C, .. }]
        ));
    }

    #[test]
    fn structural_errors() {
        assert!(matches!(
            Feeder::new(vec![bus("1", BusKind::Load)], vec![], vec![], 1000.0, Source::default()),
            Err(FeederError::NoSlack)
        ));
        assert!(matches!(
            Feeder::new(
                vec![bus("1", BusKind::Slack), bus("1", BusKind::Load)],
                vec![],
                vec![],
                1000.0,
                Source::default()
            ),
            Err(FeederError::DuplicateId(_))
        ));
        assert!(matches!(
            Feeder::new(vec![bus("1", BusKind::Slack)], vec![], vec![], 0.0, Source::default()),
            Err(FeederError::InvalidBase { .. })
        ));
    }

    #[test]
    fn node_index_is_gap_free() {
        let mut b2 = bus("2", BusKind::Load);
        b2.phases = PhaseSet::new(&[Phase::C]).unwrap();
        let f = Feeder::new(
            vec![bus("1", BusKind::Slack), b2, bus("3", BusKind::Load)],
            vec![],
            vec![],
            1000.0,
            Source::default(),
        )
        .unwrap();
        let idx = f.index();
        assert_eq!(idx.len(), 7);
        assert_eq!(idx.row(1, Phase::C), Some(3));
        assert_eq!(idx.row(1, Phase::A), None);
        assert_eq!(idx.node(4), (2, Phase::A));
    }

    #[test]
    fn phase_set_parse() {
        assert_eq!(PhaseSet::parse("ABC"), Some(PhaseSet::ABC));
        assert_eq!(PhaseSet::parse("CB").unwrap().to_string(), "BC");
        assert_eq!(PhaseSet::parse("AA"), None);
        assert_eq!(PhaseSet::parse(""), None);
        assert_eq!(PhaseSet::parse("AD"), None);
    }
}
