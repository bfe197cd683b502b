use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use num_complex::Complex;

use super::GridError;

/// Complex per-unit phasor.
pub type Phasor = Complex<f64>;

/// One phasor per phase, fixed order (a, b, c). Entries for phases absent
/// from the owning bus or branch are carried along but never read.
pub type PhasorAbc = [Phasor; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }

    pub fn from_index(i: usize) -> Phase {
        Self::ALL[i]
    }

    pub fn as_char(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }

    pub fn from_char(c: char) -> Option<Phase> {
        match c.to_ascii_lowercase() {
            'a' => Some(Phase::A),
            'b' => Some(Phase::B),
            'c' => Some(Phase::C),
            _ => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Set of phases present on a bus or branch, encoded as a 3-bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub fn abc() -> PhaseSet {
        PhaseSet(0b111)
    }

    pub fn empty() -> PhaseSet {
        PhaseSet(0)
    }

    pub fn from_str(s: &str) -> Option<PhaseSet> {
        let mut mask = 0u8;
        for c in s.chars() {
            mask |= 1 << Phase::from_char(c)?.index();
        }
        Some(PhaseSet(mask))
    }

    pub fn contains(self, p: Phase) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn is_subset_of(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
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
            write!(f, "{}", p)?;
        }
        Ok(())
    }
}

/// Aggregated customer group (one transformer's worth of customers) anchored
/// at a bus. `size_kw` is the nominal connected demand the operator knows
/// from billing data; it drives disaggregation shares and the open-loop
/// scaffold.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomerGroup {
    pub id: String,
    pub size_kw: f64,
}

#[derive(Debug, Clone)]
pub struct Bus {
    pub id: u32,
    pub phases: PhaseSet,
    pub groups: Vec<CustomerGroup>,
}

/// Branch between two buses with a per-phase complex impedance block in
/// per-unit. Only the sub-block over the branch's phase set is used.
#[derive(Debug, Clone)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    pub phases: PhaseSet,
    /// 3x3 impedance block, pu. Symmetric with nonzero diagonal on the
    /// branch's phases.
    pub z: [[Phasor; 3]; 3],
}

impl Branch {
    /// Voltage drop Z*I over this branch's phases. Absent phases yield zero.
    pub fn drop(&self, current: &PhasorAbc) -> PhasorAbc {
        let mut out = [Phasor::new(0.0, 0.0); 3];
        for p in self.phases.iter() {
            let mut acc = Phasor::new(0.0, 0.0);
            for q in self.phases.iter() {
                acc += self.z[p.index()][q.index()] * current[q.index()];
            }
            out[p.index()] = acc;
        }
        out
    }
}

/// Radial three-phase feeder: plain data, not yet validated. Use
/// [`validate_topology`] for a report or [`Feeder::new`] for a checked,
/// oriented wrapper.
#[derive(Debug, Clone)]
pub struct FeederTopology {
    /// Nominal line-to-line voltage, kV. Base for the per-unit system.
    pub base_kv: f64,
    /// Power base, MVA. Defaults to 1.
    pub base_mva: f64,
    pub slack_bus: u32,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
}

impl FeederTopology {
    /// Impedance base in ohms.
    pub fn z_base_ohm(&self) -> f64 {
        self.base_kv * self.base_kv / self.base_mva
    }

    /// Converts engineering kW to per-unit active power.
    pub fn kw_to_pu(&self, kw: f64) -> f64 {
        kw / (self.base_mva * 1000.0)
    }

    pub fn pu_to_kw(&self, pu: f64) -> f64 {
        pu * self.base_mva * 1000.0
    }

    pub fn bus(&self, id: u32) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    /// Customer group ids in deterministic (bus, declaration) order.
    pub fn group_ids(&self) -> Vec<String> {
        let mut out = Vec::new();
        for bus in &self.buses {
            for g in &bus.groups {
                out.push(g.id.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    MissingSlack { id: u32 },
    DuplicateBusId { id: u32 },
    BranchCountMismatch { buses: usize, branches: usize },
    UnknownBusInBranch { branch: usize, id: u32 },
    CycleDetected,
    DisconnectedBus { id: u32 },
    AsymmetricImpedance { branch: usize },
    ZeroDiagonalImpedance { branch: usize, phase: Phase },
    BranchPhasesNotOnBus { branch: usize, bus: u32 },
    DuplicateGroupId { id: String },
    EmptyPhaseSet { bus: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingSlack { id } => write!(f, "slack bus {id} does not exist"),
            Violation::DuplicateBusId { id } => write!(f, "duplicate bus id {id}"),
            Violation::BranchCountMismatch { buses, branches } => write!(
                f,
                "radial feeder needs |branches| = |buses| - 1, got {branches} branches for {buses} buses"
            ),
            Violation::UnknownBusInBranch { branch, id } => {
                write!(f, "branch {branch} references unknown bus {id}")
            }
            Violation::CycleDetected => write!(f, "cycle detected"),
            Violation::DisconnectedBus { id } => write!(f, "bus {id} unreachable from slack"),
            Violation::AsymmetricImpedance { branch } => {
                write!(f, "impedance matrix of branch {branch} is asymmetric")
            }
            Violation::ZeroDiagonalImpedance { branch, phase } => {
                write!(f, "branch {branch} has zero self-impedance on phase {phase}")
            }
            Violation::BranchPhasesNotOnBus { branch, bus } => {
                write!(f, "branch {branch} carries phases missing on bus {bus}")
            }
            Violation::DuplicateGroupId { id } => {
                write!(f, "customer group {id} mapped to more than one bus")
            }
            Violation::EmptyPhaseSet { bus } => write!(f, "bus {bus} has an empty phase set"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok() {
            return write!(f, "ok");
        }
        let mut first = true;
        for v in &self.violations {
            if !first {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
            first = false;
        }
        Ok(())
    }
}

/// Checks radiality, connectivity, impedance symmetry, phase consistency and
/// customer-group uniqueness. Report-style: never fails, lists everything it
/// finds.
pub fn validate_topology(topo: &FeederTopology) -> ValidationReport {
    let mut violations = Vec::new();

    let mut ids = BTreeSet::new();
    for bus in &topo.buses {
        if !ids.insert(bus.id) {
            violations.push(Violation::DuplicateBusId { id: bus.id });
        }
        if bus.phases.is_empty() {
            violations.push(Violation::EmptyPhaseSet { bus: bus.id });
        }
    }
    if !ids.contains(&topo.slack_bus) {
        violations.push(Violation::MissingSlack { id: topo.slack_bus });
    }

    let mut group_ids = BTreeSet::new();
    for bus in &topo.buses {
        for g in &bus.groups {
            if !group_ids.insert(g.id.clone()) {
                violations.push(Violation::DuplicateGroupId { id: g.id.clone() });
            }
        }
    }

    if topo.branches.len() + 1 != topo.buses.len() {
        violations.push(Violation::BranchCountMismatch {
            buses: topo.buses.len(),
            branches: topo.branches.len(),
        });
    }

    let phase_of: BTreeMap<u32, PhaseSet> = topo.buses.iter().map(|b| (b.id, b.phases)).collect();
    for (bi, br) in topo.branches.iter().enumerate() {
        for end in [br.from, br.to] {
            match phase_of.get(&end) {
                None => violations.push(Violation::UnknownBusInBranch { branch: bi, id: end }),
                Some(set) => {
                    if !br.phases.is_subset_of(*set) {
                        violations.push(Violation::BranchPhasesNotOnBus { branch: bi, bus: end });
                    }
                }
            }
        }
        let mut asymmetric = false;
        for p in 0..3 {
            for q in (p + 1)..3 {
                if (br.z[p][q] - br.z[q][p]).norm() > 1e-12 {
                    asymmetric = true;
                }
            }
        }
        if asymmetric {
            violations.push(Violation::AsymmetricImpedance { branch: bi });
        }
        for p in br.phases.iter() {
            if br.z[p.index()][p.index()].norm() == 0.0 {
                violations.push(Violation::ZeroDiagonalImpedance { branch: bi, phase: p });
            }
        }
    }

    // Connectivity / cycles via BFS over the undirected graph.
    if ids.contains(&topo.slack_bus) {
        let mut adj: BTreeMap<u32, Vec<(u32, usize)>> = BTreeMap::new();
        for (bi, br) in topo.branches.iter().enumerate() {
            if phase_of.contains_key(&br.from) && phase_of.contains_key(&br.to) {
                adj.entry(br.from).or_default().push((br.to, bi));
                adj.entry(br.to).or_default().push((br.from, bi));
            }
        }
        let mut seen: BTreeSet<u32> = BTreeSet::new();
        let mut used: BTreeSet<usize> = BTreeSet::new();
        let mut cycle = false;
        let mut queue = VecDeque::new();
        queue.push_back(topo.slack_bus);
        seen.insert(topo.slack_bus);
        while let Some(u) = queue.pop_front() {
            if let Some(edges) = adj.get(&u) {
                for &(v, bi) in edges {
                    if used.contains(&bi) {
                        continue;
                    }
                    used.insert(bi);
                    if seen.contains(&v) {
                        cycle = true;
                    } else {
                        seen.insert(v);
                        queue.push_back(v);
                    }
                }
            }
        }
        if cycle {
            violations.push(Violation::CycleDetected);
        }
        for bus in &topo.buses {
            if !seen.contains(&bus.id) {
                violations.push(Violation::DisconnectedBus { id: bus.id });
            }
        }
    }

    ValidationReport { violations }
}

/// A validated feeder with its tree orientation precomputed. Branch currents
/// are positive in the parent-to-child direction, children being buses
/// farther from the slack.
#[derive(Debug, Clone)]
pub struct Feeder {
    topo: FeederTopology,
    bus_index: BTreeMap<u32, usize>,
    /// Per branch: (upstream bus index, downstream bus index); orientation
    /// may differ from the declaration order in the topology.
    branch_ends: Vec<(usize, usize)>,
    /// Per bus index: Some((parent bus index, branch index)) except the slack.
    parent: Vec<Option<(usize, usize)>>,
    children: Vec<Vec<(usize, usize)>>,
    /// Bus indices in breadth-first order starting at the slack.
    order: Vec<usize>,
    /// Per bus index: branch indices on the slack-to-bus path.
    path: Vec<Vec<usize>>,
}

impl Feeder {
    pub fn new(topo: FeederTopology) -> Result<Feeder, GridError> {
        let report = validate_topology(&topo);
        if !report.ok() {
            return Err(GridError::InvalidTopology(report));
        }

        let bus_index: BTreeMap<u32, usize> =
            topo.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let n = topo.buses.len();
        let root = bus_index[&topo.slack_bus];

        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (bi, br) in topo.branches.iter().enumerate() {
            let f = bus_index[&br.from];
            let t = bus_index[&br.to];
            adj[f].push((t, bi));
            adj[t].push((f, bi));
        }

        let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        let mut branch_ends = vec![(0usize, 0usize); topo.branches.len()];
        let mut order = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        queue.push_back(root);
        seen[root] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(v, bi) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some((u, bi));
                    children[u].push((v, bi));
                    branch_ends[bi] = (u, v);
                    queue.push_back(v);
                }
            }
        }

        let mut path: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &u in &order {
            if let Some((p, bi)) = parent[u] {
                let mut pp = path[p].clone();
                pp.push(bi);
                path[u] = pp;
            }
        }

        Ok(Feeder {
            topo,
            bus_index,
            branch_ends,
            parent,
            children,
            order,
            path,
        })
    }

    pub fn topology(&self) -> &FeederTopology {
        &self.topo
    }

    pub fn n_buses(&self) -> usize {
        self.topo.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.topo.branches.len()
    }

    pub fn slack_index(&self) -> usize {
        self.bus_index[&self.topo.slack_bus]
    }

    pub fn bus_idx(&self, id: u32) -> Result<usize, GridError> {
        self.bus_index.get(&id).copied().ok_or(GridError::UnknownBus(id))
    }

    pub fn bus_id(&self, idx: usize) -> u32 {
        self.topo.buses[idx].id
    }

    pub fn branch(&self, idx: usize) -> &Branch {
        &self.topo.branches[idx]
    }

    /// Upstream/downstream bus indices for a branch in canonical orientation.
    pub fn branch_ends(&self, idx: usize) -> (usize, usize) {
        self.branch_ends[idx]
    }

    pub fn branch_between(&self, a: u32, b: u32) -> Result<usize, GridError> {
        self.topo
            .branches
            .iter()
            .position(|br| (br.from == a && br.to == b) || (br.from == b && br.to == a))
            .ok_or(GridError::UnknownBranch(a, b))
    }

    pub fn parent_of(&self, bus: usize) -> Option<(usize, usize)> {
        self.parent[bus]
    }

    pub fn children_of(&self, bus: usize) -> &[(usize, usize)] {
        &self.children[bus]
    }

    /// Breadth-first bus ordering, slack first.
    pub fn bfs_order(&self) -> &[usize] {
        &self.order
    }

    /// Branch indices on the path from the slack to `bus`.
    pub fn path_to(&self, bus: usize) -> &[usize] {
        &self.path[bus]
    }

    /// Neighbor bus indices (tree adjacency), ascending by bus id.
    pub fn neighbors(&self, bus: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .children[bus]
            .iter()
            .map(|&(v, _)| v)
            .chain(self.parent[bus].map(|(p, _)| p))
            .collect();
        out.sort_by_key(|&i| self.bus_id(i));
        out
    }

    /// Bus index each customer group is anchored at, keyed by group id.
    pub fn group_bus(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for (i, bus) in self.topo.buses.iter().enumerate() {
            for g in &bus.groups {
                out.insert(g.id.clone(), i);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z_diag(r: f64, x: f64) -> [[Phasor; 3]; 3] {
        let mut z = [[Phasor::new(0.0, 0.0); 3]; 3];
        for p in 0..3 {
            z[p][p] = Phasor::new(r, x);
        }
        z
    }

    fn bus(id: u32) -> Bus {
        Bus {
            id,
            phases: PhaseSet::abc(),
            groups: Vec::new(),
        }
    }

    fn branch(from: u32, to: u32) -> Branch {
        Branch {
            from,
            to,
            phases: PhaseSet::abc(),
            z: z_diag(0.01, 0.02),
        }
    }

    #[test]
    fn two_bus_feeder_is_ok() {
        let topo = FeederTopology {
            base_kv: 4.16,
            base_mva: 1.0,
            slack_bus: 1,
            buses: vec![bus(1), bus(2)],
            branches: vec![branch(1, 2)],
        };
        assert!(validate_topology(&topo).ok());
    }

    #[test]
    fn three_buses_three_branches_is_a_cycle() {
        let topo = FeederTopology {
            base_kv: 4.16,
            base_mva: 1.0,
            slack_bus: 1,
            buses: vec![bus(1), bus(2), bus(3)],
            branches: vec![branch(1, 2), branch(2, 3), branch(3, 1)],
        };
        let report = validate_topology(&topo);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::CycleDetected)));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::BranchCountMismatch { .. })));
    }

    #[test]
    fn missing_slack_and_asymmetric_impedance_reported() {
        let mut br = branch(1, 2);
        br.z[0][1] = Phasor::new(0.001, 0.0);
        let topo = FeederTopology {
            base_kv: 4.16,
            base_mva: 1.0,
            slack_bus: 9,
            buses: vec![bus(1), bus(2)],
            branches: vec![br],
        };
        let report = validate_topology(&topo);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::MissingSlack { id: 9 })));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::AsymmetricImpedance { branch: 0 })));
    }

    #[test]
    fn disconnected_bus_reported() {
        let topo = FeederTopology {
            base_kv: 4.16,
            base_mva: 1.0,
            slack_bus: 1,
            buses: vec![bus(1), bus(2), bus(3), bus(4)],
            branches: vec![branch(1, 2), branch(3, 4), branch(4, 3)],
        };
        let report = validate_topology(&topo);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DisconnectedBus { id: 3 })));
    }

    #[test]
    fn feeder_orientation_and_paths() {
        let topo = FeederTopology {
            base_kv: 4.16,
            base_mva: 1.0,
            slack_bus: 1,
            buses: vec![bus(1), bus(2), bus(3), bus(4)],
            // branch 1 declared child-to-parent on purpose
            branches: vec![branch(1, 2), branch(3, 2), branch(2, 4)],
        };
        let feeder = Feeder::new(topo).unwrap();
        let b3 = feeder.bus_idx(3).unwrap();
        assert_eq!(feeder.path_to(b3), &[0, 1]);
        let (up, down) = feeder.branch_ends(1);
        assert_eq!(feeder.bus_id(up), 2);
        assert_eq!(feeder.bus_id(down), 3);
        assert_eq!(
            feeder.neighbors(feeder.bus_idx(2).unwrap()),
            vec![
                feeder.bus_idx(1).unwrap(),
                feeder.bus_idx(3).unwrap(),
                feeder.bus_idx(4).unwrap()
            ]
        );
    }
}
