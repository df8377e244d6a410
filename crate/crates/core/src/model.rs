//! Node-breaker grid model and topology queries.
//!
//! Elements refer to each other by index into the owning [`Network`]
//! collections; string ids are kept for every element so that plans and
//! case files stay readable. Node indices follow ascending id order, which
//! makes every traversal in the crate deterministic.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default governor droop when a case does not give one.
pub const DEFAULT_DROOP_PU: f64 = 0.05;
/// Nominal system frequency.
pub const NOMINAL_FREQUENCY_HZ: f64 = 60.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown {kind} `{id}`")]
    UnknownElement { kind: &'static str, id: String },
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Busbar,
    Junction,
    Terminal,
}

/// Substation switching arrangement, chosen by the highest bus voltage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    DoubleBusDoubleBreaker,
    BreakerAndAHalf,
    SingleBus,
}

impl Scheme {
    /// Template selection by the highest rated voltage in the substation.
    pub fn for_voltage(highest_kv: f64) -> Scheme {
        if highest_kv >= 230.0 {
            Scheme::DoubleBusDoubleBreaker
        } else if highest_kv >= 115.0 {
            Scheme::BreakerAndAHalf
        } else {
            Scheme::SingleBus
        }
    }

    /// Number of breakers the template uses for `n` connected elements.
    pub fn breaker_count(self, n: usize) -> usize {
        match self {
            Scheme::DoubleBusDoubleBreaker => 2 * n,
            Scheme::BreakerAndAHalf => 3 * n.div_ceil(2),
            Scheme::SingleBus => n,
        }
    }

    pub fn busbar_count(self) -> usize {
        match self {
            Scheme::SingleBus => 1,
            _ => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Substation {
    pub id: String,
    pub name: String,
    pub scheme: Scheme,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub substation: usize,
    /// Bus of the originating bus-branch case.
    pub bus: String,
    pub nominal_kv: f64,
    pub kind: NodeKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breaker {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub closed: bool,
    pub available: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub r_pu: f64,
    pub x_pu: f64,
    /// Total line-charging susceptance, split evenly between the ends.
    pub b_pu: f64,
    pub rating_mva: f64,
    pub closed: bool,
    pub available: bool,
    pub is_transformer: bool,
    pub zero_impedance: bool,
}

impl Branch {
    pub fn impedance_magnitude(&self) -> f64 {
        self.r_pu.hypot(self.x_pu)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: String,
    pub node: usize,
    pub p_max_mw: f64,
    pub p_min_mw: f64,
    pub q_max_mvar: f64,
    pub q_min_mvar: f64,
    pub is_blackstart: bool,
    pub droop_r_pu: f64,
    pub s_rating_mva: f64,
    pub v_setpoint_pu: f64,
    pub startup_time_s: f64,
    pub crew_time_s: f64,
    pub online: bool,
    pub available: bool,
    pub is_renewable: bool,
    /// Dispatch setpoint; governor response moves the actual output away from it.
    pub p_set_mw: f64,
    /// Output from the most recent solution.
    pub p_out_mw: f64,
    pub q_mvar: f64,
}

impl Generator {
    /// Governor stiffness in MW per per-unit frequency deviation.
    pub fn stiffness(&self) -> f64 {
        self.s_rating_mva / self.droop_r_pu
    }

    /// True when the unit may take part in restoration.
    pub fn usable(&self) -> bool {
        self.available && !self.is_renewable
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub id: String,
    pub node: usize,
    pub p_mw: f64,
    pub q_mvar: f64,
    pub is_critical: bool,
    pub crew_time_s: f64,
    pub available: bool,
    pub served_mw: f64,
    pub served_mvar: f64,
}

impl Load {
    /// Sets the served active power and scales reactive power at constant power factor.
    pub fn set_served(&mut self, mw: f64) {
        let mw = mw.clamp(0.0, self.p_mw);
        self.served_mw = mw;
        self.served_mvar = if self.p_mw > 0.0 {
            self.q_mvar * mw / self.p_mw
        } else {
            0.0
        };
    }

    pub fn remaining_mw(&self) -> f64 {
        (self.p_mw - self.served_mw).max(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shunt {
    pub id: String,
    pub node: usize,
    /// Reactive injection at 1.0 p.u. voltage; positive for capacitors.
    pub mvar_nominal: f64,
    pub closed: bool,
    pub available: bool,
    pub discrete: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub id: String,
    pub name: String,
    pub substations: Vec<usize>,
    pub bsu_generators: Vec<usize>,
    pub critical_loads: Vec<usize>,
}

/// Switchable connection between two nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Link {
    Breaker(usize),
    Branch(usize),
}

/// Connected component over closed breakers and closed branches.
#[derive(Clone, Debug, PartialEq)]
pub struct Island {
    pub nodes: Vec<usize>,
    pub breakers: Vec<usize>,
    pub branches: Vec<usize>,
    pub generators: Vec<usize>,
    pub loads: Vec<usize>,
    pub shunts: Vec<usize>,
    /// At least one online generator.
    pub energized: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Index {
    substations: HashMap<String, usize>,
    nodes: HashMap<String, usize>,
    breakers: HashMap<String, usize>,
    branches: HashMap<String, usize>,
    generators: HashMap<String, usize>,
    loads: HashMap<String, usize>,
    shunts: HashMap<String, usize>,
    zones: HashMap<String, usize>,
}

/// Component parts used to assemble a [`Network`].
#[derive(Clone, Debug, Default)]
pub struct NetworkParts {
    pub base_mva: f64,
    pub f0_hz: f64,
    pub substations: Vec<Substation>,
    pub nodes: Vec<Node>,
    pub breakers: Vec<Breaker>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    pub shunts: Vec<Shunt>,
    pub zones: Vec<Zone>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub base_mva: f64,
    pub f0_hz: f64,
    pub substations: Vec<Substation>,
    pub nodes: Vec<Node>,
    pub breakers: Vec<Breaker>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    pub shunts: Vec<Shunt>,
    pub zones: Vec<Zone>,
    node_zone: Vec<Option<usize>>,
    index: Index,
}

fn index_of<T>(
    items: &[T],
    kind: &'static str,
    id: impl Fn(&T) -> &str,
) -> Result<HashMap<String, usize>, ModelError> {
    let mut map = HashMap::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        if map.insert(id(item).to_string(), i).is_some() {
            return Err(ModelError::DuplicateId {
                kind,
                id: id(item).to_string(),
            });
        }
    }
    Ok(map)
}

impl Network {
    /// Validates references and builds the id lookup tables.
    pub fn assemble(parts: NetworkParts) -> Result<Network, ModelError> {
        let NetworkParts {
            base_mva,
            f0_hz,
            substations,
            nodes,
            breakers,
            branches,
            generators,
            loads,
            shunts,
            zones,
        } = parts;
        if !(base_mva > 0.0) {
            return Err(ModelError::Invalid(format!(
                "base MVA must be positive, got {base_mva}"
            )));
        }
        let index = Index {
            substations: index_of(&substations, "substation", |s| &s.id)?,
            nodes: index_of(&nodes, "node", |n| &n.id)?,
            breakers: index_of(&breakers, "breaker", |b| &b.id)?,
            branches: index_of(&branches, "branch", |b| &b.id)?,
            generators: index_of(&generators, "generator", |g| &g.id)?,
            loads: index_of(&loads, "load", |l| &l.id)?,
            shunts: index_of(&shunts, "shunt", |s| &s.id)?,
            zones: index_of(&zones, "zone", |z| &z.id)?,
        };
        let n_nodes = nodes.len();
        let bad = |what: String| Err(ModelError::Invalid(what));
        for n in &nodes {
            if n.substation >= substations.len() {
                return bad(format!("node {} references a missing substation", n.id));
            }
            if !(n.nominal_kv > 0.0) {
                return bad(format!("node {} has non-positive nominal kV", n.id));
            }
        }
        for b in &breakers {
            if b.from >= n_nodes || b.to >= n_nodes || b.from == b.to {
                return bad(format!("breaker {} has invalid terminals", b.id));
            }
            if nodes[b.from].substation != nodes[b.to].substation {
                return bad(format!("breaker {} spans two substations", b.id));
            }
        }
        for br in &branches {
            if br.from >= n_nodes || br.to >= n_nodes || br.from == br.to {
                return bad(format!("branch {} has invalid terminals", br.id));
            }
            let zero = br.r_pu == 0.0 && br.x_pu == 0.0;
            if zero != br.zero_impedance {
                return bad(format!(
                    "branch {} zero-impedance flag disagrees with r/x",
                    br.id
                ));
            }
            if !zero && !(br.rating_mva > 0.0) {
                return bad(format!("branch {} needs a positive rating", br.id));
            }
        }
        for g in &generators {
            if g.node >= n_nodes {
                return bad(format!("generator {} references a missing node", g.id));
            }
            if g.p_min_mw > g.p_max_mw || !(g.droop_r_pu > 0.0) || !(g.s_rating_mva > 0.0) {
                return bad(format!("generator {} has inconsistent limits", g.id));
            }
        }
        for l in &loads {
            if l.node >= n_nodes {
                return bad(format!("load {} references a missing node", l.id));
            }
            if l.p_mw < 0.0 || l.served_mw < 0.0 || l.served_mw > l.p_mw + 1e-9 {
                return bad(format!("load {} served power outside [0, demand]", l.id));
            }
        }
        for s in &shunts {
            if s.node >= n_nodes {
                return bad(format!("shunt {} references a missing node", s.id));
            }
        }
        let mut sub_zone: Vec<Option<usize>> = vec![None; substations.len()];
        for (zi, z) in zones.iter().enumerate() {
            for &s in &z.substations {
                if s >= substations.len() {
                    return bad(format!("zone {} references a missing substation", z.id));
                }
                if sub_zone[s].replace(zi).is_some() {
                    return bad(format!(
                        "substation {} belongs to more than one zone",
                        substations[s].id
                    ));
                }
            }
        }
        let node_zone: Vec<Option<usize>> = nodes.iter().map(|n| sub_zone[n.substation]).collect();
        for (zi, z) in zones.iter().enumerate() {
            for &g in &z.bsu_generators {
                if g >= generators.len() || node_zone[generators[g].node] != Some(zi) {
                    return bad(format!(
                        "zone {} lists a blackstart unit outside the zone",
                        z.id
                    ));
                }
            }
            for &l in &z.critical_loads {
                if l >= loads.len() || node_zone[loads[l].node] != Some(zi) {
                    return bad(format!(
                        "zone {} lists a critical load outside the zone",
                        z.id
                    ));
                }
            }
        }
        Ok(Network {
            base_mva,
            f0_hz,
            substations,
            nodes,
            breakers,
            branches,
            generators,
            loads,
            shunts,
            zones,
            node_zone,
            index,
        })
    }

    pub fn into_parts(self) -> NetworkParts {
        NetworkParts {
            base_mva: self.base_mva,
            f0_hz: self.f0_hz,
            substations: self.substations,
            nodes: self.nodes,
            breakers: self.breakers,
            branches: self.branches,
            generators: self.generators,
            loads: self.loads,
            shunts: self.shunts,
            zones: self.zones,
        }
    }

    pub fn node_index(&self, id: &str) -> Result<usize, ModelError> {
        self.index
            .nodes
            .get(id)
            .copied()
            .ok_or_else(|| ModelError::UnknownNode(id.to_string()))
    }

    pub fn substation_index(&self, id: &str) -> Option<usize> {
        self.index.substations.get(id).copied()
    }

    pub fn breaker_index(&self, id: &str) -> Result<usize, ModelError> {
        lookup(&self.index.breakers, "breaker", id)
    }

    pub fn branch_index(&self, id: &str) -> Result<usize, ModelError> {
        lookup(&self.index.branches, "branch", id)
    }

    pub fn generator_index(&self, id: &str) -> Result<usize, ModelError> {
        lookup(&self.index.generators, "generator", id)
    }

    pub fn load_index(&self, id: &str) -> Result<usize, ModelError> {
        lookup(&self.index.loads, "load", id)
    }

    pub fn shunt_index(&self, id: &str) -> Result<usize, ModelError> {
        lookup(&self.index.shunts, "shunt", id)
    }

    pub fn zone_index(&self, id: &str) -> Result<usize, ModelError> {
        lookup(&self.index.zones, "zone", id)
    }

    /// Zone owning the node's substation, if any.
    pub fn zone_of_node(&self, node: usize) -> Option<usize> {
        self.node_zone[node]
    }

    pub fn link_ends(&self, link: Link) -> (usize, usize) {
        match link {
            Link::Breaker(i) => (self.breakers[i].from, self.breakers[i].to),
            Link::Branch(i) => (self.branches[i].from, self.branches[i].to),
        }
    }

    pub fn link_closed(&self, link: Link) -> bool {
        match link {
            Link::Breaker(i) => self.breakers[i].closed,
            Link::Branch(i) => self.branches[i].closed,
        }
    }

    pub fn link_available(&self, link: Link) -> bool {
        match link {
            Link::Breaker(i) => self.breakers[i].available,
            Link::Branch(i) => self.branches[i].available,
        }
    }

    pub fn link_id(&self, link: Link) -> &str {
        match link {
            Link::Breaker(i) => &self.breakers[i].id,
            Link::Branch(i) => &self.branches[i].id,
        }
    }

    /// Every breaker and branch, breakers first.
    pub fn links(&self) -> impl Iterator<Item = Link> + '_ {
        (0..self.breakers.len())
            .map(Link::Breaker)
            .chain((0..self.branches.len()).map(Link::Branch))
    }

    pub fn closed_links(&self) -> impl Iterator<Item = Link> + '_ {
        self.links().filter(|&l| self.link_closed(l))
    }

    pub fn total_load_mw(&self) -> f64 {
        self.loads.iter().map(|l| l.p_mw).sum()
    }

    pub fn served_load_mw(&self) -> f64 {
        self.loads.iter().map(|l| l.served_mw).sum()
    }

    /// Component label per node over closed breakers and branches.
    pub fn component_labels(&self) -> Vec<usize> {
        let mut uf = UnionFind::new(self.nodes.len());
        for link in self.closed_links() {
            let (a, b) = self.link_ends(link);
            uf.union(a, b);
        }
        canonical_labels(&mut uf)
    }
}

fn lookup(map: &HashMap<String, usize>, kind: &'static str, id: &str) -> Result<usize, ModelError> {
    map.get(id)
        .copied()
        .ok_or_else(|| ModelError::UnknownElement {
            kind,
            id: id.to_string(),
        })
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns true when two distinct sets were merged.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }

    pub fn connected(&mut self, a: usize, b: usize) -> bool {
        self.find(a) == self.find(b)
    }
}

/// Labels components 0.. in order of their smallest member.
fn canonical_labels(uf: &mut UnionFind) -> Vec<usize> {
    let n = uf.len();
    let mut label_of_root = vec![usize::MAX; n];
    let mut labels = vec![0; n];
    let mut next = 0;
    for v in 0..n {
        let r = uf.find(v);
        if label_of_root[r] == usize::MAX {
            label_of_root[r] = next;
            next += 1;
        }
        labels[v] = label_of_root[r];
    }
    labels
}

/// All connected components, ordered by their smallest node index.
pub fn islands(network: &Network) -> Vec<Island> {
    islands_from_labels(network, &network.component_labels())
}

fn islands_from_labels(network: &Network, labels: &[usize]) -> Vec<Island> {
    let count = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut out: Vec<Island> = (0..count)
        .map(|_| Island {
            nodes: Vec::new(),
            breakers: Vec::new(),
            branches: Vec::new(),
            generators: Vec::new(),
            loads: Vec::new(),
            shunts: Vec::new(),
            energized: false,
        })
        .collect();
    for (v, &c) in labels.iter().enumerate() {
        out[c].nodes.push(v);
    }
    for (i, b) in network.breakers.iter().enumerate() {
        if b.closed {
            out[labels[b.from]].breakers.push(i);
        }
    }
    for (i, b) in network.branches.iter().enumerate() {
        if b.closed {
            out[labels[b.from]].branches.push(i);
        }
    }
    for (i, g) in network.generators.iter().enumerate() {
        let isl = &mut out[labels[g.node]];
        isl.generators.push(i);
        if g.online {
            isl.energized = true;
        }
    }
    for (i, l) in network.loads.iter().enumerate() {
        out[labels[l.node]].loads.push(i);
    }
    for (i, s) in network.shunts.iter().enumerate() {
        out[labels[s.node]].shunts.push(i);
    }
    out
}

/// Components that hold at least one online generator.
pub fn energized_islands(network: &Network) -> Vec<Island> {
    islands(network)
        .into_iter()
        .filter(|i| i.energized)
        .collect()
}

/// Index into [`islands`] of the component containing `node_id`.
pub fn island_of(network: &Network, node_id: &str) -> Result<usize, ModelError> {
    let node = network.node_index(node_id)?;
    Ok(network.component_labels()[node])
}

/// Branches whose two ends lie in different zones.
pub fn tie_branches(network: &Network) -> Vec<usize> {
    network
        .branches
        .iter()
        .enumerate()
        .filter(|(_, b)| {
            let (za, zb) = (network.zone_of_node(b.from), network.zone_of_node(b.to));
            za.is_some() && zb.is_some() && za != zb
        })
        .map(|(i, _)| i)
        .collect()
}

/// Incremental island bookkeeping: closings union, openings trigger a rebuild.
#[derive(Clone, Debug)]
pub struct IslandTracker {
    uf: UnionFind,
}

impl IslandTracker {
    pub fn new(network: &Network) -> Self {
        let mut t = IslandTracker {
            uf: UnionFind::new(network.nodes.len()),
        };
        t.rebuild(network);
        t
    }

    pub fn rebuild(&mut self, network: &Network) {
        self.uf = UnionFind::new(network.nodes.len());
        for link in network.closed_links() {
            let (a, b) = network.link_ends(link);
            self.uf.union(a, b);
        }
    }

    /// Records a closing that has already been applied to `network`.
    pub fn closed(&mut self, network: &Network, link: Link) {
        let (a, b) = network.link_ends(link);
        self.uf.union(a, b);
        debug_assert!(self.consistent_with(network));
    }

    /// Records an opening that has already been applied to `network`.
    pub fn opened(&mut self, network: &Network) {
        self.rebuild(network);
    }

    pub fn same_island(&mut self, a: usize, b: usize) -> bool {
        self.uf.connected(a, b)
    }

    pub fn root(&mut self, node: usize) -> usize {
        self.uf.find(node)
    }

    fn consistent_with(&mut self, network: &Network) -> bool {
        let fresh = network.component_labels();
        canonical_labels(&mut self.uf) == fresh
    }

    /// Nodes sharing a component with an online generator.
    pub fn energized_nodes(&mut self, network: &Network) -> Vec<bool> {
        let n = network.nodes.len();
        let mut live_root = vec![false; n];
        for g in network.generators.iter().filter(|g| g.online) {
            let r = self.uf.find(g.node);
            live_root[r] = true;
        }
        (0..n).map(|v| live_root[self.uf.find(v)]).collect()
    }
}
