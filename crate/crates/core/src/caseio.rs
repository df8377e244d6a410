//! Case files, node-breaker expansion, blackout state and plan/metrics output.
//!
//! The case schema is JSON. A bus-branch case lists buses and the elements
//! attached to them; [`expand_node_breaker`] turns it into a switch-level
//! [`Network`] using one substation template per substation, chosen by the
//! highest bus voltage:
//!
//! | highest kV | template                  | breakers for n elements |
//! |------------|---------------------------|-------------------------|
//! | >= 230     | double bus, double breaker | 2n                      |
//! | >= 115     | breaker-and-a-half        | 3 * ceil(n / 2)         |
//! | below      | single bus                | n                       |
//!
//! Every element gets a junction node on the breaker side and a terminal node
//! on the element side, joined by a zero-impedance link. A case that already
//! carries a `node_breaker` section (as written by [`to_node_breaker_case`])
//! is loaded as-is.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Branch, Breaker, Generator, Load, ModelError, Network, NetworkParts, Node, NodeKind, Scheme,
    Shunt, Substation, Zone, DEFAULT_DROOP_PU, NOMINAL_FREQUENCY_HZ,
};
use crate::plan::{metrics_history, AvailabilityOverride, ElementKind, RestorationPlan};

pub const CASE_FORMAT_VERSION: u32 = 1;

/// Column order of the metrics CSV (format version 1).
pub const METRICS_HEADER: [&str; 14] = [
    "time_s",
    "step",
    "stage",
    "zone",
    "island",
    "gen_mw",
    "gen_mvar",
    "load_mw",
    "load_mvar",
    "v_min_pu",
    "v_max_pu",
    "frequency_hz",
    "max_loading_pct",
    "max_loading_branch",
];

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("{section} `{id}` references missing {target} `{reference}`")]
    Dangling {
        section: &'static str,
        id: String,
        target: &'static str,
        reference: String,
    },
    #[error("duplicate {section} id `{id}`")]
    Duplicate { section: &'static str, id: String },
    #[error("base MVA must be positive, got {0}")]
    BaseMva(f64),
    #[error("substation `{0}` has no connected elements")]
    EmptySubstation(String),
    #[error("override references unknown {kind:?} `{id}`")]
    UnknownOverride { kind: ElementKind, id: String },
    #[error("invalid case: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

fn yes() -> bool {
    true
}

fn default_f0() -> f64 {
    NOMINAL_FREQUENCY_HZ
}

fn default_vset() -> f64 {
    1.0
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub format_version: u32,
    pub base_mva: f64,
    #[serde(default = "default_f0")]
    pub frequency_hz: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub substations: Vec<SubstationRecord>,
    pub buses: Vec<BusRecord>,
    #[serde(default)]
    pub branches: Vec<BranchRecord>,
    #[serde(default)]
    pub generators: Vec<GeneratorRecord>,
    #[serde(default)]
    pub loads: Vec<LoadRecord>,
    #[serde(default)]
    pub shunts: Vec<ShuntRecord>,
    #[serde(default)]
    pub zones: Vec<ZoneRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_breaker: Option<NodeBreakerSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubstationRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusRecord {
    pub id: String,
    pub nominal_kv: f64,
    /// Defaults to a substation of its own named after the bus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substation: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchRecord {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub r_pu: f64,
    pub x_pu: f64,
    #[serde(default)]
    pub b_pu: f64,
    pub rating_mva: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub is_transformer: bool,
    #[serde(default = "yes")]
    pub closed: bool,
    #[serde(default = "yes")]
    pub available: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorRecord {
    pub id: String,
    pub bus: String,
    pub p_max_mw: f64,
    #[serde(default)]
    pub p_min_mw: f64,
    pub q_max_mvar: f64,
    pub q_min_mvar: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub is_blackstart: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub droop_r_pu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_rating_mva: Option<f64>,
    #[serde(default = "default_vset")]
    pub v_setpoint_pu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub startup_time_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crew_time_s: Option<f64>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub is_renewable: bool,
    #[serde(default = "yes")]
    pub available: bool,
    #[serde(default = "yes")]
    pub online: bool,
    /// Dispatch setpoint.
    #[serde(default)]
    pub p_mw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadRecord {
    pub id: String,
    pub bus: String,
    pub p_mw: f64,
    pub q_mvar: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub is_critical: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crew_time_s: Option<f64>,
    #[serde(default = "yes")]
    pub available: bool,
    /// Defaults to the full demand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub served_mw: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShuntRecord {
    pub id: String,
    pub bus: String,
    pub mvar_nominal: f64,
    #[serde(default = "yes")]
    pub discrete: bool,
    #[serde(default)]
    pub closed: bool,
    #[serde(default = "yes")]
    pub available: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub substations: Vec<String>,
    #[serde(default)]
    pub bsu_generators: Vec<String>,
    #[serde(default)]
    pub critical_loads: Vec<String>,
}

/// Switch-level topology written by `convert`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeBreakerSection {
    pub nodes: Vec<NodeRecord>,
    pub breakers: Vec<SwitchRecord>,
    /// Zero-impedance connections inside substations.
    pub links: Vec<SwitchRecord>,
    pub terminals: Vec<TerminalRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: String,
    pub bus: String,
    pub kind: NodeKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchRecord {
    pub id: String,
    pub from_node: String,
    pub to_node: String,
    pub closed: bool,
    #[serde(default = "yes")]
    pub available: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchEnd {
    From,
    To,
}

/// Node an element (or one end of a branch) attaches to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalRecord {
    pub kind: ElementKind,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<BranchEnd>,
    pub node: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverridesFile {
    pub overrides: Vec<AvailabilityOverride>,
}

fn syntax(e: serde_json::Error) -> CaseError {
    CaseError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses and cross-checks a case document.
pub fn parse_case(text: &str) -> Result<CaseFile, CaseError> {
    let case: CaseFile = serde_json::from_str(text).map_err(syntax)?;
    validate_case(&case)?;
    Ok(case)
}

pub fn serialize_case(case: &CaseFile) -> String {
    let mut s = serde_json::to_string_pretty(case).expect("case serializes");
    s.push('\n');
    s
}

pub fn parse_overrides(text: &str) -> Result<Vec<AvailabilityOverride>, CaseError> {
    let f: OverridesFile = serde_json::from_str(text).map_err(syntax)?;
    Ok(f.overrides)
}

fn unique<'a>(section: &'static str, ids: impl Iterator<Item = &'a str>) -> Result<(), CaseError> {
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(CaseError::Duplicate {
                section,
                id: id.to_string(),
            });
        }
    }
    Ok(())
}

fn bus_substation(b: &BusRecord) -> &str {
    b.substation.as_deref().unwrap_or(&b.id)
}

pub fn validate_case(case: &CaseFile) -> Result<(), CaseError> {
    if case.format_version != CASE_FORMAT_VERSION {
        return Err(CaseError::Version(case.format_version));
    }
    if !(case.base_mva > 0.0) {
        return Err(CaseError::BaseMva(case.base_mva));
    }
    unique("substation", case.substations.iter().map(|s| s.id.as_str()))?;
    unique("bus", case.buses.iter().map(|b| b.id.as_str()))?;
    unique("branch", case.branches.iter().map(|b| b.id.as_str()))?;
    unique("generator", case.generators.iter().map(|g| g.id.as_str()))?;
    unique("load", case.loads.iter().map(|l| l.id.as_str()))?;
    unique("shunt", case.shunts.iter().map(|s| s.id.as_str()))?;
    unique("zone", case.zones.iter().map(|z| z.id.as_str()))?;

    let buses: HashMap<&str, &BusRecord> = case.buses.iter().map(|b| (b.id.as_str(), b)).collect();
    let dangling = |section, id: &str, target, reference: &str| CaseError::Dangling {
        section,
        id: id.to_string(),
        target,
        reference: reference.to_string(),
    };
    for b in &case.buses {
        if !(b.nominal_kv > 0.0) {
            return Err(CaseError::Invalid(format!(
                "bus `{}` needs a positive nominal kV",
                b.id
            )));
        }
    }
    if !case.substations.is_empty() {
        for b in &case.buses {
            let s = bus_substation(b);
            if !case.substations.iter().any(|r| r.id == s) {
                return Err(dangling("bus", &b.id, "substation", s));
            }
        }
    }
    for br in &case.branches {
        for end in [&br.from_bus, &br.to_bus] {
            if !buses.contains_key(end.as_str()) {
                return Err(dangling("branch", &br.id, "bus", end));
            }
        }
        if br.from_bus == br.to_bus {
            return Err(CaseError::Invalid(format!(
                "branch `{}` connects a bus to itself",
                br.id
            )));
        }
    }
    for g in &case.generators {
        if !buses.contains_key(g.bus.as_str()) {
            return Err(dangling("generator", &g.id, "bus", &g.bus));
        }
    }
    for l in &case.loads {
        if !buses.contains_key(l.bus.as_str()) {
            return Err(dangling("load", &l.id, "bus", &l.bus));
        }
    }
    for s in &case.shunts {
        if !buses.contains_key(s.bus.as_str()) {
            return Err(dangling("shunt", &s.id, "bus", &s.bus));
        }
    }
    let subs = substation_ids(case);
    for z in &case.zones {
        for s in &z.substations {
            if !subs.contains(s) {
                return Err(dangling("zone", &z.id, "substation", s));
            }
        }
        for g in &z.bsu_generators {
            if !case.generators.iter().any(|r| &r.id == g) {
                return Err(dangling("zone", &z.id, "generator", g));
            }
        }
        for l in &z.critical_loads {
            if !case.loads.iter().any(|r| &r.id == l) {
                return Err(dangling("zone", &z.id, "load", l));
            }
        }
    }
    if let Some(nb) = &case.node_breaker {
        unique("node", nb.nodes.iter().map(|n| n.id.as_str()))?;
        unique(
            "breaker",
            nb.breakers.iter().chain(&nb.links).map(|b| b.id.as_str()),
        )?;
        let nodes: HashMap<&str, &NodeRecord> =
            nb.nodes.iter().map(|n| (n.id.as_str(), n)).collect();
        for n in &nb.nodes {
            if !buses.contains_key(n.bus.as_str()) {
                return Err(dangling("node", &n.id, "bus", &n.bus));
            }
        }
        for sw in nb.breakers.iter().chain(&nb.links) {
            for end in [&sw.from_node, &sw.to_node] {
                if !nodes.contains_key(end.as_str()) {
                    return Err(dangling("switch", &sw.id, "node", end));
                }
            }
        }
        for t in &nb.terminals {
            if !nodes.contains_key(t.node.as_str()) {
                return Err(dangling("terminal", &t.id, "node", &t.node));
            }
        }
    }
    Ok(())
}

/// Substation ids in first-appearance order.
fn substation_ids(case: &CaseFile) -> Vec<String> {
    if !case.substations.is_empty() {
        return case.substations.iter().map(|s| s.id.clone()).collect();
    }
    let mut out: Vec<String> = Vec::new();
    for b in &case.buses {
        let s = bus_substation(b);
        if !out.iter().any(|x| x == s) {
            out.push(s.to_string());
        }
    }
    out
}

/// Element attached at a bus, in template order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Attachment {
    Branch(usize, BranchEnd),
    Generator(usize),
    Load(usize),
    Shunt(usize),
}

impl Attachment {
    fn key(&self, case: &CaseFile) -> String {
        match self {
            Attachment::Branch(i, BranchEnd::From) => format!("br-{}-f", case.branches[*i].id),
            Attachment::Branch(i, BranchEnd::To) => format!("br-{}-t", case.branches[*i].id),
            Attachment::Generator(i) => format!("gen-{}", case.generators[*i].id),
            Attachment::Load(i) => format!("ld-{}", case.loads[*i].id),
            Attachment::Shunt(i) => format!("sh-{}", case.shunts[*i].id),
        }
    }

    fn terminal(&self, case: &CaseFile, node: String) -> TerminalRecord {
        let (kind, id, end) = match self {
            Attachment::Branch(i, e) => (ElementKind::Branch, &case.branches[*i].id, Some(*e)),
            Attachment::Generator(i) => (ElementKind::Generator, &case.generators[*i].id, None),
            Attachment::Load(i) => (ElementKind::Load, &case.loads[*i].id, None),
            Attachment::Shunt(i) => (ElementKind::Shunt, &case.shunts[*i].id, None),
        };
        TerminalRecord {
            kind,
            id: id.clone(),
            end,
            node,
        }
    }
}

fn attachments_by_bus(case: &CaseFile) -> BTreeMap<&str, Vec<Attachment>> {
    let mut map: BTreeMap<&str, Vec<Attachment>> = case
        .buses
        .iter()
        .map(|b| (b.id.as_str(), Vec::new()))
        .collect();
    for (i, br) in case.branches.iter().enumerate() {
        map.get_mut(br.from_bus.as_str())
            .unwrap()
            .push(Attachment::Branch(i, BranchEnd::From));
        map.get_mut(br.to_bus.as_str())
            .unwrap()
            .push(Attachment::Branch(i, BranchEnd::To));
    }
    for (i, g) in case.generators.iter().enumerate() {
        map.get_mut(g.bus.as_str())
            .unwrap()
            .push(Attachment::Generator(i));
    }
    for (i, l) in case.loads.iter().enumerate() {
        map.get_mut(l.bus.as_str())
            .unwrap()
            .push(Attachment::Load(i));
    }
    for (i, s) in case.shunts.iter().enumerate() {
        map.get_mut(s.bus.as_str())
            .unwrap()
            .push(Attachment::Shunt(i));
    }
    map
}

/// Template scheme of every substation, by highest bus voltage unless fixed in the case.
pub fn substation_schemes(case: &CaseFile) -> BTreeMap<String, Scheme> {
    let mut highest: BTreeMap<String, f64> = BTreeMap::new();
    for b in &case.buses {
        let e = highest.entry(bus_substation(b).to_string()).or_insert(0.0);
        *e = e.max(b.nominal_kv);
    }
    highest
        .into_iter()
        .map(|(s, kv)| {
            let fixed = case
                .substations
                .iter()
                .find(|r| r.id == s)
                .and_then(|r| r.scheme);
            (s, fixed.unwrap_or_else(|| Scheme::for_voltage(kv)))
        })
        .collect()
}

/// Builds the switch-level topology section from templates.
pub fn build_node_breaker_section(case: &CaseFile) -> Result<NodeBreakerSection, CaseError> {
    let schemes = substation_schemes(case);
    let by_bus = attachments_by_bus(case);
    let mut per_sub: BTreeMap<&str, usize> = BTreeMap::new();
    for b in &case.buses {
        *per_sub.entry(bus_substation(b)).or_default() += by_bus[b.id.as_str()].len();
    }
    if let Some((s, _)) = per_sub.iter().find(|(_, &n)| n == 0) {
        return Err(CaseError::EmptySubstation(s.to_string()));
    }

    let mut nodes = Vec::new();
    let mut breakers = Vec::new();
    let mut links = Vec::new();
    let mut terminals = Vec::new();
    for bus in &case.buses {
        let scheme = schemes[bus_substation(bus)];
        let atts = &by_bus[bus.id.as_str()];
        let b = &bus.id;
        let node = |id: String, kind| NodeRecord {
            id,
            bus: b.clone(),
            kind,
        };
        let busbars: Vec<String> = (1..=scheme.busbar_count())
            .map(|k| format!("{b}.BB{k}"))
            .collect();
        for bb in &busbars {
            nodes.push(node(bb.clone(), NodeKind::Busbar));
        }
        let mut cb = 0usize;
        let mut breaker = |from: &str, to: &str| {
            cb += 1;
            SwitchRecord {
                id: format!("{b}.CB{cb:02}"),
                from_node: from.to_string(),
                to_node: to.to_string(),
                closed: true,
                available: true,
            }
        };
        let junctions: Vec<String> = atts
            .iter()
            .map(|a| format!("{b}.J.{}", a.key(case)))
            .collect();
        for (a, j) in atts.iter().zip(&junctions) {
            let key = a.key(case);
            let t = format!("{b}.T.{key}");
            nodes.push(node(j.clone(), NodeKind::Junction));
            nodes.push(node(t.clone(), NodeKind::Terminal));
            links.push(SwitchRecord {
                id: format!("{b}.ZL.{key}"),
                from_node: j.clone(),
                to_node: t.clone(),
                closed: true,
                available: true,
            });
            terminals.push(a.terminal(case, t));
        }
        match scheme {
            Scheme::SingleBus => {
                for j in &junctions {
                    breakers.push(breaker(&busbars[0], j));
                }
            }
            Scheme::DoubleBusDoubleBreaker => {
                for j in &junctions {
                    breakers.push(breaker(&busbars[0], j));
                    breakers.push(breaker(&busbars[1], j));
                }
            }
            Scheme::BreakerAndAHalf => {
                for (bay, pair) in junctions.chunks(2).enumerate() {
                    let second = match pair.get(1) {
                        Some(j) => j.clone(),
                        None => {
                            let spare = format!("{b}.J.bay{}", bay + 1);
                            nodes.push(node(spare.clone(), NodeKind::Junction));
                            spare
                        }
                    };
                    breakers.push(breaker(&busbars[0], &pair[0]));
                    breakers.push(breaker(&pair[0], &second));
                    breakers.push(breaker(&second, &busbars[1]));
                }
            }
        }
    }
    Ok(NodeBreakerSection {
        nodes,
        breakers,
        links,
        terminals,
    })
}

/// Copy of the case with an explicit node-breaker section.
pub fn to_node_breaker_case(case: &CaseFile) -> Result<CaseFile, CaseError> {
    let mut out = case.clone();
    if out.node_breaker.is_none() {
        out.node_breaker = Some(build_node_breaker_section(case)?);
    }
    if out.substations.is_empty() {
        let schemes = substation_schemes(case);
        out.substations = substation_ids(case)
            .into_iter()
            .map(|id| SubstationRecord {
                scheme: Some(schemes[&id]),
                name: None,
                id,
            })
            .collect();
    }
    Ok(out)
}

/// Expands a case to a switch-level network in its normal operating state.
pub fn expand_node_breaker(case: &CaseFile) -> Result<Network, CaseError> {
    let section = match &case.node_breaker {
        Some(nb) => nb.clone(),
        None => build_node_breaker_section(case)?,
    };
    let schemes = substation_schemes(case);
    let sub_ids = substation_ids(case);
    let substations: Vec<Substation> = sub_ids
        .iter()
        .map(|id| Substation {
            id: id.clone(),
            name: case
                .substations
                .iter()
                .find(|r| &r.id == id)
                .and_then(|r| r.name.clone())
                .unwrap_or_else(|| id.clone()),
            scheme: schemes[id],
        })
        .collect();
    let sub_index: HashMap<&str, usize> = sub_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let bus_rec: HashMap<&str, &BusRecord> =
        case.buses.iter().map(|b| (b.id.as_str(), b)).collect();

    // nodes in ascending id order
    let mut node_recs: Vec<&NodeRecord> = section.nodes.iter().collect();
    node_recs.sort_by(|a, b| a.id.cmp(&b.id));
    let nodes: Vec<Node> = node_recs
        .iter()
        .map(|n| {
            let bus = bus_rec[n.bus.as_str()];
            Node {
                id: n.id.clone(),
                substation: sub_index[bus_substation(bus)],
                bus: n.bus.clone(),
                nominal_kv: bus.nominal_kv,
                kind: n.kind,
            }
        })
        .collect();
    let node_idx: HashMap<&str, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();

    let breakers = section
        .breakers
        .iter()
        .map(|s| Breaker {
            id: s.id.clone(),
            from: node_idx[s.from_node.as_str()],
            to: node_idx[s.to_node.as_str()],
            closed: s.closed,
            available: s.available,
        })
        .collect();

    let mut term: HashMap<(ElementKind, &str, Option<BranchEnd>), usize> = HashMap::new();
    for t in &section.terminals {
        term.insert((t.kind, t.id.as_str(), t.end), node_idx[t.node.as_str()]);
    }
    let attach = |kind: ElementKind, id: &str, end: Option<BranchEnd>| {
        term.get(&(kind, id, end)).copied().ok_or_else(|| {
            CaseError::Invalid(format!(
                "{kind:?} `{id}` has no terminal node in the node-breaker section"
            ))
        })
    };

    let mut branches = Vec::with_capacity(case.branches.len() + section.links.len());
    for br in &case.branches {
        branches.push(Branch {
            id: br.id.clone(),
            from: attach(ElementKind::Branch, &br.id, Some(BranchEnd::From))?,
            to: attach(ElementKind::Branch, &br.id, Some(BranchEnd::To))?,
            r_pu: br.r_pu,
            x_pu: br.x_pu,
            b_pu: br.b_pu,
            rating_mva: br.rating_mva,
            closed: br.closed,
            available: br.available,
            is_transformer: br.is_transformer,
            zero_impedance: br.r_pu == 0.0 && br.x_pu == 0.0,
        });
    }
    for l in &section.links {
        branches.push(Branch {
            id: l.id.clone(),
            from: node_idx[l.from_node.as_str()],
            to: node_idx[l.to_node.as_str()],
            r_pu: 0.0,
            x_pu: 0.0,
            b_pu: 0.0,
            rating_mva: 0.0,
            closed: l.closed,
            available: l.available,
            is_transformer: false,
            zero_impedance: true,
        });
    }

    let bsu: std::collections::HashSet<&str> = case
        .zones
        .iter()
        .flat_map(|z| z.bsu_generators.iter().map(String::as_str))
        .collect();
    let critical: std::collections::HashSet<&str> = case
        .zones
        .iter()
        .flat_map(|z| z.critical_loads.iter().map(String::as_str))
        .collect();

    let mut generators = Vec::with_capacity(case.generators.len());
    for g in &case.generators {
        let startup = g.startup_time_s.unwrap_or_else(|| {
            log::warn!("generator {}: no startup time given, using 0 s", g.id);
            0.0
        });
        let crew = g.crew_time_s.unwrap_or_else(|| {
            log::warn!("generator {}: no crew time given, using 0 s", g.id);
            0.0
        });
        let online = g.online && g.available;
        generators.push(Generator {
            id: g.id.clone(),
            node: attach(ElementKind::Generator, &g.id, None)?,
            p_max_mw: g.p_max_mw,
            p_min_mw: g.p_min_mw,
            q_max_mvar: g.q_max_mvar,
            q_min_mvar: g.q_min_mvar,
            is_blackstart: g.is_blackstart || bsu.contains(g.id.as_str()),
            droop_r_pu: g.droop_r_pu.unwrap_or(DEFAULT_DROOP_PU),
            s_rating_mva: g.s_rating_mva.unwrap_or(g.p_max_mw),
            v_setpoint_pu: g.v_setpoint_pu,
            startup_time_s: startup,
            crew_time_s: crew,
            online,
            available: g.available,
            is_renewable: g.is_renewable,
            p_set_mw: if online { g.p_mw } else { 0.0 },
            p_out_mw: if online { g.p_mw } else { 0.0 },
            q_mvar: 0.0,
        });
    }
    let mut loads = Vec::with_capacity(case.loads.len());
    for l in &case.loads {
        let crew = l.crew_time_s.unwrap_or_else(|| {
            log::warn!("load {}: no crew time given, using 0 s", l.id);
            0.0
        });
        let mut load = Load {
            id: l.id.clone(),
            node: attach(ElementKind::Load, &l.id, None)?,
            p_mw: l.p_mw,
            q_mvar: l.q_mvar,
            is_critical: l.is_critical || critical.contains(l.id.as_str()),
            crew_time_s: crew,
            available: l.available,
            served_mw: 0.0,
            served_mvar: 0.0,
        };
        if l.available {
            load.set_served(l.served_mw.unwrap_or(l.p_mw));
        }
        loads.push(load);
    }
    let mut shunts = Vec::with_capacity(case.shunts.len());
    for s in &case.shunts {
        shunts.push(Shunt {
            id: s.id.clone(),
            node: attach(ElementKind::Shunt, &s.id, None)?,
            mvar_nominal: s.mvar_nominal,
            closed: s.closed && s.available,
            available: s.available,
            discrete: s.discrete,
        });
    }
    let gen_idx: HashMap<&str, usize> = case
        .generators
        .iter()
        .enumerate()
        .map(|(i, g)| (g.id.as_str(), i))
        .collect();
    let load_idx: HashMap<&str, usize> = case
        .loads
        .iter()
        .enumerate()
        .map(|(i, l)| (l.id.as_str(), i))
        .collect();
    let mut zones: Vec<Zone> = case
        .zones
        .iter()
        .map(|z| Zone {
            id: z.id.clone(),
            name: z.name.clone().unwrap_or_else(|| z.id.clone()),
            substations: z
                .substations
                .iter()
                .map(|s| sub_index[s.as_str()])
                .collect(),
            bsu_generators: Vec::new(),
            critical_loads: Vec::new(),
        })
        .collect();
    let mut sub_zone = vec![None; substations.len()];
    for (zi, z) in zones.iter().enumerate() {
        for &s in &z.substations {
            sub_zone[s] = Some(zi);
        }
    }
    for (i, g) in generators.iter().enumerate() {
        if g.is_blackstart {
            if let Some(z) = sub_zone[nodes[g.node].substation] {
                zones[z].bsu_generators.push(i);
            }
        }
    }
    for (i, l) in loads.iter().enumerate() {
        if l.is_critical {
            if let Some(z) = sub_zone[nodes[l.node].substation] {
                zones[z].critical_loads.push(i);
            }
        }
    }
    let _ = (&gen_idx, &load_idx);

    Ok(Network::assemble(NetworkParts {
        base_mva: case.base_mva,
        f0_hz: case.frequency_hz,
        substations,
        nodes,
        breakers,
        branches,
        generators,
        loads,
        shunts,
        zones,
    })?)
}

/// One node per bus, no breakers: the plain bus-branch network.
pub fn bus_branch_network(case: &CaseFile) -> Result<Network, CaseError> {
    let mut flat = case.clone();
    flat.node_breaker = None;
    let mut nodes: Vec<NodeRecord> = case
        .buses
        .iter()
        .map(|b| NodeRecord {
            id: b.id.clone(),
            bus: b.id.clone(),
            kind: NodeKind::Busbar,
        })
        .collect();
    nodes.sort_by(|a, b| a.id.cmp(&b.id));
    let mut terminals = Vec::new();
    for br in &case.branches {
        terminals.push(TerminalRecord {
            kind: ElementKind::Branch,
            id: br.id.clone(),
            end: Some(BranchEnd::From),
            node: br.from_bus.clone(),
        });
        terminals.push(TerminalRecord {
            kind: ElementKind::Branch,
            id: br.id.clone(),
            end: Some(BranchEnd::To),
            node: br.to_bus.clone(),
        });
    }
    for g in &case.generators {
        terminals.push(TerminalRecord {
            kind: ElementKind::Generator,
            id: g.id.clone(),
            end: None,
            node: g.bus.clone(),
        });
    }
    for l in &case.loads {
        terminals.push(TerminalRecord {
            kind: ElementKind::Load,
            id: l.id.clone(),
            end: None,
            node: l.bus.clone(),
        });
    }
    for s in &case.shunts {
        terminals.push(TerminalRecord {
            kind: ElementKind::Shunt,
            id: s.id.clone(),
            end: None,
            node: s.bus.clone(),
        });
    }
    flat.node_breaker = Some(NodeBreakerSection {
        nodes,
        breakers: vec![],
        links: vec![],
        terminals,
    });
    expand_node_breaker(&flat)
}

/// Blacked-out copy: everything open, offline and unserved; overrides and
/// renewable exclusion applied.
pub fn apply_blackout(
    network: &Network,
    overrides: &[AvailabilityOverride],
) -> Result<Network, CaseError> {
    let mut net = network.clone();
    for b in &mut net.breakers {
        b.closed = false;
    }
    for b in &mut net.branches {
        b.closed = false;
    }
    for g in &mut net.generators {
        g.online = false;
        g.p_set_mw = 0.0;
        g.p_out_mw = 0.0;
        g.q_mvar = 0.0;
    }
    for l in &mut net.loads {
        l.set_served(0.0);
    }
    for s in &mut net.shunts {
        s.closed = false;
    }
    for o in overrides {
        let unknown = || CaseError::UnknownOverride {
            kind: o.kind,
            id: o.id.clone(),
        };
        match o.kind {
            ElementKind::Breaker => {
                let i = net.breaker_index(&o.id).map_err(|_| unknown())?;
                net.breakers[i].available = o.available;
            }
            ElementKind::Branch => {
                let i = net.branch_index(&o.id).map_err(|_| unknown())?;
                net.branches[i].available = o.available;
            }
            ElementKind::Generator => {
                let i = net.generator_index(&o.id).map_err(|_| unknown())?;
                net.generators[i].available = o.available;
            }
            ElementKind::Load => {
                let i = net.load_index(&o.id).map_err(|_| unknown())?;
                net.loads[i].available = o.available;
            }
            ElementKind::Shunt => {
                let i = net.shunt_index(&o.id).map_err(|_| unknown())?;
                net.shunts[i].available = o.available;
            }
        }
    }
    for g in &mut net.generators {
        if g.is_renewable {
            g.available = false;
        }
    }
    Ok(net)
}

/// Writes the network's present state back into a node-breaker case document.
pub fn network_to_case(template: &CaseFile, network: &Network) -> Result<CaseFile, CaseError> {
    let mut case = to_node_breaker_case(template)?;
    for br in &mut case.branches {
        let b = &network.branches[network.branch_index(&br.id)?];
        br.closed = b.closed;
        br.available = b.available;
    }
    for g in &mut case.generators {
        let n = &network.generators[network.generator_index(&g.id)?];
        g.online = n.online;
        g.available = n.available;
        g.p_mw = n.p_set_mw;
        g.v_setpoint_pu = n.v_setpoint_pu;
    }
    for l in &mut case.loads {
        let n = &network.loads[network.load_index(&l.id)?];
        l.available = n.available;
        l.served_mw = Some(n.served_mw);
    }
    for s in &mut case.shunts {
        let n = &network.shunts[network.shunt_index(&s.id)?];
        s.closed = n.closed;
        s.available = n.available;
    }
    let nb = case
        .node_breaker
        .as_mut()
        .expect("node-breaker section present");
    for sw in &mut nb.breakers {
        let b = &network.breakers[network.breaker_index(&sw.id)?];
        sw.closed = b.closed;
        sw.available = b.available;
    }
    for sw in &mut nb.links {
        let b = &network.branches[network.branch_index(&sw.id)?];
        sw.closed = b.closed;
        sw.available = b.available;
    }
    Ok(case)
}

/// Plan document as pretty JSON.
pub fn export_plan(plan: &RestorationPlan) -> String {
    let mut s = serde_json::to_string_pretty(plan).expect("plan serializes");
    s.push('\n');
    s
}

pub fn parse_plan(text: &str) -> Result<RestorationPlan, CaseError> {
    serde_json::from_str(text).map_err(syntax)
}

/// Metrics CSV: one row per island per step, fixed columns, times with 3 decimals.
pub fn export_metrics(plan: &RestorationPlan) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(METRICS_HEADER).expect("in-memory write");
    for row in metrics_history(plan) {
        let s = &row.summary;
        w.write_record([
            format!("{:.3}", row.time_s),
            row.step.to_string(),
            row.stage.number().to_string(),
            row.zone.clone().unwrap_or_default(),
            s.island.clone(),
            format!("{:.6}", s.gen_mw),
            format!("{:.6}", s.gen_mvar),
            format!("{:.6}", s.load_mw),
            format!("{:.6}", s.load_mvar),
            format!("{:.6}", s.v_min_pu),
            format!("{:.6}", s.v_max_pu),
            format!("{:.6}", s.frequency_hz),
            format!("{:.4}", s.max_loading_pct),
            s.max_loading_branch.clone().unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
