//! Three-stage restoration driver.
//!
//! Stage 1 brings up blackstart units and critical loads in every subarea,
//! Stage 2 continues with the remaining units and loads until the subarea's
//! pro-rata share of the stopping target is served, and Stage 3 closes tie
//! lines between subareas and serves deferred load system-wide. Subareas
//! run on disjoint copies of the network and are merged before Stage 3.
//!
//! Every step is followed by a solve of the subarea's energized islands, a
//! limit check and, if needed, remediation. Nothing is ever opened: rolled
//! back actions are undone on a snapshot before they are recorded.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caseio::{apply_blackout, CaseError};
use crate::model::{tie_branches, IslandTracker, Link, Network};
use crate::monitor::{
    check, remediate_branch, remediate_frequency, remediate_voltage, shed_for_deficit, Clock,
    LimitSet, RemedyOutcome, SustainedTracker, Tier, Violation, ViolationKind,
};
use crate::par::Execution;
use crate::pathfinder::{
    cranking_path, electrical_distance, expand_to_breakers, CrankingGraph, CrankingPath, PathError,
};
use crate::plan::{
    metrics_history, AvailabilityOverride, Event, EventKind, IslandSummary, MetricsRow,
    PlanStatistics, PlanStatus, RestorationPlan, Stage, Step, PLAN_FORMAT_VERSION,
};
use crate::solver::{solve_powerflow, PowerFlowOptions, SolutionState, SolveError};

const EPS_MW: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKey {
    MaxMw,
    MinMw,
    StartupTime,
    Distance,
    CrewTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadKey {
    MinMw,
    MaxMw,
    CrewTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemedyConfig {
    pub setpoint_step_pu: f64,
    pub v_setpoint_min_pu: f64,
    pub v_setpoint_max_pu: f64,
    pub lcdf_rounds: usize,
    pub max_events_per_step: usize,
}

impl Default for RemedyConfig {
    fn default() -> Self {
        RemedyConfig {
            setpoint_step_pu: 0.01,
            v_setpoint_min_pu: 0.95,
            v_setpoint_max_pu: 1.10,
            lcdf_rounds: 5,
            max_events_per_step: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub criterion1_alpha: f64,
    pub criterion2_key: GeneratorKey,
    pub criterion3_key: LoadKey,
    pub criterion4_beta: f64,
    pub load_inc_mw: f64,
    pub parallel_subareas: bool,
    pub gen_vref_pu: f64,
    pub t_load_s: f64,
    pub t_event_s: f64,
    /// Adds startup and crew times to the step intervals.
    pub device_times_advance_clock: bool,
    /// Share of an island's online capacity kept unloaded.
    pub capacity_reserve_pct: f64,
    /// Smallest partial increment worth a step.
    pub min_increment_mw: f64,
    pub nadir_factor: f64,
    pub limits: LimitSet,
    pub remedies: RemedyConfig,
    pub powerflow: PowerFlowOptions,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            criterion1_alpha: 0.05,
            criterion2_key: GeneratorKey::MaxMw,
            criterion3_key: LoadKey::MinMw,
            criterion4_beta: 0.80,
            load_inc_mw: 20.0,
            parallel_subareas: true,
            gen_vref_pu: 1.04,
            t_load_s: 20.0,
            t_event_s: 10.0,
            device_times_advance_clock: false,
            capacity_reserve_pct: 5.0,
            min_increment_mw: 1.0,
            nadir_factor: 1.5,
            limits: LimitSet::default(),
            remedies: RemedyConfig::default(),
            powerflow: PowerFlowOptions::default(),
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.criterion1_alpha) {
            return bad("criterion1_alpha must lie in [0, 1]");
        }
        if !(self.criterion4_beta > 0.0 && self.criterion4_beta <= 1.0) {
            return bad("criterion4_beta must lie in (0, 1]");
        }
        if !(self.load_inc_mw > 0.0) {
            return bad("load_inc_mw must be positive");
        }
        if !(self.t_load_s > 0.0 && self.t_event_s > 0.0) {
            return bad("t_load_s and t_event_s must be positive");
        }
        if !(0.0..100.0).contains(&self.capacity_reserve_pct) {
            return bad("capacity_reserve_pct must lie in [0, 100)");
        }
        if !(self.min_increment_mw > 0.0) || self.min_increment_mw > self.load_inc_mw {
            return bad("min_increment_mw must be positive and at most load_inc_mw");
        }
        if !(self.nadir_factor >= 1.0) {
            return bad("nadir_factor must be at least 1");
        }
        let r = &self.remedies;
        if !(r.setpoint_step_pu > 0.0) || !(r.v_setpoint_min_pu < r.v_setpoint_max_pu) {
            return bad("invalid voltage setpoint remedy range");
        }
        if !(r.v_setpoint_min_pu..=r.v_setpoint_max_pu).contains(&self.gen_vref_pu) {
            return bad("gen_vref_pu must lie within the setpoint range");
        }
        self.limits.validate().map_err(PlanError::Config)?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("plan replay failed at step {step}: {message}")]
    Replay { step: usize, message: String },
}

/// Criterion 1 outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    PickGenerator,
    PickLoad,
    StageComplete,
}

/// Criterion 1: a generator is picked iff `alpha * headroom` falls short of
/// the next load increment.
pub fn choose_next(
    headroom_mw: f64,
    alpha: f64,
    next_load_mw: Option<f64>,
    generators_left: bool,
) -> Decision {
    match (generators_left, next_load_mw) {
        (false, None) => Decision::StageComplete,
        (true, None) => Decision::PickGenerator,
        (false, Some(_)) => Decision::PickLoad,
        (true, Some(next)) => {
            if alpha * headroom_mw < next {
                Decision::PickGenerator
            } else {
                Decision::PickLoad
            }
        }
    }
}

/// Criterion 2 over `candidates`; ties go to the smaller id.
pub fn select_generator(
    network: &Network,
    candidates: &[usize],
    key: GeneratorKey,
    graph: &CrankingGraph,
    energized: &[bool],
) -> Option<usize> {
    let score = |g: usize| {
        let gen = &network.generators[g];
        match key {
            GeneratorKey::MaxMw => -gen.p_max_mw,
            GeneratorKey::MinMw => gen.p_max_mw,
            GeneratorKey::StartupTime => gen.startup_time_s,
            GeneratorKey::CrewTime => gen.crew_time_s,
            GeneratorKey::Distance => electrical_distance(graph, gen.node, energized),
        }
    };
    candidates
        .iter()
        .map(|&g| (score(g), g))
        .min_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| network.generators[a.1].id.cmp(&network.generators[b.1].id))
        })
        .map(|(_, g)| g)
}

/// Criterion 3 over `candidates`; ties go to the smaller id.
pub fn select_load(network: &Network, candidates: &[usize], key: LoadKey) -> Option<usize> {
    let score = |l: usize| {
        let load = &network.loads[l];
        match key {
            LoadKey::MinMw => load.p_mw,
            LoadKey::MaxMw => -load.p_mw,
            LoadKey::CrewTime => load.crew_time_s,
        }
    };
    candidates
        .iter()
        .map(|&l| (score(l), l))
        .min_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| network.loads[a.1].id.cmp(&network.loads[b.1].id))
        })
        .map(|(_, l)| l)
}

/// Criterion 4 over every load of the case, available or not.
pub fn stopping_met(network: &Network, beta: f64) -> bool {
    network.served_load_mw() >= beta * network.total_load_mw() - EPS_MW
}

/// One served increment, kept for shedding in reverse order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Served {
    pub time_s: f64,
    pub load: usize,
    pub mw: f64,
}

pub(crate) struct Snapshot {
    network: Network,
    served: Vec<Served>,
    pending: usize,
    remediated: usize,
    last_pickup_node: Option<usize>,
    lcdf_rounds: usize,
}

enum StepFailure {
    /// Remedies exhausted or the solve failed.
    Unresolved(String),
}

/// Working state of one subarea, or of the merged system in Stage 3.
#[derive(Clone, Debug)]
pub struct AreaState {
    pub network: Network,
    pub config: Config,
    /// Zone index; `None` covers the whole system.
    pub zone: Option<usize>,
    pub clock: f64,
    pub stage: Stage,
    pub steps: Vec<Step>,
    pub skipped: BTreeSet<String>,
    pub open_ties: Vec<String>,
    pub failure: Option<String>,
    pub(crate) tracker: SustainedTracker,
    pub(crate) served: Vec<Served>,
    pub(crate) pending: Vec<Event>,
    pub(crate) remediated: Vec<Violation>,
    pub(crate) last_pickup_node: Option<usize>,
    pub(crate) lcdf_rounds: usize,
    deferred_gens: BTreeSet<usize>,
    deferred_loads: BTreeSet<usize>,
    skip_gens: BTreeSet<usize>,
    skip_loads: BTreeSet<usize>,
}

impl AreaState {
    pub fn new(network: Network, config: Config, zone: Option<usize>) -> Self {
        AreaState {
            network,
            config,
            zone,
            clock: 0.0,
            stage: Stage::CriticalResources,
            steps: Vec::new(),
            skipped: BTreeSet::new(),
            open_ties: Vec::new(),
            failure: None,
            tracker: SustainedTracker::default(),
            served: Vec::new(),
            pending: Vec::new(),
            remediated: Vec::new(),
            last_pickup_node: None,
            lcdf_rounds: 0,
            deferred_gens: BTreeSet::new(),
            deferred_loads: BTreeSet::new(),
            skip_gens: BTreeSet::new(),
            skip_loads: BTreeSet::new(),
        }
    }

    fn zone_id(&self) -> Option<String> {
        self.zone.map(|z| self.network.zones[z].id.clone())
    }

    pub fn allows(&self, node: usize) -> bool {
        self.zone
            .is_none_or(|z| self.network.zone_of_node(node) == Some(z))
    }

    pub fn allowed_nodes(&self) -> Vec<bool> {
        (0..self.network.nodes.len())
            .map(|n| self.allows(n))
            .collect()
    }

    pub(crate) fn graph(&self) -> CrankingGraph {
        CrankingGraph::new(&self.network, |n| self.allows(n))
    }

    pub(crate) fn energized(&self) -> Vec<bool> {
        IslandTracker::new(&self.network).energized_nodes(&self.network)
    }

    pub(crate) fn emit(&mut self, event: Event) {
        self.pending.push(event);
    }

    pub(crate) fn snapshot(&self) -> Snapshot {
        Snapshot {
            network: self.network.clone(),
            served: self.served.clone(),
            pending: self.pending.len(),
            remediated: self.remediated.len(),
            last_pickup_node: self.last_pickup_node,
            lcdf_rounds: self.lcdf_rounds,
        }
    }

    pub(crate) fn restore(&mut self, s: Snapshot) {
        self.network = s.network;
        self.served = s.served;
        self.pending.truncate(s.pending);
        self.remediated.truncate(s.remediated);
        self.last_pickup_node = s.last_pickup_node;
        self.lcdf_rounds = s.lcdf_rounds;
    }

    pub(crate) fn close_link(&mut self, link: Link) {
        let (kind, id) = match link {
            Link::Breaker(b) => {
                self.network.breakers[b].closed = true;
                (EventKind::CloseBreaker, self.network.breakers[b].id.clone())
            }
            Link::Branch(b) => {
                self.network.branches[b].closed = true;
                (EventKind::CloseBranch, self.network.branches[b].id.clone())
            }
        };
        self.emit(Event::new(self.clock, kind, id));
    }

    fn find_path(&self, node: usize) -> Result<CrankingPath, PathError> {
        let energized = self.energized();
        if !energized.iter().zip(0..).any(|(&e, n)| e && self.allows(n)) {
            return Err(PathError::NothingEnergized);
        }
        cranking_path(&self.graph(), node, &energized)
    }

    fn close_path(&mut self, path: &CrankingPath) -> Result<usize, PathError> {
        let links = expand_to_breakers(&self.network, path)?;
        for &l in &links {
            self.close_link(l);
        }
        Ok(links.len())
    }

    /// Closes the cheapest path from the energized area to `node`.
    pub(crate) fn energize_to(&mut self, node: usize) -> Result<usize, PathError> {
        let path = self.find_path(node)?;
        self.close_path(&path)
    }

    /// Nodes of the component holding `node`.
    pub(crate) fn island_nodes(&self, node: usize) -> Vec<usize> {
        let labels = self.network.component_labels();
        (0..labels.len())
            .filter(|&v| labels[v] == labels[node])
            .collect()
    }

    /// Energized islands of this area, each as a sorted node list.
    pub(crate) fn scope_islands(&self) -> Vec<Vec<usize>> {
        scope_islands(&self.network, self.zone)
    }

    pub(crate) fn solve_island(&self, nodes: &[usize]) -> Result<SolutionState, SolveError> {
        solve_powerflow(&self.network, nodes, &self.config.powerflow)
    }

    /// Sheds the most recent increment inside `island`, non-critical first.
    pub(crate) fn shed_one(&mut self, island: &[usize]) -> bool {
        let net = &self.network;
        let inside =
            |s: &Served| island.binary_search(&net.loads[s.load].node).is_ok() && s.mw > 0.0;
        let pick = self
            .served
            .iter()
            .rposition(|s| inside(s) && !net.loads[s.load].is_critical)
            .or_else(|| self.served.iter().rposition(inside));
        let Some(i) = pick else { return false };
        let s = self.served.remove(i);
        let load = &mut self.network.loads[s.load];
        let mvar_before = load.served_mvar;
        load.set_served(load.served_mw - s.mw);
        let mvar = mvar_before - load.served_mvar;
        let id = load.id.clone();
        self.deferred_loads.insert(s.load);
        self.emit(
            Event::new(self.clock, EventKind::LoadShed, id)
                .with_mw(s.mw)
                .with_mvar(mvar),
        );
        true
    }

    fn scope_load_mw(&self) -> (f64, f64) {
        let mut total = 0.0;
        let mut served = 0.0;
        for l in self.network.loads.iter().filter(|l| self.allows(l.node)) {
            total += l.p_mw;
            served += l.served_mw;
        }
        (total, served)
    }

    /// Criterion 1 headroom over online units of the area.
    fn headroom(&self) -> f64 {
        self.network
            .generators
            .iter()
            .filter(|g| g.online && self.allows(g.node))
            .map(|g| (g.p_max_mw - g.p_set_mw).max(0.0))
            .sum()
    }

    /// Capacity left in the island of `node` after the reserve.
    fn island_capacity(&self, node: usize) -> f64 {
        let island = self.island_nodes(node);
        let (mut cap, mut out) = (0.0, 0.0);
        for g in self
            .network
            .generators
            .iter()
            .filter(|g| g.online && island.binary_search(&g.node).is_ok())
        {
            cap += g.p_max_mw;
            out += g.p_out_mw;
        }
        cap * (1.0 - self.config.capacity_reserve_pct / 100.0) - out
    }

    fn generator_candidates(&self) -> Vec<usize> {
        let net = &self.network;
        let open = |g: usize| {
            let gen = &net.generators[g];
            gen.usable()
                && !gen.online
                && self.allows(gen.node)
                && !self.skip_gens.contains(&g)
                && !self.deferred_gens.contains(&g)
        };
        let all: Vec<usize> = (0..net.generators.len()).filter(|&g| open(g)).collect();
        if self.stage != Stage::CriticalResources {
            return all;
        }
        let bsu: Vec<usize> = all
            .iter()
            .copied()
            .filter(|&g| net.generators[g].is_blackstart)
            .collect();
        if !bsu.is_empty() {
            return bsu;
        }
        // non-blackstart units join Stage 1 only when blackstart capacity cannot cover the critical loads
        let bsu_cap: f64 = net
            .generators
            .iter()
            .filter(|g| g.is_blackstart && g.usable() && self.allows(g.node))
            .map(|g| g.p_max_mw)
            .sum();
        let cl_mw: f64 = net
            .loads
            .iter()
            .filter(|l| l.is_critical && l.available && self.allows(l.node))
            .map(|l| l.p_mw)
            .sum();
        if bsu_cap < cl_mw {
            all
        } else {
            Vec::new()
        }
    }

    fn load_candidates(&self) -> Vec<usize> {
        let net = &self.network;
        let open: Vec<usize> = (0..net.loads.len())
            .filter(|&l| {
                let load = &net.loads[l];
                load.available
                    && load.remaining_mw() > EPS_MW
                    && self.allows(load.node)
                    && !self.skip_loads.contains(&l)
                    && !self.deferred_loads.contains(&l)
            })
            .collect();
        let critical: Vec<usize> = open
            .iter()
            .copied()
            .filter(|&l| net.loads[l].is_critical)
            .collect();
        if !critical.is_empty() || self.stage == Stage::CriticalResources {
            return critical;
        }
        // a deferred critical load keeps non-critical pickup waiting
        if self
            .deferred_loads
            .iter()
            .any(|&l| net.loads[l].is_critical && net.loads[l].remaining_mw() > EPS_MW)
        {
            return Vec::new();
        }
        open
    }

    fn next_increment(&self, load: usize, target: Option<f64>) -> f64 {
        let mut inc = self
            .config
            .load_inc_mw
            .min(self.network.loads[load].remaining_mw());
        if let Some(t) = target {
            inc = inc.min(t - self.scope_load_mw().1);
        }
        inc
    }

    /// Solves, checks and remediates the pending step, then records it.
    fn finish_step(&mut self, interval_s: f64) -> Result<(), StepFailure> {
        let clock = Clock {
            now_s: self.clock,
            interval_s,
        };
        let mut remedial = 0usize;
        loop {
            let islands = self.scope_islands();
            let mut solutions = Vec::with_capacity(islands.len());
            let mut collapsed = None;
            for nodes in &islands {
                match self.solve_island(nodes) {
                    Ok(s) => solutions.push(s),
                    Err(
                        e @ (SolveError::Infeasible { .. } | SolveError::FrequencyCollapse { .. }),
                    ) => {
                        collapsed = Some((nodes.clone(), e));
                        break;
                    }
                    Err(e) => {
                        let at = &self.network.nodes[nodes[0]].id;
                        return Err(StepFailure::Unresolved(format!("island {at}: {e}")));
                    }
                }
            }
            if let Some((nodes, e)) = collapsed {
                // units cannot balance the island at any frequency: shed
                let at = self.network.nodes[nodes[0]].id.clone();
                if remedial >= self.config.remedies.max_events_per_step
                    || shed_for_deficit(self, &nodes) != RemedyOutcome::Acted
                {
                    return Err(StepFailure::Unresolved(format!("island {at}: {e}")));
                }
                remedial += 1;
                if !self
                    .remediated
                    .iter()
                    .any(|v| v.kind == ViolationKind::Frequency && v.element == at)
                {
                    self.remediated.push(Violation {
                        kind: ViolationKind::Frequency,
                        element: at,
                        // zero marks an island with no steady-state frequency
                        value: 0.0,
                        tier: Tier::Instant,
                        first_seen_s: self.clock,
                        duration_s: 0.0,
                        resolved: true,
                    });
                }
                continue;
            }
            let mut breaches = Vec::new();
            let mut found: Vec<(usize, Violation)> = Vec::new();
            for (i, s) in solutions.iter().enumerate() {
                let r = check(
                    &self.network,
                    s,
                    &self.config.limits,
                    self.config.nadir_factor,
                    clock,
                    &self.tracker,
                );
                breaches.extend(r.breaches);
                found.extend(r.violations.into_iter().map(|v| (i, v)));
            }
            if found.is_empty() {
                self.commit(interval_s, &solutions, &breaches);
                return Ok(());
            }
            if remedial >= self.config.remedies.max_events_per_step {
                return Err(StepFailure::Unresolved(format!(
                    "remediation cap reached with {} violation(s), first {:?} at {}",
                    found.len(),
                    found[0].1.kind,
                    found[0].1.element
                )));
            }
            let (island, violation) = pick_violation(found);
            let before = self.pending.len();
            let solution = &solutions[island];
            let outcome = match violation.kind {
                ViolationKind::Frequency => remediate_frequency(self, solution, &violation),
                ViolationKind::Voltage => remediate_voltage(self, solution, &violation),
                ViolationKind::Branch => remediate_branch(self, solution, &violation),
            };
            match outcome {
                RemedyOutcome::Acted => {
                    let n = self.pending[before..]
                        .iter()
                        .filter(|e| e.kind.is_remedial())
                        .count();
                    remedial += n.max(1);
                    if !self
                        .remediated
                        .iter()
                        .any(|v| v.kind == violation.kind && v.element == violation.element)
                    {
                        self.remediated.push(Violation {
                            resolved: true,
                            ..violation
                        });
                    }
                }
                RemedyOutcome::RollbackLoad | RemedyOutcome::Exhausted => {
                    return Err(StepFailure::Unresolved(format!(
                        "{:?} violation at {} ({:.4}) could not be remediated",
                        violation.kind, violation.element, violation.value
                    )));
                }
            }
        }
    }

    fn commit(
        &mut self,
        interval_s: f64,
        solutions: &[SolutionState],
        breaches: &[(ViolationKind, String)],
    ) {
        for s in solutions {
            s.store(&mut self.network);
        }
        self.tracker.commit(breaches, self.clock);
        let step = Step {
            step: self.steps.len(),
            time_s: self.clock,
            stage: self.stage,
            zone: self.zone_id(),
            interval_s,
            events: std::mem::take(&mut self.pending),
            islands: solutions.iter().map(|s| s.summary(&self.network)).collect(),
            remediated: std::mem::take(&mut self.remediated),
        };
        self.steps.push(step);
        self.clock += interval_s;
        self.lcdf_rounds = 0;
    }

    fn fail(&mut self, what: String) {
        log::error!("plan infeasible: {what}");
        self.pending.clear();
        self.failure = Some(what);
    }

    fn unreachable(&mut self, what: &str, id: &str, err: PathError) {
        // within a subarea the element may still be reachable after synchronization
        if self.stage == Stage::Synchronization
            || self.zone.is_none()
            || matches!(err, PathError::Unavailable(_))
        {
            log::warn!("skipping {what} {id}: {err}");
            self.skipped.insert(id.to_string());
        } else {
            log::info!("deferring {what} {id}: {err}");
        }
    }

    /// Path step, then the unit comes online at `p_min` and `gen_vref_pu`.
    pub fn pickup_generator(&mut self, g: usize) {
        let (node, is_bsu, id) = {
            let gen = &self.network.generators[g];
            (gen.node, gen.is_blackstart, gen.id.clone())
        };
        match self.find_path(node) {
            Ok(path) => {
                if let Err(e) = self.close_path(&path) {
                    self.restore_pending();
                    self.unreachable("generator", &id, e);
                    self.mark_gen(g);
                    return;
                }
                if !self.pending.is_empty() {
                    if let Err(StepFailure::Unresolved(m)) = self.finish_step(self.config.t_event_s)
                    {
                        return self.fail(format!("energizing path to {id}: {m}"));
                    }
                }
            }
            // a blackstart unit with nothing to connect to starts its own island
            Err(PathError::NothingEnergized | PathError::NoPath(_)) if is_bsu => {}
            Err(e) => {
                self.unreachable("generator", &id, e);
                self.mark_gen(g);
                return;
            }
        }
        let (p_min, startup) = {
            let gen = &mut self.network.generators[g];
            gen.online = true;
            gen.p_set_mw = gen.p_min_mw;
            gen.v_setpoint_pu = self.config.gen_vref_pu;
            (gen.p_min_mw, gen.startup_time_s)
        };
        self.emit(
            Event::new(self.clock, EventKind::GenOnline, id.clone())
                .with_mw(p_min)
                .with_setpoint(self.config.gen_vref_pu),
        );
        self.last_pickup_node = Some(node);
        self.deferred_gens.clear();
        self.deferred_loads.clear();
        let extra = if self.config.device_times_advance_clock {
            startup
        } else {
            0.0
        };
        if let Err(StepFailure::Unresolved(m)) = self.finish_step(self.config.t_event_s + extra) {
            self.fail(format!("bringing {id} online: {m}"));
        }
    }

    fn restore_pending(&mut self) {
        self.pending.clear();
    }

    fn mark_gen(&mut self, g: usize) {
        if self.skipped.contains(&self.network.generators[g].id) {
            self.skip_gens.insert(g);
        } else {
            self.deferred_gens.insert(g);
        }
    }

    fn mark_load(&mut self, l: usize) {
        if self.skipped.contains(&self.network.loads[l].id) {
            self.skip_loads.insert(l);
        } else {
            self.deferred_loads.insert(l);
        }
    }

    /// Path step, then increments of at most `load_inc_mw` until the load,
    /// the target or the island's capacity runs out.
    pub fn pickup_load(&mut self, l: usize, target: Option<f64>) {
        let (node, id, crew) = {
            let load = &self.network.loads[l];
            (load.node, load.id.clone(), load.crew_time_s)
        };
        let path = match self.find_path(node) {
            Ok(p) => p,
            Err(e) => {
                self.unreachable("load", &id, e);
                self.mark_load(l);
                return;
            }
        };
        // capacity is checked before anything is switched
        let first = self
            .next_increment(l, target)
            .min(self.island_capacity(path.source()));
        if first
            < self
                .config
                .min_increment_mw
                .min(self.next_increment(l, target))
                - EPS_MW
        {
            log::info!("deferring load {id}: no capacity left in its island");
            self.deferred_loads.insert(l);
            return;
        }
        if let Err(e) = self.close_path(&path) {
            self.restore_pending();
            self.unreachable("load", &id, e);
            self.mark_load(l);
            return;
        }
        if !self.pending.is_empty() {
            if let Err(StepFailure::Unresolved(m)) = self.finish_step(self.config.t_event_s) {
                return self.fail(format!("energizing path to {id}: {m}"));
            }
        }
        let mut first_chunk = true;
        loop {
            if target.is_some_and(|t| self.scope_load_mw().1 >= t - EPS_MW) {
                return;
            }
            let wanted = self.next_increment(l, target);
            if wanted <= EPS_MW {
                return;
            }
            let chunk = wanted.min(self.island_capacity(node));
            if chunk < self.config.min_increment_mw.min(wanted) - EPS_MW {
                log::info!("deferring rest of load {id}: island capacity exhausted");
                self.deferred_loads.insert(l);
                return;
            }
            let snapshot = self.snapshot();
            let load = &mut self.network.loads[l];
            let mvar_before = load.served_mvar;
            load.set_served(load.served_mw + chunk);
            let mvar = load.served_mvar - mvar_before;
            self.served.push(Served {
                time_s: self.clock,
                load: l,
                mw: chunk,
            });
            self.emit(
                Event::new(self.clock, EventKind::LoadIncrement, id.clone())
                    .with_mw(chunk)
                    .with_mvar(mvar),
            );
            self.last_pickup_node = Some(node);
            let extra = if self.config.device_times_advance_clock && first_chunk {
                crew
            } else {
                0.0
            };
            first_chunk = false;
            if let Err(StepFailure::Unresolved(m)) = self.finish_step(self.config.t_load_s + extra)
            {
                log::info!("rolling back increment of {id}: {m}");
                self.restore(snapshot);
                self.deferred_loads.insert(l);
                return;
            }
            if self.deferred_loads.contains(&l) {
                // the increment was shed during remediation
                return;
            }
        }
    }

    /// Alternates generator and load pickups by Criterion 1 until the
    /// candidates run out or `target` MW is served in the area.
    pub fn pickup_loop(&mut self, target: Option<f64>) {
        let mut guard = 0usize;
        while self.failure.is_none() {
            guard += 1;
            if guard > 100_000 {
                self.fail("pickup loop did not terminate".into());
                return;
            }
            if target.is_some_and(|t| self.scope_load_mw().1 >= t - EPS_MW) {
                return;
            }
            let gens = self.generator_candidates();
            let loads = self.load_candidates();
            let next_load = select_load(&self.network, &loads, self.config.criterion3_key);
            let next_mw = next_load.map(|l| self.next_increment(l, target));
            match choose_next(
                self.headroom(),
                self.config.criterion1_alpha,
                next_mw,
                !gens.is_empty(),
            ) {
                Decision::StageComplete => return,
                Decision::PickGenerator => {
                    let graph = self.graph();
                    let energized = self.energized();
                    let g = select_generator(
                        &self.network,
                        &gens,
                        self.config.criterion2_key,
                        &graph,
                        &energized,
                    )
                    .expect("nonempty candidates");
                    self.pickup_generator(g);
                }
                Decision::PickLoad => {
                    self.pickup_load(next_load.expect("load decision has a load"), target)
                }
            }
        }
    }

    /// Stage 1: blackstart units first, then critical loads by Criterion 1.
    pub fn stage1(&mut self) {
        self.begin(Stage::CriticalResources);
        self.pickup_loop(None);
    }

    /// Stage 2: everything else until the area's share of the target is served.
    pub fn stage2(&mut self) {
        self.begin(Stage::BulkPickup);
        let target = self.config.criterion4_beta * self.scope_load_mw().0;
        self.pickup_loop(Some(target));
    }

    fn begin(&mut self, stage: Stage) {
        self.stage = stage;
        self.deferred_gens.clear();
        self.deferred_loads.clear();
    }

    /// Closes one tie with paths inside each end's subarea; rolled back on an
    /// unresolved violation.
    fn close_tie(&mut self, tie: usize) {
        let net = &self.network;
        let br = &net.branches[tie];
        let id = br.id.clone();
        let (Some(za), Some(zb)) = (net.zone_of_node(br.from), net.zone_of_node(br.to)) else {
            return;
        };
        let energized = self.energized();
        let live =
            |z: usize| (0..net.nodes.len()).any(|n| energized[n] && net.zone_of_node(n) == Some(z));
        if !live(za) || !live(zb) {
            return;
        }
        let separate = {
            let labels = net.component_labels();
            let root = |z: usize| {
                (0..net.nodes.len())
                    .find(|&n| energized[n] && net.zone_of_node(n) == Some(z))
                    .map(|n| labels[n])
            };
            root(za) != root(zb)
        };
        let snapshot = self.snapshot();
        for (end, z) in [(br.from, za), (br.to, zb)] {
            let graph =
                CrankingGraph::new(&self.network, |n| self.network.zone_of_node(n) == Some(z));
            let path =
                cranking_path(&graph, end, &self.energized()).and_then(|p| self.close_path(&p));
            if let Err(e) = path {
                log::warn!("tie {id} left open: {e}");
                self.restore(snapshot);
                self.open_ties.push(id);
                return;
            }
        }
        self.close_link(Link::Branch(tie));
        if separate {
            self.emit(Event::new(self.clock, EventKind::Synchronize, id.clone()));
        }
        if let Err(StepFailure::Unresolved(m)) = self.finish_step(self.config.t_event_s) {
            log::warn!("tie {id} left open: {m}");
            self.restore(snapshot);
            self.open_ties.push(id);
        }
    }

    /// Stage 3 over the merged system: ties, deferred pickup, ties again.
    pub fn stage3(&mut self) {
        self.begin(Stage::Synchronization);
        let mut ties = tie_branches(&self.network);
        ties.sort_by(|&a, &b| {
            self.network.branches[a]
                .id
                .cmp(&self.network.branches[b].id)
        });
        for pass in 0..2 {
            self.open_ties.clear();
            for &t in &ties {
                let br = &self.network.branches[t];
                if br.closed || !br.available || self.failure.is_some() {
                    continue;
                }
                self.close_tie(t);
            }
            if pass == 0 && self.failure.is_none() {
                let target = self.config.criterion4_beta * self.network.total_load_mw();
                self.pickup_loop(Some(target));
            }
        }
        let unavailable = ties
            .iter()
            .filter(|&&t| !self.network.branches[t].available)
            .map(|&t| self.network.branches[t].id.clone());
        let mut open: BTreeSet<String> = self.open_ties.drain(..).collect();
        open.extend(unavailable);
        self.open_ties = open.into_iter().collect();
    }
}

/// Energized islands whose nodes lie in `zone` (all of them for `None`).
pub fn scope_islands(network: &Network, zone: Option<usize>) -> Vec<Vec<usize>> {
    crate::model::energized_islands(network)
        .into_iter()
        .filter(|i| zone.is_none_or(|z| network.zone_of_node(i.nodes[0]) == Some(z)))
        .map(|i| i.nodes)
        .collect()
}

/// Frequency first, then the worst voltage, then the heaviest branch.
fn pick_violation(found: Vec<(usize, Violation)>) -> (usize, Violation) {
    let rank = |v: &Violation| match v.kind {
        ViolationKind::Frequency => 0,
        ViolationKind::Voltage => 1,
        ViolationKind::Branch => 2,
    };
    let severity = |v: &Violation| match v.kind {
        ViolationKind::Voltage => (v.value - 1.0).abs(),
        _ => v.value,
    };
    found
        .into_iter()
        .min_by(|a, b| {
            rank(&a.1)
                .cmp(&rank(&b.1))
                .then_with(|| severity(&b.1).total_cmp(&severity(&a.1)))
                .then_with(|| a.1.element.cmp(&b.1.element))
        })
        .expect("at least one violation")
}

/// Plan together with the final network state.
#[derive(Clone, Debug)]
pub struct PlanOutcome {
    pub plan: RestorationPlan,
    pub network: Network,
    pub metrics: Vec<MetricsRow>,
}

/// Plans restoration of `network` (any state; it is blacked out first).
pub fn run(
    network: &Network,
    overrides: &[AvailabilityOverride],
    config: &Config,
) -> Result<PlanOutcome, PlanError> {
    run_with(network, overrides, config, Execution::default())
}

pub fn run_with(
    network: &Network,
    overrides: &[AvailabilityOverride],
    config: &Config,
    exec: Execution,
) -> Result<PlanOutcome, PlanError> {
    config.validate()?;
    let dark = apply_blackout(network, overrides)?;

    let (mut system, mut steps) = if config.parallel_subareas && !dark.zones.is_empty() {
        let zones: Vec<usize> = (0..dark.zones.len()).collect();
        let areas = exec.map(zones, |z| {
            let mut area = AreaState::new(dark.clone(), config.clone(), Some(z));
            area.stage1();
            if area.failure.is_none() {
                area.stage2();
            }
            area
        });
        merge(&dark, config, areas)
    } else {
        let mut area = AreaState::new(dark.clone(), config.clone(), None);
        area.stage1();
        if area.failure.is_none() {
            area.stage2();
        }
        let steps = std::mem::take(&mut area.steps);
        (area, steps)
    };

    if config.parallel_subareas && system.failure.is_none() && !dark.zones.is_empty() {
        system.steps.clear();
        system.stage3();
        steps.append(&mut system.steps);
    }
    for (i, s) in steps.iter_mut().enumerate() {
        s.step = i;
    }

    let status = if system.failure.is_some() {
        PlanStatus::Infeasible
    } else if stopping_met(&system.network, config.criterion4_beta) {
        PlanStatus::Complete
    } else {
        PlanStatus::Partial
    };
    let total = system.network.total_load_mw();
    let served = system.network.served_load_mw();
    let statistics = PlanStatistics {
        total_load_mw: total,
        served_load_mw: served,
        restored_pct: if total > 0.0 {
            100.0 * served / total
        } else {
            0.0
        },
        duration_s: steps
            .iter()
            .map(|s| s.time_s + s.interval_s)
            .fold(0.0, f64::max),
        remedial_events: steps
            .iter()
            .flat_map(|s| &s.events)
            .filter(|e| e.kind.is_remedial())
            .count(),
        skipped: system.skipped.iter().cloned().collect(),
        open_ties: system.open_ties.clone(),
        diagnostic: system.failure.clone(),
    };
    let plan = RestorationPlan {
        format_version: PLAN_FORMAT_VERSION,
        status,
        config: config.clone(),
        overrides: overrides.to_vec(),
        steps,
        statistics,
    };
    let metrics = metrics_history(&plan);
    Ok(PlanOutcome {
        plan,
        network: system.network,
        metrics,
    })
}

/// Merges subarea states element by element and their steps by
/// (time, zone, sequence).
fn merge(dark: &Network, config: &Config, areas: Vec<AreaState>) -> (AreaState, Vec<Step>) {
    let mut net = dark.clone();
    let owner = |n: usize| dark.zone_of_node(n);
    for (z, area) in areas.iter().enumerate() {
        let src = &area.network;
        let own2 = |a: usize, b: usize| owner(a) == Some(z) && owner(b) == Some(z);
        for (i, b) in src.breakers.iter().enumerate() {
            if own2(b.from, b.to) {
                net.breakers[i] = b.clone();
            }
        }
        for (i, b) in src.branches.iter().enumerate() {
            if own2(b.from, b.to) {
                net.branches[i] = b.clone();
            }
        }
        for (i, g) in src.generators.iter().enumerate() {
            if owner(g.node) == Some(z) {
                net.generators[i] = g.clone();
            }
        }
        for (i, l) in src.loads.iter().enumerate() {
            if owner(l.node) == Some(z) {
                net.loads[i] = l.clone();
            }
        }
        for (i, s) in src.shunts.iter().enumerate() {
            if owner(s.node) == Some(z) {
                net.shunts[i] = s.clone();
            }
        }
    }

    let mut system = AreaState::new(net, config.clone(), None);
    let mut keyed: Vec<(f64, usize, usize, Step)> = Vec::new();
    let mut served: Vec<(f64, usize, usize, Served)> = Vec::new();
    for (z, area) in areas.into_iter().enumerate() {
        system.clock = system.clock.max(area.clock);
        system.tracker.merge(&area.tracker);
        if system.failure.is_none() {
            system.failure = area.failure.clone();
        }
        for (k, s) in area.served.into_iter().enumerate() {
            served.push((s.time_s, z, k, s));
        }
        for (k, s) in area.steps.into_iter().enumerate() {
            keyed.push((s.time_s, z, k, s));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    served.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    system.served = served.into_iter().map(|s| s.3).collect();
    (system, keyed.into_iter().map(|k| k.3).collect())
}

/// Result of replaying a plan on its case.
#[derive(Clone, Debug, Default)]
pub struct ReplayReport {
    pub steps: usize,
    pub divergences: Vec<String>,
    pub violations: Vec<(usize, Violation)>,
    pub network: Option<Network>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.divergences.is_empty() && self.violations.is_empty()
    }
}

const SUMMARY_TOLERANCE: f64 = 1e-6;

fn summary_matches(a: &IslandSummary, b: &IslandSummary) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= SUMMARY_TOLERANCE * (1.0 + x.abs().max(y.abs()));
    a.island == b.island
        && close(a.gen_mw, b.gen_mw)
        && close(a.gen_mvar, b.gen_mvar)
        && close(a.load_mw, b.load_mw)
        && close(a.load_mvar, b.load_mvar)
        && close(a.v_min_pu, b.v_min_pu)
        && close(a.v_max_pu, b.v_max_pu)
        && close(a.frequency_hz, b.frequency_hz)
        && close(a.max_loading_pct, b.max_loading_pct)
}

fn apply_event(net: &mut Network, e: &Event) -> Result<(), String> {
    let missing = |what: &str| format!("{what} `{}` is not in the case", e.element);
    let need = |x: Option<f64>, what: &str| {
        x.ok_or_else(|| format!("{} event for `{}` lacks {what}", e.kind.as_str(), e.element))
    };
    match e.kind {
        EventKind::CloseBreaker => {
            let i = net
                .breaker_index(&e.element)
                .map_err(|_| missing("breaker"))?;
            net.breakers[i].closed = true;
        }
        EventKind::CloseBranch => {
            let i = net
                .branch_index(&e.element)
                .map_err(|_| missing("branch"))?;
            net.branches[i].closed = true;
        }
        EventKind::Synchronize => {
            let i = net
                .branch_index(&e.element)
                .map_err(|_| missing("branch"))?;
            if !net.branches[i].closed {
                return Err(format!("synchronize on open tie `{}`", e.element));
            }
        }
        EventKind::GenOnline => {
            let i = net
                .generator_index(&e.element)
                .map_err(|_| missing("generator"))?;
            let g = &mut net.generators[i];
            g.online = true;
            g.p_set_mw = need(e.mw, "mw")?;
            g.v_setpoint_pu = need(e.setpoint_pu, "setpoint_pu")?;
        }
        EventKind::Redispatch => {
            let i = net
                .generator_index(&e.element)
                .map_err(|_| missing("generator"))?;
            net.generators[i].p_set_mw = need(e.mw, "mw")?;
        }
        EventKind::VrefChange => {
            let i = net
                .generator_index(&e.element)
                .map_err(|_| missing("generator"))?;
            net.generators[i].v_setpoint_pu = need(e.setpoint_pu, "setpoint_pu")?;
        }
        EventKind::LoadIncrement | EventKind::LoadShed => {
            let i = net.load_index(&e.element).map_err(|_| missing("load"))?;
            let mw = need(e.mw, "mw")?;
            let l = &mut net.loads[i];
            let sign = if e.kind == EventKind::LoadShed {
                -1.0
            } else {
                1.0
            };
            l.set_served(l.served_mw + sign * mw);
        }
        EventKind::ShuntClose => {
            let i = net.shunt_index(&e.element).map_err(|_| missing("shunt"))?;
            net.shunts[i].closed = true;
        }
    }
    Ok(())
}

/// Re-applies every event of `plan` on the blacked-out case, re-solving and
/// re-checking each step with `config` (the plan's own when `None`).
pub fn replay(
    network: &Network,
    plan: &RestorationPlan,
    config: Option<&Config>,
) -> Result<ReplayReport, PlanError> {
    let config = config.unwrap_or(&plan.config);
    let mut net = apply_blackout(network, &plan.overrides)?;
    let mut report = ReplayReport::default();
    let mut trackers: BTreeMap<Option<String>, SustainedTracker> = BTreeMap::new();
    let mut last_time = f64::NEG_INFINITY;
    for step in &plan.steps {
        report.steps += 1;
        if step.time_s < last_time {
            report.divergences.push(format!(
                "step {}: time {} goes backwards",
                step.step, step.time_s
            ));
        }
        last_time = step.time_s;
        for e in &step.events {
            if e.time_s != step.time_s {
                report.divergences.push(format!(
                    "step {}: event time {} differs from step time",
                    step.step, e.time_s
                ));
            }
            apply_event(&mut net, e).map_err(|message| PlanError::Replay {
                step: step.step,
                message,
            })?;
        }
        let zone = match &step.zone {
            Some(z) => Some(net.zone_index(z).map_err(|e| PlanError::Replay {
                step: step.step,
                message: e.to_string(),
            })?),
            None => None,
        };
        if !trackers.contains_key(&step.zone) {
            let mut t = SustainedTracker::default();
            if step.zone.is_none() {
                for other in trackers.values() {
                    t.merge(other);
                }
            }
            trackers.insert(step.zone.clone(), t);
        }
        let tracker = trackers.get_mut(&step.zone).unwrap();
        let clock = Clock {
            now_s: step.time_s,
            interval_s: step.interval_s,
        };
        let mut summaries = Vec::new();
        let mut breaches = Vec::new();
        let mut solutions = Vec::new();
        for nodes in scope_islands(&net, zone) {
            match solve_powerflow(&net, &nodes, &config.powerflow) {
                Ok(s) => {
                    let r = check(
                        &net,
                        &s,
                        &config.limits,
                        config.nadir_factor,
                        clock,
                        tracker,
                    );
                    report
                        .violations
                        .extend(r.violations.into_iter().map(|v| (step.step, v)));
                    breaches.extend(r.breaches);
                    summaries.push(s.summary(&net));
                    solutions.push(s);
                }
                Err(e) => report
                    .divergences
                    .push(format!("step {}: {}", step.step, e)),
            }
        }
        for s in &solutions {
            s.store(&mut net);
        }
        tracker.commit(&breaches, step.time_s);
        let same = summaries.len() == step.islands.len()
            && summaries
                .iter()
                .zip(&step.islands)
                .all(|(a, b)| summary_matches(a, b));
        if !same {
            report.divergences.push(format!(
                "step {}: replayed island summaries differ from the recorded ones",
                step.step
            ));
        }
    }
    report.network = Some(net);
    Ok(report)
}
