//! Limit monitoring and remedial actions.
//!
//! Every solved step is checked against two tiers. The instant tier has no
//! time allowance; frequency is compared there through a nadir estimate
//! `f0 + k * (f_ss - f0)` since the steady-state model has no transient. The
//! sustained tier fires once a breach has lasted its duration, where a
//! breach seen at a step is assumed to last until the next step of the same
//! subarea.
//!
//! Remedies run in a fixed order per pass: frequency, then voltage, then
//! branch loading. Each pass re-solves and re-checks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::Link;
use crate::pathfinder::{cranking_path, electrical_distance, CrankingGraph};
use crate::plan::{Event, EventKind};
use crate::sequencer::AreaState;
use crate::solver::{rank_candidates, ClosureCandidate, DcModel, SolutionState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub low: f64,
    pub high: f64,
}

impl Band {
    pub const fn new(low: f64, high: f64) -> Self {
        Band { low, high }
    }

    /// Strictly inside.
    pub fn contains(&self, x: f64) -> bool {
        x > self.low && x < self.high
    }

    pub fn encloses(&self, other: &Band) -> bool {
        self.low <= other.low && self.high >= other.high
    }

    /// Distance outside the band, zero inside.
    pub fn excess(&self, x: f64) -> f64 {
        if x <= self.low {
            self.low - x
        } else if x >= self.high {
            x - self.high
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitSet {
    pub v_instant: Band,
    pub v_sustained: Band,
    pub v_sustained_s: f64,
    pub f_instant: Band,
    pub f_sustained: Band,
    pub f_sustained_s: f64,
    /// Loading must stay strictly below this percentage.
    pub branch_loading_pct: f64,
}

impl Default for LimitSet {
    fn default() -> Self {
        LimitSet {
            v_instant: Band::new(0.8, 2.0),
            v_sustained: Band::new(0.95, 1.10),
            v_sustained_s: 10.0,
            f_instant: Band::new(59.0, 61.0),
            f_sustained: Band::new(59.6, 60.4),
            f_sustained_s: 10.0,
            branch_loading_pct: 90.0,
        }
    }
}

impl LimitSet {
    pub fn validate(&self) -> Result<(), String> {
        if !self.v_instant.encloses(&self.v_sustained)
            || !self.f_instant.encloses(&self.f_sustained)
        {
            return Err("instant bands must contain the sustained bands".into());
        }
        if self.v_sustained_s < 0.0 || self.f_sustained_s < 0.0 {
            return Err("violation durations must be non-negative".into());
        }
        if !(self.branch_loading_pct > 0.0) {
            return Err("branch loading limit must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Voltage,
    Frequency,
    Branch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Instant,
    Sustained,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Node, island or branch id.
    pub element: String,
    pub value: f64,
    pub tier: Tier,
    pub first_seen_s: f64,
    pub duration_s: f64,
    pub resolved: bool,
}

/// Simulated time of the step being checked and the gap to the next one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Clock {
    pub now_s: f64,
    pub interval_s: f64,
}

/// First-seen times of sustained-band breaches still in progress.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SustainedTracker {
    first_seen: BTreeMap<(ViolationKind, String), f64>,
}

impl SustainedTracker {
    /// Keeps exactly the breaches present in `observed`.
    pub fn commit(&mut self, observed: &[(ViolationKind, String)], now_s: f64) {
        let mut next = BTreeMap::new();
        for key in observed {
            let t = self.first_seen.get(key).copied().unwrap_or(now_s);
            next.insert(key.clone(), t);
        }
        self.first_seen = next;
    }

    /// Adds breaches tracked elsewhere, keeping the earliest first-seen time.
    pub fn merge(&mut self, other: &SustainedTracker) {
        for (k, &t) in &other.first_seen {
            let e = self.first_seen.entry(k.clone()).or_insert(t);
            *e = e.min(t);
        }
    }

    fn since(&self, key: &(ViolationKind, String), now_s: f64) -> f64 {
        self.first_seen.get(key).copied().unwrap_or(now_s)
    }
}

/// Outcome of one limit check.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckResult {
    /// Violations requiring action now.
    pub violations: Vec<Violation>,
    /// Sustained-band breaches present, fired or not.
    pub breaches: Vec<(ViolationKind, String)>,
}

impl CheckResult {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks one converged island solution.
pub fn check(
    network: &crate::model::Network,
    solution: &SolutionState,
    limits: &LimitSet,
    nadir_factor: f64,
    clock: Clock,
    tracker: &SustainedTracker,
) -> CheckResult {
    let mut out = CheckResult::default();
    let sustained =
        |kind: ViolationKind, element: String, value: f64, limit_s: f64, out: &mut CheckResult| {
            let key = (kind, element);
            let first = tracker.since(&key, clock.now_s);
            let duration = clock.now_s + clock.interval_s - first;
            if duration >= limit_s {
                out.violations.push(Violation {
                    kind,
                    element: key.1.clone(),
                    value,
                    tier: Tier::Sustained,
                    first_seen_s: first,
                    duration_s: duration,
                    resolved: false,
                });
            }
            out.breaches.push(key);
        };
    let instant = |kind, element: String, value| Violation {
        kind,
        element,
        value,
        tier: Tier::Instant,
        first_seen_s: clock.now_s,
        duration_s: 0.0,
        resolved: false,
    };

    // one check per bus, reported at its first node
    for bus in &solution.map.buses {
        let node = bus[0];
        let v = solution.voltage(node).unwrap_or(0.0);
        let id = network.nodes[node].id.clone();
        if !limits.v_instant.contains(v) {
            out.violations.push(instant(ViolationKind::Voltage, id, v));
        } else if !limits.v_sustained.contains(v) {
            sustained(
                ViolationKind::Voltage,
                id,
                v,
                limits.v_sustained_s,
                &mut out,
            );
        }
    }

    let f0 = network.f0_hz;
    let f = solution.frequency_hz;
    let nadir = f0 + nadir_factor * (f - f0);
    let island = network.nodes[solution.map.nodes[0]].id.clone();
    if !limits.f_instant.contains(nadir) {
        out.violations
            .push(instant(ViolationKind::Frequency, island, nadir));
    } else if !limits.f_sustained.contains(f) {
        sustained(
            ViolationKind::Frequency,
            island,
            f,
            limits.f_sustained_s,
            &mut out,
        );
    }

    for flow in &solution.branches {
        if flow.loading_pct >= limits.branch_loading_pct {
            out.violations.push(instant(
                ViolationKind::Branch,
                network.branches[flow.branch].id.clone(),
                flow.loading_pct,
            ));
        }
    }
    out
}

/// Why a remedy class gave up.
#[derive(Clone, Debug, PartialEq)]
pub enum RemedyOutcome {
    /// Actions were taken; re-check.
    Acted,
    /// Nothing left to try for this violation.
    Exhausted,
    /// Undervoltage remains after setpoint and shunt actions; undo the load step.
    RollbackLoad,
}

/// Online units in the island ordered by electrical distance to `node`.
fn units_by_distance(state: &AreaState, island: &[usize], node: usize) -> Vec<usize> {
    let net = &state.network;
    let graph = CrankingGraph::new(net, |n| island.binary_search(&n).is_ok());
    let mut from = vec![false; net.nodes.len()];
    from[node] = true;
    let mut units: Vec<(f64, &str, usize)> = net
        .generators
        .iter()
        .enumerate()
        .filter(|(_, g)| g.online && island.binary_search(&g.node).is_ok())
        .map(|(i, g)| (electrical_distance(&graph, g.node, &from), g.id.as_str(), i))
        .collect();
    units.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    units.into_iter().map(|(_, _, i)| i).collect()
}

/// Raises (or lowers) unit setpoints nearest the last pickup to absorb the
/// governor deviation; sheds load when units are exhausted.
pub fn remediate_frequency(
    state: &mut AreaState,
    solution: &SolutionState,
    violation: &Violation,
) -> RemedyOutcome {
    let island = solution.map.nodes.clone();
    let deviation: f64 = solution
        .generators
        .iter()
        .map(|o| o.p_mw - state.network.generators[o.generator].p_set_mw)
        .sum();
    let under = violation.value < state.network.f0_hz;
    let anchor = state
        .last_pickup_node
        .filter(|n| island.binary_search(n).is_ok())
        .unwrap_or(island[0]);
    let mut need = deviation;
    let mut acted = false;
    for g in units_by_distance(state, &island, anchor) {
        if need.abs() < 1e-9 {
            break;
        }
        let gen = &state.network.generators[g];
        let target = if need > 0.0 {
            (gen.p_set_mw + need).min(gen.p_max_mw)
        } else {
            (gen.p_set_mw + need).max(gen.p_min_mw)
        };
        let change = target - gen.p_set_mw;
        if change.abs() < 1e-6 {
            continue;
        }
        need -= change;
        let id = gen.id.clone();
        state.network.generators[g].p_set_mw = target;
        state.emit(Event::new(state.clock, EventKind::Redispatch, id).with_mw(target));
        acted = true;
    }
    if acted {
        return RemedyOutcome::Acted;
    }
    if under && state.shed_one(&island) {
        return RemedyOutcome::Acted;
    }
    RemedyOutcome::Exhausted
}

/// Sheds one increment from an island whose units cannot cover its load.
/// Returns `Exhausted` when the imbalance is a surplus or nothing is served.
pub fn shed_for_deficit(state: &mut AreaState, island: &[usize]) -> RemedyOutcome {
    let net = &state.network;
    let inside = |n: usize| island.binary_search(&n).is_ok();
    let p_min: f64 = net
        .generators
        .iter()
        .filter(|g| g.online && inside(g.node))
        .map(|g| g.p_min_mw)
        .sum();
    let load: f64 = net
        .loads
        .iter()
        .filter(|l| inside(l.node))
        .map(|l| l.served_mw)
        .sum();
    if p_min > load {
        return RemedyOutcome::Exhausted;
    }
    if state.shed_one(island) {
        RemedyOutcome::Acted
    } else {
        RemedyOutcome::Exhausted
    }
}

/// Setpoint steps on the nearest units, then a guarded shunt switching.
pub fn remediate_voltage(
    state: &mut AreaState,
    solution: &SolutionState,
    violation: &Violation,
) -> RemedyOutcome {
    let net = &state.network;
    let node = match net.node_index(&violation.element) {
        Ok(n) => n,
        Err(_) => return RemedyOutcome::Exhausted,
    };
    let island = solution.map.nodes.clone();
    let under = violation.value < 1.0;
    let step = state.config.remedies.setpoint_step_pu;
    let (vmin, vmax) = (
        state.config.remedies.v_setpoint_min_pu,
        state.config.remedies.v_setpoint_max_pu,
    );
    let before = voltage_excess(state, solution);

    for g in units_by_distance(state, &island, node) {
        let gen = &state.network.generators[g];
        let target = if under {
            gen.v_setpoint_pu + step
        } else {
            gen.v_setpoint_pu - step
        };
        if target > vmax + 1e-12 || target < vmin - 1e-12 {
            continue;
        }
        let target = (target * 1e6).round() / 1e6;
        let snapshot = state.snapshot();
        let id = gen.id.clone();
        state.network.generators[g].v_setpoint_pu = target;
        state.emit(Event::new(state.clock, EventKind::VrefChange, id).with_setpoint(target));
        match state.solve_island(&island) {
            Ok(trial) if improves(voltage_excess(state, &trial), before) => {
                return RemedyOutcome::Acted
            }
            _ => state.restore(snapshot),
        }
    }

    // shunts: capacitors for undervoltage, reactors for overvoltage
    let area_nodes = state.allowed_nodes();
    let mut shunts: Vec<(f64, String, usize)> = Vec::new();
    {
        let net = &state.network;
        let graph = CrankingGraph::new(net, |n| area_nodes[n]);
        let mut from = vec![false; net.nodes.len()];
        from[node] = true;
        for (i, s) in net.shunts.iter().enumerate() {
            if !s.available || s.closed || !area_nodes[s.node] || (s.mvar_nominal > 0.0) != under {
                continue;
            }
            shunts.push((electrical_distance(&graph, s.node, &from), s.id.clone(), i));
        }
    }
    shunts.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    for (dist, _, s) in shunts {
        if !dist.is_finite() {
            continue;
        }
        let snapshot = state.snapshot();
        if state.energize_to(state.network.shunts[s].node).is_err() {
            state.restore(snapshot);
            continue;
        }
        state.network.shunts[s].closed = true;
        let id = state.network.shunts[s].id.clone();
        state.emit(
            Event::new(state.clock, EventKind::ShuntClose, id)
                .with_mvar(state.network.shunts[s].mvar_nominal),
        );
        let island_now = state.island_nodes(node);
        let band = state.config.limits.v_sustained;
        match state.solve_island(&island_now) {
            // guard: a discrete shunt must not push any voltage out of the sustained band
            Ok(trial) if trial.v_pu.iter().all(|&v| band.contains(v)) => {
                return RemedyOutcome::Acted
            }
            _ => state.restore(snapshot),
        }
    }
    if under {
        RemedyOutcome::RollbackLoad
    } else {
        RemedyOutcome::Exhausted
    }
}

/// Buses outside the sustained band, then their total excess.
fn voltage_excess(state: &AreaState, solution: &SolutionState) -> (usize, f64) {
    let band = state.config.limits.v_sustained;
    let outside = solution.v_pu.iter().filter(|&&v| !band.contains(v)).count();
    (outside, solution.v_pu.iter().map(|&v| band.excess(v)).sum())
}

fn improves(after: (usize, f64), before: (usize, f64)) -> bool {
    after.0 < before.0 || (after.0 == before.0 && after.1 < before.1 - 1e-9)
}

/// Candidate closures for relieving `monitored`: open, available branches
/// whose two ends can be switched onto the island inside their substations.
pub fn closure_candidates(
    state: &AreaState,
    island: &[usize],
) -> Vec<(ClosureCandidate, Vec<Link>)> {
    let net = &state.network;
    let area = state.allowed_nodes();
    let mut live = vec![false; net.nodes.len()];
    for &n in island {
        live[n] = true;
    }
    let mut out = Vec::new();
    for (bi, br) in net.branches.iter().enumerate() {
        if br.closed || !br.available || br.zero_impedance || !area[br.from] || !area[br.to] {
            continue;
        }
        let mut ends = Vec::with_capacity(2);
        let mut links = Vec::new();
        for end in [br.from, br.to] {
            let sub = net.nodes[end].substation;
            let graph = CrankingGraph::switches_only(net, |n| net.nodes[n].substation == sub);
            match cranking_path(&graph, end, &live) {
                Ok(p) => {
                    ends.push(p.source());
                    links.extend(p.links.iter().copied().filter(|&l| !net.link_closed(l)));
                }
                Err(_) => break,
            }
        }
        if ends.len() == 2 {
            links.push(Link::Branch(bi));
            out.push((
                ClosureCandidate {
                    branch: bi,
                    from_node: ends[0],
                    to_node: ends[1],
                },
                links,
            ));
        }
    }
    out
}

/// Closes the offline branch with the greatest LCDF relief, re-checking each
/// trial; falls back to shedding.
pub fn remediate_branch(
    state: &mut AreaState,
    solution: &SolutionState,
    violation: &Violation,
) -> RemedyOutcome {
    let Ok(monitored) = state.network.branch_index(&violation.element) else {
        return RemedyOutcome::Exhausted;
    };
    let island = solution.map.nodes.clone();
    let limit = state.config.limits.branch_loading_pct;
    if state.lcdf_rounds < state.config.remedies.lcdf_rounds {
        let injections: Vec<(usize, f64)> = solution
            .generators
            .iter()
            .map(|o| (state.network.generators[o.generator].node, o.p_mw))
            .chain(
                state
                    .network
                    .loads
                    .iter()
                    .filter(|l| l.served_mw > 0.0 && island.binary_search(&l.node).is_ok())
                    .map(|l| (l.node, -l.served_mw)),
            )
            .collect();
        if let Ok(model) = DcModel::new(&state.network, &island, &injections) {
            let candidates = closure_candidates(state, &island);
            let plain: Vec<ClosureCandidate> = candidates.iter().map(|c| c.0).collect();
            let ranked = rank_candidates(&state.network, &model, monitored, &plain);
            state.lcdf_rounds += 1;
            for (cand, relief) in ranked {
                if relief.relief_mw >= 0.0 {
                    break;
                }
                let links = &candidates.iter().find(|c| c.0 == cand).unwrap().1;
                let snapshot = state.snapshot();
                for &l in links {
                    state.close_link(l);
                }
                let merged = state.island_nodes(island[0]);
                let accept = match state.solve_island(&merged) {
                    Ok(trial) => {
                        let now = trial
                            .branches
                            .iter()
                            .find(|f| f.branch == monitored)
                            .map_or(0.0, |f| f.loading_pct);
                        let others_ok = trial
                            .branches
                            .iter()
                            .all(|f| f.branch == monitored || f.loading_pct < limit);
                        let v_ok = trial
                            .v_pu
                            .iter()
                            .all(|&v| state.config.limits.v_instant.contains(v));
                        now < violation.value && others_ok && v_ok
                    }
                    Err(_) => false,
                };
                if accept {
                    return RemedyOutcome::Acted;
                }
                state.restore(snapshot);
            }
        }
    }
    if state.shed_one(&island) {
        return RemedyOutcome::Acted;
    }
    RemedyOutcome::Exhausted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequencer::Served;
    use crate::solver::{solve_powerflow, PowerFlowOptions};
    use crate::testkit::BusBranch;

    fn clock(now: f64) -> Clock {
        Clock {
            now_s: now,
            interval_s: 10.0,
        }
    }

    #[test]
    fn default_limits_nest() {
        LimitSet::default().validate().unwrap();
        let mut bad = LimitSet::default();
        bad.v_sustained = Band::new(0.7, 1.1);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn clean_solution_has_no_violations() {
        let net = BusBranch::new(2)
            .line(0, 1, 0.0, 0.02, 0.0)
            .gen(0, 300.0, 0.96)
            .load(1, 20.0, 0.0)
            .build();
        let s = solve_powerflow(&net, &[0, 1], &PowerFlowOptions::default()).unwrap();
        let r = check(
            &net,
            &s,
            &LimitSet::default(),
            1.5,
            clock(0.0),
            &SustainedTracker::default(),
        );
        assert!(r.is_clean(), "{:?}", r.violations);
    }

    #[test]
    fn sustained_undervoltage_fires_after_duration() {
        let net = BusBranch::new(1).gen(0, 100.0, 0.94).build();
        let s = solve_powerflow(&net, &[0], &PowerFlowOptions::default()).unwrap();
        let limits = LimitSet::default();
        let mut tracker = SustainedTracker::default();
        let short = Clock {
            now_s: 0.0,
            interval_s: 5.0,
        };
        let r = check(&net, &s, &limits, 1.5, short, &tracker);
        assert!(r.violations.is_empty());
        tracker.commit(&r.breaches, 0.0);
        let r = check(
            &net,
            &s,
            &limits,
            1.5,
            Clock {
                now_s: 5.0,
                interval_s: 5.0,
            },
            &tracker,
        );
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].tier, Tier::Sustained);
        assert!((r.violations[0].duration_s - 10.0).abs() < 1e-12);
        // with a 10 s gap it fires at first sight
        let r = check(
            &net,
            &s,
            &limits,
            1.5,
            clock(0.0),
            &SustainedTracker::default(),
        );
        assert_eq!(r.violations[0].kind, ViolationKind::Voltage);
    }

    #[test]
    fn overloaded_branch_is_instant() {
        let net = BusBranch::new(2)
            .line(0, 1, 0.0, 0.05, 0.0)
            .rating(0, 50.0)
            .gen(0, 300.0, 1.0)
            .load(1, 45.1, 0.0)
            .build();
        let s = solve_powerflow(&net, &[0, 1], &PowerFlowOptions::default()).unwrap();
        assert!(s.branches[0].loading_pct > 90.0);
        let r = check(
            &net,
            &s,
            &LimitSet::default(),
            1.5,
            clock(0.0),
            &SustainedTracker::default(),
        );
        assert!(r
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::Branch && v.tier == Tier::Instant));
    }

    fn area(net: crate::model::Network) -> AreaState {
        AreaState::new(net, crate::sequencer::Config::default(), None)
    }

    fn first(state: &AreaState, kind: ViolationKind) -> Option<(SolutionState, Violation)> {
        let s = state.solve_island(&state.scope_islands()[0]).unwrap();
        let r = check(
            &state.network,
            &s,
            &state.config.limits,
            state.config.nadir_factor,
            clock(0.0),
            &SustainedTracker::default(),
        );
        let v = r
            .violations
            .into_iter()
            .filter(|v| v.kind == kind)
            .max_by(|a, b| {
                let d = |v: &Violation| (v.value - 1.0).abs();
                d(a).total_cmp(&d(b))
            })?;
        Some((s, v))
    }

    #[test]
    fn mild_undervoltage_takes_one_setpoint_step() {
        let net = BusBranch::new(2)
            .line(0, 1, 0.0, 0.2, 0.0)
            .gen(0, 100.0, 0.96)
            .load(1, 10.0, 5.0)
            .build();
        let mut st = area(net);
        let (s, v) = first(&st, ViolationKind::Voltage).expect("undervoltage");
        assert!(v.value < 0.95 && v.value > 0.94);
        assert_eq!(remediate_voltage(&mut st, &s, &v), RemedyOutcome::Acted);
        assert_eq!(st.pending.len(), 1);
        assert_eq!(st.pending[0].kind, EventKind::VrefChange);
        assert!((st.pending[0].setpoint_pu.unwrap() - 0.97).abs() < 1e-12);
        assert!(first(&st, ViolationKind::Voltage).is_none());
    }

    fn blocked_setpoint(mvar: f64) -> AreaState {
        let mut b = BusBranch::new(2)
            .line(0, 1, 0.0, 0.2, 0.0)
            .gen(0, 100.0, 0.96)
            .load(1, 10.0, 5.0)
            .shunt(1, mvar);
        b.parts_mut().shunts[0].closed = false;
        let mut st = area(b.build());
        st.config.remedies.v_setpoint_max_pu = 0.96;
        st
    }

    #[test]
    fn shunt_that_overshoots_is_not_switched() {
        let mut st = blocked_setpoint(150.0);
        let (s, v) = first(&st, ViolationKind::Voltage).unwrap();
        assert_eq!(
            remediate_voltage(&mut st, &s, &v),
            RemedyOutcome::RollbackLoad
        );
        assert!(st.pending.is_empty());
        assert!(!st.network.shunts[0].closed);
    }

    #[test]
    fn fitting_shunt_is_switched() {
        let mut st = blocked_setpoint(10.0);
        let (s, v) = first(&st, ViolationKind::Voltage).unwrap();
        assert_eq!(remediate_voltage(&mut st, &s, &v), RemedyOutcome::Acted);
        assert!(st.network.shunts[0].closed);
        assert_eq!(st.pending.last().unwrap().kind, EventKind::ShuntClose);
        assert!(first(&st, ViolationKind::Voltage).is_none());
    }

    #[test]
    fn line_charging_overvoltage_lowers_setpoints() {
        let net = BusBranch::new(2)
            .line(0, 1, 0.0, 0.2, 1.0)
            .gen(0, 200.0, 1.04)
            .build();
        let mut st = area(net);
        let mut rounds = 0;
        while let Some((s, v)) = first(&st, ViolationKind::Voltage) {
            assert!(v.value >= 1.10 - 1e-9);
            assert_eq!(remediate_voltage(&mut st, &s, &v), RemedyOutcome::Acted);
            rounds += 1;
            assert!(rounds < 20);
        }
        assert!(rounds >= 1);
        let mut last = 1.04;
        for e in &st.pending {
            assert_eq!(e.kind, EventKind::VrefChange);
            let sp = e.setpoint_pu.unwrap();
            assert!((last - sp - 0.01).abs() < 1e-9);
            last = sp;
        }
    }

    #[test]
    fn underfrequency_redispatches_the_nearest_unit() {
        // 10 MW deficit against a 25 MW unit: one redispatch restores 60 Hz
        let net = BusBranch::new(2)
            .line(0, 1, 0.0, 0.05, 0.0)
            .gen(0, 25.0, 1.0)
            .load(1, 10.0, 0.0)
            .build();
        let mut st = area(net);
        let (s, v) = first(&st, ViolationKind::Frequency).expect("underfrequency");
        let expected = 60.0 - 10.0 * 60.0 * 0.05 / 25.0;
        assert!((s.frequency_hz - expected).abs() < 1e-2);
        assert_eq!(remediate_frequency(&mut st, &s, &v), RemedyOutcome::Acted);
        assert_eq!(st.pending.len(), 1);
        assert_eq!(st.pending[0].kind, EventKind::Redispatch);
        let after = st.solve_island(&[0, 1]).unwrap();
        assert!((after.frequency_hz - 60.0).abs() < 1e-6);
    }

    #[test]
    fn shedding_spares_critical_loads_while_others_are_served() {
        // all units at p_max and the island still short: the solve fails and one increment goes
        let mut b = BusBranch::new(2)
            .line(0, 1, 0.0, 0.05, 0.0)
            .gen(0, 50.0, 1.0)
            .load(1, 20.0, 0.0)
            .load(1, 40.0, 0.0);
        b.parts_mut().loads[0].is_critical = true;
        b.parts_mut().generators[0].p_set_mw = 50.0;
        let mut st = area(b.build());
        st.served = vec![
            Served {
                time_s: 0.0,
                load: 1,
                mw: 20.0,
            },
            Served {
                time_s: 20.0,
                load: 1,
                mw: 20.0,
            },
            Served {
                time_s: 40.0,
                load: 0,
                mw: 20.0,
            },
        ];
        assert!(matches!(
            st.solve_island(&[0, 1]),
            Err(crate::solver::SolveError::Infeasible { .. })
        ));
        assert_eq!(shed_for_deficit(&mut st, &[0, 1]), RemedyOutcome::Acted);
        assert_eq!(st.pending.len(), 1);
        let e = &st.pending[0];
        assert_eq!(
            (e.kind, e.element.as_str(), e.mw),
            (EventKind::LoadShed, "d001", Some(20.0))
        );
        assert!((st.network.loads[1].served_mw - 20.0).abs() < 1e-12);
        assert!((st.network.loads[0].served_mw - 20.0).abs() < 1e-12);
        assert!(st.solve_island(&[0, 1]).is_ok());
    }

    #[test]
    fn surplus_is_not_shed() {
        let mut b = BusBranch::new(1).gen(0, 50.0, 1.0).load(0, 5.0, 0.0);
        b.parts_mut().generators[0].p_min_mw = 20.0;
        b.parts_mut().generators[0].p_set_mw = 20.0;
        let mut st = area(b.build());
        st.served = vec![Served {
            time_s: 0.0,
            load: 0,
            mw: 5.0,
        }];
        assert_eq!(shed_for_deficit(&mut st, &[0]), RemedyOutcome::Exhausted);
        assert!(st.pending.is_empty());
    }

    #[test]
    fn open_parallel_twin_relieves_overload() {
        let mut b = BusBranch::new(2)
            .line(0, 1, 0.0, 0.1, 0.0)
            .line(0, 1, 0.0, 0.1, 0.0)
            .rating(0, 85.0)
            .gen(0, 200.0, 1.0)
            .load(1, 80.0, 0.0);
        b.parts_mut().branches[1].closed = false;
        b.parts_mut().generators[0].p_set_mw = 80.0;
        let mut st = area(b.build());
        let (s, v) = first(&st, ViolationKind::Branch).expect("overload");
        assert_eq!(v.element, "b000");
        assert_eq!(remediate_branch(&mut st, &s, &v), RemedyOutcome::Acted);
        assert!(st.network.branches[1].closed);
        assert_eq!(st.pending.last().unwrap().element, "b001");
        let after = st.solve_island(&[0, 1]).unwrap();
        let f0 = after
            .branches
            .iter()
            .find(|f| f.branch == 0)
            .unwrap()
            .p_from_mw;
        assert!((f0 - 40.0).abs() < 0.5, "{f0}");
    }

    #[test]
    fn candidate_overloading_another_line_is_passed_over() {
        // closing b002 gives the most relief but pushes b001 past its rating
        let mut b = BusBranch::new(3)
            .line(0, 1, 0.0, 0.1, 0.0)
            .line(0, 2, 0.0, 0.01, 0.0)
            .line(2, 1, 0.0, 0.01, 0.0)
            .line(0, 1, 0.0, 0.1, 0.0)
            .rating(0, 85.0)
            .rating(1, 30.0)
            .gen(0, 200.0, 1.0)
            .load(1, 80.0, 0.0);
        b.parts_mut().branches[2].closed = false;
        b.parts_mut().branches[3].closed = false;
        b.parts_mut().generators[0].p_set_mw = 80.0;
        let mut st = area(b.build());
        let (s, v) = first(&st, ViolationKind::Branch).expect("overload");
        assert_eq!(v.element, "b000");
        assert_eq!(remediate_branch(&mut st, &s, &v), RemedyOutcome::Acted);
        assert!(!st.network.branches[2].closed);
        assert!(st.network.branches[3].closed);
    }

    #[test]
    fn band_is_strict() {
        let b = Band::new(59.6, 60.4);
        assert!(!b.contains(59.6));
        assert!(b.contains(59.9));
        assert!((b.excess(59.5) - 0.1).abs() < 1e-12);
    }
}
