//! Reference computations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use blackstart::caseio::{bus_branch_network, expand_node_breaker, parse_case};
use blackstart::model::{islands, Link, Network};
use blackstart::pathfinder::{cranking_path, CrankingGraph};
use blackstart::plan::{EventKind, RestorationPlan, Stage};
use blackstart::solver::{
    dc_flows, lcdf, rank_candidates, solve_powerflow, ClosureCandidate, DcModel, PowerFlowOptions,
    SolutionState,
};
use blackstart::testkit::BusBranch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BUNDLED: &str = include_str!("../../fixtures/bundled_case.json");
pub const OVERRIDES: &str = include_str!("../../fixtures/bundled_overrides.json");
pub const TALLY: &str = include_str!("../../fixtures/bundled_case.tally.json");

pub fn bundled() -> Network {
    expand_node_breaker(&parse_case(BUNDLED).unwrap()).unwrap()
}

/// Connected random mesh: a spanning tree plus up to `extra` chords.
pub fn random_mesh(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> BusBranch {
    let mut b = BusBranch::new(n);
    for k in 1..n {
        let parent = rng.gen_range(0..k);
        b = b.line(
            parent,
            k,
            rng.gen_range(0.0..0.02),
            rng.gen_range(0.05..0.3),
            rng.gen_range(0.0..0.05),
        );
    }
    for _ in 0..extra {
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if i != j {
            b = b.line(
                i,
                j,
                rng.gen_range(0.0..0.02),
                rng.gen_range(0.05..0.3),
                rng.gen_range(0.0..0.05),
            );
        }
    }
    b
}

/// Cheapest simple path from `target` to any energized node, by enumeration.
pub fn min_simple_path(
    adj: &[Vec<(usize, f64)>],
    energized: &[bool],
    target: usize,
) -> Option<f64> {
    fn walk(
        adj: &[Vec<(usize, f64)>],
        energized: &[bool],
        v: usize,
        cost: f64,
        seen: &mut [bool],
        best: &mut Option<f64>,
    ) {
        if energized[v] {
            *best = Some(best.map_or(cost, |b| b.min(cost)));
            return;
        }
        for &(w, c) in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                walk(adj, energized, w, cost + c, seen, best);
                seen[w] = false;
            }
        }
    }
    let mut seen = vec![false; adj.len()];
    seen[target] = true;
    let mut best = None;
    walk(adj, energized, target, 0.0, &mut seen, &mut best);
    best
}

/// Dijkstra against enumeration on `count` random graphs of at most 10 nodes.
pub fn dijkstra_agreement(seed: u64, count: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..count {
        let n = rng.gen_range(2..=10);
        let mut edges = Vec::new();
        let mut adj = vec![Vec::new(); n];
        for a in 0..n {
            for b in a + 1..n {
                if rng.gen_bool(0.35) {
                    let w = if rng.gen_bool(0.2) {
                        1e-6
                    } else {
                        rng.gen_range(0.01..1.0)
                    };
                    adj[a].push((b, w));
                    adj[b].push((a, w));
                    edges.push((a, b, Link::Branch(edges.len()), w));
                }
            }
        }
        let mut energized = vec![false; n];
        for _ in 0..rng.gen_range(1..3) {
            energized[rng.gen_range(0..n)] = true;
        }
        let target = rng.gen_range(0..n);
        let names: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        let graph = CrankingGraph::from_edges(names, n, edges.clone());
        match (
            cranking_path(&graph, target, &energized),
            min_simple_path(&adj, &energized, target),
        ) {
            (Ok(path), Some(best)) => {
                if (path.total_cost - best).abs() > 1e-12 * (1.0 + best) {
                    return Err(format!("graph {trial}: cost {} vs {best}", path.total_cost));
                }
                let sum: f64 = path
                    .links
                    .iter()
                    .map(|l| match l {
                        Link::Branch(k) => edges[*k].3,
                        Link::Breaker(_) => f64::NAN,
                    })
                    .sum();
                if (sum - path.total_cost).abs() > 1e-12
                    || !energized[path.source()]
                    || path.target() != target
                {
                    return Err(format!("graph {trial}: malformed path {path:?}"));
                }
            }
            (Err(_), None) => {}
            (got, want) => return Err(format!("graph {trial}: {got:?} vs enumeration {want:?}")),
        }
    }
    Ok(())
}

/// Closed-form LCDF against closing each candidate and re-solving the DC
/// network. Returns the number of candidates checked and the worst error
/// in p.u.
pub fn lcdf_agreement(seed: u64, networks: usize) -> Result<(usize, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut worst) = (0, 0.0f64);
    for trial in 0..networks {
        let n = rng.gen_range(3..10);
        let mut net = random_mesh(&mut rng, n, 4).gen(0, 500.0, 1.0).build();
        let nb = net.branches.len();
        let tree = n - 1;
        // chords start open and are the closure candidates
        for k in tree..nb {
            net.branches[k].closed = false;
        }
        let mut inj: Vec<(usize, f64)> = (1..n).map(|i| (i, -rng.gen_range(5.0..60.0))).collect();
        inj.push((0, -inj.iter().map(|x| x.1).sum::<f64>()));
        let all: Vec<usize> = (0..n).collect();
        let model = DcModel::new(&net, &all, &inj).map_err(|e| e.to_string())?;
        let monitored = rng.gen_range(0..tree);
        let cands: Vec<ClosureCandidate> = (tree..nb)
            .map(|k| ClosureCandidate {
                branch: k,
                from_node: net.branches[k].from,
                to_node: net.branches[k].to,
            })
            .collect();
        let flow = |net: &Network| -> f64 {
            dc_flows(net, &all, &inj)
                .unwrap()
                .into_iter()
                .find(|f| f.0 == monitored)
                .unwrap()
                .1
        };
        let f0 = flow(&net);
        let mut oracle = Vec::new();
        for c in &cands {
            let mut closed = net.clone();
            closed.branches[c.branch].closed = true;
            let f1 = flow(&closed);
            let l = lcdf(&net, &model, monitored, *c).map_err(|e| e.to_string())?;
            let err = ((l.delta_monitored_mw - (f1 - f0)) / net.base_mva)
                .abs()
                .max(((l.relief_mw - (f1.abs() - f0.abs())) / net.base_mva).abs());
            worst = worst.max(err);
            if err > 1e-9 {
                return Err(format!(
                    "network {trial}, candidate {}: error {err:e} p.u.",
                    net.branches[c.branch].id
                ));
            }
            oracle.push((f1.abs() - f0.abs(), net.branches[c.branch].id.clone()));
            checked += 1;
        }
        oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let ranked: Vec<&str> = rank_candidates(&net, &model, monitored, &cands)
            .iter()
            .map(|(c, _)| net.branches[c.branch].id.as_str())
            .collect();
        let expected: Vec<&str> = oracle.iter().map(|o| o.1.as_str()).collect();
        // positions may only differ between candidates whose reliefs tie
        if ranked.len() != expected.len() {
            return Err(format!(
                "network {trial}: {} ranked of {}",
                ranked.len(),
                expected.len()
            ));
        }
        for (a, b) in ranked.iter().zip(&expected) {
            let relief = |id: &str| oracle.iter().find(|o| o.1 == id).unwrap().0;
            if a != b && (relief(a) - relief(b)).abs() > 1e-9 {
                return Err(format!(
                    "network {trial}: ranking {ranked:?} vs {expected:?}"
                ));
            }
        }
    }
    Ok((checked, worst))
}

/// Flow change on the monitored twin when its parallel partner closes, as a fraction.
pub fn twin_flow_change() -> f64 {
    let mut net = BusBranch::new(2)
        .line(0, 1, 0.0, 0.1, 0.0)
        .line(0, 1, 0.0, 0.1, 0.0)
        .gen(0, 200.0, 1.0)
        .build();
    net.branches[1].closed = false;
    let model = DcModel::new(&net, &[0, 1], &[(0, 80.0), (1, -80.0)]).unwrap();
    let l = lcdf(
        &net,
        &model,
        0,
        ClosureCandidate {
            branch: 1,
            from_node: 0,
            to_node: 1,
        },
    )
    .unwrap();
    l.delta_monitored_mw / l.monitored_flow_mw
}

/// Frequency at which the clamped droop responses cover `delta` MW, by bisection.
pub fn droop_root(net: &Network, delta: f64) -> f64 {
    let f0 = net.f0_hz;
    let response = |f: f64| -> f64 {
        net.generators
            .iter()
            .filter(|g| g.online)
            .map(|g| {
                let p = g.p_set_mw + g.stiffness() * (f0 - f) / f0;
                p.clamp(g.p_min_mw, g.p_max_mw) - g.p_set_mw
            })
            .sum()
    };
    let (mut lo, mut hi) = (f0 - 30.0, f0 + 30.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if response(mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Two equal 100 MW units with 5 % droop on a lossless line.
pub fn two_unit_fixture() -> Network {
    BusBranch::new(2)
        .line(0, 1, 0.0, 0.1, 0.0)
        .gen(0, 100.0, 1.0)
        .gen(1, 100.0, 1.0)
        .build()
}

/// One bus at `kv` carrying `n` loads, fed over one line from a unit bus.
pub fn star_case(kv: f64, n: usize) -> String {
    let loads: Vec<String> = (0..n)
        .map(|i| format!(r#"{{"id": "D{i}", "bus": "X", "p_mw": 1.0, "q_mvar": 0.0}}"#))
        .collect();
    format!(
        r#"{{"format_version": 1, "base_mva": 100.0,
            "buses": [{{"id": "X", "nominal_kv": {kv}}}, {{"id": "Y", "nominal_kv": {kv}}}],
            "branches": [{{"id": "XY", "from_bus": "X", "to_bus": "Y", "r_pu": 0.01, "x_pu": 0.1, "rating_mva": 100.0}}],
            "generators": [{{"id": "G", "bus": "Y", "p_max_mw": 100.0, "q_max_mvar": 50.0, "q_min_mvar": -50.0}}],
            "loads": [{}]}}"#,
        loads.join(",")
    )
}

pub fn breakers_at(net: &Network, bus: &str) -> usize {
    net.breakers
        .iter()
        .filter(|b| net.nodes[b.from].bus == bus)
        .count()
}

/// Breaker count at the loaded bus of `star_case` against the template formula.
pub fn template_counts() -> Result<(), String> {
    for n in 1..=8usize {
        // the loads plus the line end
        let elements = n + 1;
        for (kv, expected) in [
            (345.0, 2 * elements),
            (230.0, 2 * elements),
            (138.0, 3 * elements.div_ceil(2)),
            (115.0, 3 * elements.div_ceil(2)),
            (69.0, elements),
        ] {
            let net = expand_node_breaker(&parse_case(&star_case(kv, n)).unwrap())
                .map_err(|e| e.to_string())?;
            let got = breakers_at(&net, "X");
            if got != expected {
                return Err(format!(
                    "{elements} elements at {kv} kV: {got} breakers, expected {expected}"
                ));
            }
        }
    }
    Ok(())
}

pub fn polar(s: &SolutionState, node: usize) -> (f64, f64) {
    let k = s.map.nodes.binary_search(&node).unwrap();
    (s.v_pu[k], s.angle_rad[k])
}

/// Solves the fully closed node-breaker and bus-branch forms of a case and
/// returns the largest voltage, angle or unit output difference in p.u.
pub fn expansion_flow_gap(case_text: &str) -> Result<f64, String> {
    let case = parse_case(case_text).map_err(|e| e.to_string())?;
    let nb = expand_node_breaker(&case).map_err(|e| e.to_string())?;
    let bb = bus_branch_network(&case).map_err(|e| e.to_string())?;
    let opts = PowerFlowOptions::default();
    let mut worst = 0.0f64;
    let (big, small) = (islands(&nb), islands(&bb));
    if big.iter().filter(|i| i.energized).count() != small.iter().filter(|i| i.energized).count() {
        return Err("island counts differ".into());
    }
    for (big, small) in big
        .iter()
        .filter(|i| i.energized)
        .zip(small.iter().filter(|i| i.energized))
    {
        let s_nb = solve_powerflow(&nb, &big.nodes, &opts).map_err(|e| e.to_string())?;
        let s_bb = solve_powerflow(&bb, &small.nodes, &opts).map_err(|e| e.to_string())?;
        if s_nb.max_mismatch_pu > 1e-8 || s_bb.max_mismatch_pu > 1e-8 {
            return Err(format!(
                "mismatch {:e} / {:e}",
                s_nb.max_mismatch_pu, s_bb.max_mismatch_pu
            ));
        }
        let by_bus: BTreeMap<&str, (f64, f64)> = small
            .nodes
            .iter()
            .map(|&v| (bb.nodes[v].bus.as_str(), polar(&s_bb, v)))
            .collect();
        for &v in &big.nodes {
            let (vm, va) = by_bus[nb.nodes[v].bus.as_str()];
            let (m, a) = polar(&s_nb, v);
            worst = worst.max((m - vm).abs()).max((a - va).abs());
        }
        for (a, b) in s_nb.generators.iter().zip(&s_bb.generators) {
            worst = worst
                .max(((a.p_mw - b.p_mw) / nb.base_mva).abs())
                .max(((a.q_mvar - b.q_mvar) / nb.base_mva).abs());
        }
    }
    Ok(worst)
}

/// Per subarea, no non-critical increment comes before the last critical one.
pub fn check_stage_discipline(
    net: &Network,
    plan: &RestorationPlan,
    parallel: bool,
) -> Result<(), String> {
    let mut last_cl: BTreeMap<Option<usize>, usize> = BTreeMap::new();
    let mut first_ncl: BTreeMap<Option<usize>, usize> = BTreeMap::new();
    for (k, e) in plan
        .events()
        .enumerate()
        .filter(|(_, e)| e.kind == EventKind::LoadIncrement)
    {
        let l = &net.loads[net.load_index(&e.element).unwrap()];
        let area = if parallel {
            net.zone_of_node(l.node)
        } else {
            None
        };
        if l.is_critical {
            last_cl.insert(area, k);
        } else {
            first_ncl.entry(area).or_insert(k);
        }
    }
    for (area, cl) in &last_cl {
        if let Some(ncl) = first_ncl.get(area) {
            if ncl < cl {
                return Err(format!(
                    "area {area:?}: non-critical event {ncl} before critical event {cl}"
                ));
            }
        }
    }
    Ok(())
}

/// Non-blackstart units start in Stage 1 only when blackstart capacity falls short.
pub fn check_stage1_units(net: &Network, plan: &RestorationPlan) -> Result<(), String> {
    for s in plan
        .steps
        .iter()
        .filter(|s| s.stage == Stage::CriticalResources)
    {
        for e in s.events.iter().filter(|e| e.kind == EventKind::GenOnline) {
            let g = &net.generators[net.generator_index(&e.element).unwrap()];
            if g.is_blackstart {
                continue;
            }
            let scope = |node: usize| {
                s.zone.is_none() || net.zone_of_node(node) == net.zone_of_node(g.node)
            };
            let bsu: f64 = net
                .generators
                .iter()
                .filter(|u| u.is_blackstart && u.usable() && scope(u.node))
                .map(|u| u.p_max_mw)
                .sum();
            let cl: f64 = net
                .loads
                .iter()
                .filter(|l| l.is_critical && l.available && scope(l.node))
                .map(|l| l.p_mw)
                .sum();
            if bsu >= cl {
                return Err(format!(
                    "{} started in stage 1 with {bsu} MW blackstart for {cl} MW critical",
                    e.element
                ));
            }
        }
    }
    Ok(())
}

/// A critical load is shed only when no non-critical MW is being served.
pub fn check_critical_protection(net: &Network, plan: &RestorationPlan) -> Result<(), String> {
    let mut served = vec![0.0f64; net.loads.len()];
    for e in plan.events() {
        let sign = match e.kind {
            EventKind::LoadIncrement => 1.0,
            EventKind::LoadShed => -1.0,
            _ => continue,
        };
        let l = net.load_index(&e.element).unwrap();
        if sign < 0.0 && net.loads[l].is_critical {
            let ncl: f64 = (0..served.len())
                .filter(|&i| !net.loads[i].is_critical)
                .map(|i| served[i])
                .sum();
            if ncl > 1e-9 {
                return Err(format!(
                    "critical {} shed at {} s with {ncl} MW non-critical served",
                    e.element, e.time_s
                ));
            }
        }
        served[l] += sign * e.mw.unwrap_or(0.0);
    }
    Ok(())
}

/// LCDF on the fully closed bundled case: every line whose opening keeps the
/// system connected becomes the candidate, and every other line is monitored.
pub fn bundled_lcdf_agreement() -> Result<(usize, f64), String> {
    let closed = bundled();
    let nodes: Vec<usize> = (0..closed.nodes.len()).collect();
    let mut inj: Vec<(usize, f64)> = Vec::new();
    inj.extend(
        closed
            .generators
            .iter()
            .filter(|g| g.online)
            .map(|g| (g.node, g.p_set_mw)),
    );
    inj.extend(closed.loads.iter().map(|l| (l.node, -l.served_mw)));
    let lines: Vec<usize> = (0..closed.branches.len())
        .filter(|&b| !closed.branches[b].zero_impedance)
        .collect();
    let flows = |net: &Network| -> BTreeMap<usize, f64> {
        dc_flows(net, &nodes, &inj).unwrap().into_iter().collect()
    };
    let after = flows(&closed);
    let (mut checked, mut worst) = (0, 0.0f64);
    for &k in &lines {
        let mut open = closed.clone();
        open.branches[k].closed = false;
        if islands(&open).len() != 1 {
            continue;
        }
        let model = DcModel::new(&open, &nodes, &inj).map_err(|e| e.to_string())?;
        let before = flows(&open);
        let c = ClosureCandidate {
            branch: k,
            from_node: open.branches[k].from,
            to_node: open.branches[k].to,
        };
        for &m in lines.iter().filter(|&&m| m != k) {
            let l = lcdf(&open, &model, m, c).map_err(|e| e.to_string())?;
            let err = ((l.delta_monitored_mw - (after[&m] - before[&m])) / open.base_mva).abs();
            worst = worst.max(err);
            if err > 1e-9 {
                return Err(format!(
                    "closing {} on {}: error {err:e} p.u.",
                    open.branches[k].id, open.branches[m].id
                ));
            }
            checked += 1;
        }
    }
    Ok((checked, worst))
}
