//! Quasi-steady-state electrical engine for one island.
//!
//! Closed breakers and zero-impedance links are merged into supernodes
//! ("buses") before anything is assembled. The AC power flow is a polar
//! Newton-Raphson in which the island's power imbalance is an extra unknown,
//! shared by the online units in proportion to their governor stiffness
//! `s_rating / droop`. Units that would leave `[p_min, p_max]` are clamped and
//! drop out of the sharing; the remaining shared amount sets the steady-state
//! frequency through the droop characteristic.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Network, UnionFind};
use crate::plan::IslandSummary;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch_pu:.3e} p.u. at {worst_node})")]
    NonConvergence {
        iterations: usize,
        mismatch_pu: f64,
        worst_node: String,
    },
    #[error("all units at their limits with {mismatch_mw:.3} MW left unbalanced")]
    Infeasible { mismatch_mw: f64 },
    #[error("island has no online generator")]
    NoGenerator,
    #[error("no responsive governor capacity for a {delta_p_mw:.3} MW imbalance")]
    FrequencyCollapse { delta_p_mw: f64 },
    #[error("singular network matrix (island not connected)")]
    Singular,
    #[error("candidate endpoint `{0}` is outside the island")]
    OutsideIsland(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowOptions {
    pub tolerance_pu: f64,
    pub max_iterations: usize,
    pub enforce_q_limits: bool,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            tolerance_pu: 1e-8,
            max_iterations: 25,
            enforce_q_limits: true,
        }
    }
}

/// Island nodes merged over closed zero-impedance connections.
#[derive(Clone, Debug, PartialEq)]
pub struct BusMap {
    /// Island nodes, ascending.
    pub nodes: Vec<usize>,
    /// Bus of each entry of `nodes`.
    pub node_bus: Vec<usize>,
    /// Member nodes of each bus, ascending.
    pub buses: Vec<Vec<usize>>,
}

impl BusMap {
    pub fn new(network: &Network, island: &[usize]) -> BusMap {
        let mut nodes = island.to_vec();
        nodes.sort_unstable();
        nodes.dedup();
        let pos = |n: usize| nodes.binary_search(&n).ok();
        let mut uf = UnionFind::new(nodes.len());
        for b in network.breakers.iter().filter(|b| b.closed) {
            if let (Some(a), Some(c)) = (pos(b.from), pos(b.to)) {
                uf.union(a, c);
            }
        }
        for b in network
            .branches
            .iter()
            .filter(|b| b.closed && b.zero_impedance)
        {
            if let (Some(a), Some(c)) = (pos(b.from), pos(b.to)) {
                uf.union(a, c);
            }
        }
        let mut root_bus = vec![usize::MAX; nodes.len()];
        let mut node_bus = vec![0; nodes.len()];
        let mut buses: Vec<Vec<usize>> = Vec::new();
        for i in 0..nodes.len() {
            let r = uf.find(i);
            if root_bus[r] == usize::MAX {
                root_bus[r] = buses.len();
                buses.push(Vec::new());
            }
            node_bus[i] = root_bus[r];
            buses[root_bus[r]].push(nodes[i]);
        }
        BusMap {
            nodes,
            node_bus,
            buses,
        }
    }

    pub fn bus_of(&self, node: usize) -> Option<usize> {
        self.nodes
            .binary_search(&node)
            .ok()
            .map(|i| self.node_bus[i])
    }

    pub fn len(&self) -> usize {
        self.buses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buses.is_empty()
    }
}

/// Dense complex bus admittance matrix of one island.
#[derive(Clone, Debug)]
pub struct AdmittanceMatrix {
    pub map: BusMap,
    pub y: DMatrix<Complex64>,
}

impl AdmittanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.y[(i, j)]
    }

    /// Symmetry and row-sum structure: each diagonal equals minus its
    /// off-diagonals plus the shunt and charging terms at that bus.
    pub fn check_structure(&self, network: &Network) -> bool {
        let n = self.map.len();
        let mut shunt = vec![Complex64::new(0.0, 0.0); n];
        for br in network
            .branches
            .iter()
            .filter(|b| b.closed && !b.zero_impedance)
        {
            if let (Some(i), Some(j)) = (self.map.bus_of(br.from), self.map.bus_of(br.to)) {
                shunt[i] += Complex64::new(0.0, br.b_pu / 2.0);
                shunt[j] += Complex64::new(0.0, br.b_pu / 2.0);
            }
        }
        for s in network.shunts.iter().filter(|s| s.closed) {
            if let Some(i) = self.map.bus_of(s.node) {
                shunt[i] += Complex64::new(0.0, s.mvar_nominal / network.base_mva);
            }
        }
        for i in 0..n {
            let mut row = Complex64::new(0.0, 0.0);
            for j in 0..n {
                if (self.y[(i, j)] - self.y[(j, i)]).norm() > 1e-9 {
                    return false;
                }
                row += self.y[(i, j)];
            }
            if (row - shunt[i]).norm() > 1e-8 * (1.0 + self.y[(i, i)].norm()) {
                return false;
            }
        }
        true
    }
}

/// π-model assembly from closed branches and closed shunts inside the island.
pub fn build_ybus(network: &Network, island: &[usize]) -> AdmittanceMatrix {
    let map = BusMap::new(network, island);
    let n = map.len();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for br in network
        .branches
        .iter()
        .filter(|b| b.closed && !b.zero_impedance)
    {
        let (Some(i), Some(j)) = (map.bus_of(br.from), map.bus_of(br.to)) else {
            continue;
        };
        let ys = Complex64::new(br.r_pu, br.x_pu).inv();
        let ych = Complex64::new(0.0, br.b_pu / 2.0);
        if i == j {
            y[(i, i)] += ych * 2.0;
            continue;
        }
        y[(i, i)] += ys + ych;
        y[(j, j)] += ys + ych;
        y[(i, j)] -= ys;
        y[(j, i)] -= ys;
    }
    for s in network.shunts.iter().filter(|s| s.closed) {
        if let Some(i) = map.bus_of(s.node) {
            y[(i, i)] += Complex64::new(0.0, s.mvar_nominal / network.base_mva);
        }
    }
    AdmittanceMatrix { map, y }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorOutput {
    pub generator: usize,
    pub p_mw: f64,
    pub q_mvar: f64,
    /// Held at a P limit instead of following the governor.
    pub clamped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchFlow {
    pub branch: usize,
    pub p_from_mw: f64,
    pub q_from_mvar: f64,
    pub p_to_mw: f64,
    pub q_to_mvar: f64,
    pub loading_pct: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolutionState {
    pub map: BusMap,
    /// Per island node (aligned with `map.nodes`).
    pub v_pu: Vec<f64>,
    pub angle_rad: Vec<f64>,
    pub generators: Vec<GeneratorOutput>,
    pub branches: Vec<BranchFlow>,
    pub load_mw: f64,
    pub load_mvar: f64,
    pub losses_mw: f64,
    pub frequency_hz: f64,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch_pu: f64,
    pub reference_generator: usize,
    /// Per-bus complex power mismatch at the solution, p.u.
    pub bus_mismatch_pu: Vec<f64>,
}

impl SolutionState {
    pub fn voltage(&self, node: usize) -> Option<f64> {
        self.map
            .nodes
            .binary_search(&node)
            .ok()
            .map(|i| self.v_pu[i])
    }

    pub fn gen_mw(&self) -> f64 {
        self.generators.iter().map(|g| g.p_mw).sum()
    }

    pub fn gen_mvar(&self) -> f64 {
        self.generators.iter().map(|g| g.q_mvar).sum()
    }

    /// Heaviest branch as (branch, loading %).
    pub fn max_loading(&self) -> Option<(usize, f64)> {
        self.branches
            .iter()
            .map(|f| (f.branch, f.loading_pct))
            .fold(None, |best, cur| match best {
                Some((_, l)) if l >= cur.1 => best,
                _ => Some(cur),
            })
    }

    pub fn summary(&self, network: &Network) -> IslandSummary {
        let (v_min, v_max) = self
            .v_pu
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let heaviest = self.max_loading();
        IslandSummary {
            island: network.nodes[self.map.nodes[0]].id.clone(),
            gen_mw: self.gen_mw(),
            gen_mvar: self.gen_mvar(),
            load_mw: self.load_mw,
            load_mvar: self.load_mvar,
            v_min_pu: v_min,
            v_max_pu: v_max,
            frequency_hz: self.frequency_hz,
            max_loading_pct: heaviest.map_or(0.0, |(_, l)| l),
            max_loading_branch: heaviest.map(|(b, _)| network.branches[b].id.clone()),
        }
    }

    /// Writes unit outputs back into the network.
    pub fn store(&self, network: &mut Network) {
        for g in &self.generators {
            network.generators[g.generator].p_out_mw = g.p_mw;
            network.generators[g.generator].q_mvar = g.q_mvar;
        }
    }
}

/// Reference unit: largest `p_max` online, ties to the smaller id.
pub fn reference_generator(network: &Network, gens: &[usize]) -> Option<usize> {
    gens.iter()
        .copied()
        .filter(|&g| network.generators[g].online)
        .max_by(|&a, &b| {
            let (ga, gb) = (&network.generators[a], &network.generators[b]);
            ga.p_max_mw
                .total_cmp(&gb.p_max_mw)
                .then_with(|| gb.id.cmp(&ga.id))
        })
}

/// Online units attached to island nodes.
fn island_generators(network: &Network, map: &BusMap) -> Vec<usize> {
    network
        .generators
        .iter()
        .enumerate()
        .filter(|(_, g)| g.online && map.bus_of(g.node).is_some())
        .map(|(i, _)| i)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum BusType {
    Reference,
    Pv,
    Pq,
}

struct FlowProblem<'a> {
    ybus: &'a AdmittanceMatrix,
    kind: Vec<BusType>,
    /// Fixed active injection per bus (p.u.): fixed units minus load.
    p_fixed: Vec<f64>,
    /// Share of the distributed imbalance per bus.
    share: Vec<f64>,
    q_fixed: Vec<f64>,
}

impl FlowProblem<'_> {
    fn calc(&self, v: &[f64], th: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = v.len();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            for k in 0..n {
                let y = self.ybus.y[(i, k)];
                if y.re == 0.0 && y.im == 0.0 {
                    continue;
                }
                let (s, c) = (th[i] - th[k]).sin_cos();
                p[i] += v[i] * v[k] * (y.re * c + y.im * s);
                q[i] += v[i] * v[k] * (y.re * s - y.im * c);
            }
        }
        (p, q)
    }

    fn index(&self) -> (Vec<usize>, Vec<usize>) {
        let theta: Vec<usize> = (0..self.kind.len())
            .filter(|&i| self.kind[i] != BusType::Reference)
            .collect();
        let vmag: Vec<usize> = (0..self.kind.len())
            .filter(|&i| self.kind[i] == BusType::Pq)
            .collect();
        (theta, vmag)
    }

    fn mismatch(&self, v: &[f64], th: &[f64], delta: f64) -> Vec<f64> {
        let (p, q) = self.calc(v, th);
        let n = v.len();
        let mut f = Vec::with_capacity(2 * n);
        for i in 0..n {
            f.push(p[i] - self.p_fixed[i] - self.share[i] * delta);
        }
        for i in (0..n).filter(|&i| self.kind[i] == BusType::Pq) {
            f.push(q[i] - self.q_fixed[i]);
        }
        f
    }

    fn jacobian(&self, v: &[f64], th: &[f64], distributed: bool) -> DMatrix<f64> {
        let n = v.len();
        let (p, q) = self.calc(v, th);
        let (theta_idx, v_idx) = self.index();
        let cols = theta_idx.len() + v_idx.len() + usize::from(distributed);
        let rows = n + v_idx.len();
        let mut j = DMatrix::zeros(rows, cols);
        let g = |i: usize, k: usize| self.ybus.y[(i, k)].re;
        let b = |i: usize, k: usize| self.ybus.y[(i, k)].im;
        let q_rows: Vec<usize> = v_idx.clone();
        let row_of = |eq: usize, is_q: bool| {
            if is_q {
                n + q_rows.iter().position(|&x| x == eq).unwrap()
            } else {
                eq
            }
        };
        for (ci, &k) in theta_idx.iter().enumerate() {
            for i in 0..n {
                let (dp, dq) = if i == k {
                    (-q[i] - b(i, i) * v[i] * v[i], p[i] - g(i, i) * v[i] * v[i])
                } else {
                    let (s, c) = (th[i] - th[k]).sin_cos();
                    (
                        v[i] * v[k] * (g(i, k) * s - b(i, k) * c),
                        -v[i] * v[k] * (g(i, k) * c + b(i, k) * s),
                    )
                };
                j[(row_of(i, false), ci)] = dp;
                if self.kind[i] == BusType::Pq {
                    j[(row_of(i, true), ci)] = dq;
                }
            }
        }
        let off = theta_idx.len();
        for (ci, &k) in v_idx.iter().enumerate() {
            for i in 0..n {
                let (dp, dq) = if i == k {
                    (p[i] / v[i] + g(i, i) * v[i], q[i] / v[i] - b(i, i) * v[i])
                } else {
                    let (s, c) = (th[i] - th[k]).sin_cos();
                    (
                        v[i] * (g(i, k) * c + b(i, k) * s),
                        v[i] * (g(i, k) * s - b(i, k) * c),
                    )
                };
                j[(row_of(i, false), off + ci)] = dp;
                if self.kind[i] == BusType::Pq {
                    j[(row_of(i, true), off + ci)] = dq;
                }
            }
        }
        if distributed {
            let c = cols - 1;
            for i in 0..n {
                j[(i, c)] = -self.share[i];
            }
        }
        j
    }

    /// Newton iterations in place; returns (iterations, final max mismatch).
    fn newton(
        &self,
        v: &mut [f64],
        th: &mut [f64],
        delta: &mut f64,
        distributed: bool,
        opts: &PowerFlowOptions,
    ) -> Result<(usize, f64), (usize, f64, usize)> {
        let (theta_idx, v_idx) = self.index();
        for it in 0..=opts.max_iterations {
            let f = self.mismatch(v, th, *delta);
            let (worst, norm) = f.iter().enumerate().fold((0, 0.0f64), |(wi, w), (i, x)| {
                if x.abs() > w {
                    (i, x.abs())
                } else {
                    (wi, w)
                }
            });
            if norm <= opts.tolerance_pu {
                return Ok((it, norm));
            }
            if it == opts.max_iterations || !norm.is_finite() {
                return Err((it, norm, worst % v.len()));
            }
            let jac = self.jacobian(v, th, distributed);
            let rhs = -DVector::from_vec(f);
            let dx = if jac.nrows() == jac.ncols() {
                jac.lu().solve(&rhs)
            } else {
                // over-determined when nothing can follow the imbalance
                let jt = jac.transpose();
                (&jt * &jac).lu().solve(&(&jt * rhs))
            };
            let Some(dx) = dx else {
                return Err((it, norm, worst % v.len()));
            };
            for (ci, &k) in theta_idx.iter().enumerate() {
                th[k] += dx[ci];
            }
            let off = theta_idx.len();
            for (ci, &k) in v_idx.iter().enumerate() {
                v[k] += dx[off + ci];
            }
            if distributed {
                *delta += dx[dx.len() - 1];
            }
        }
        unreachable!()
    }
}

/// AC power flow of the island holding `island` nodes, from a flat start.
pub fn solve_powerflow(
    network: &Network,
    island: &[usize],
    opts: &PowerFlowOptions,
) -> Result<SolutionState, SolveError> {
    let ybus = build_ybus(network, island);
    let map = &ybus.map;
    let nb = map.len();
    let base = network.base_mva;
    let gens = island_generators(network, map);
    let reference = reference_generator(network, &gens).ok_or(SolveError::NoGenerator)?;
    let ref_bus = map.bus_of(network.generators[reference].node).unwrap();

    let mut load_p = vec![0.0; nb];
    let mut load_q = vec![0.0; nb];
    let (mut load_mw, mut load_mvar) = (0.0, 0.0);
    for l in network
        .loads
        .iter()
        .filter(|l| l.served_mw > 0.0 || l.served_mvar != 0.0)
    {
        if let Some(b) = map.bus_of(l.node) {
            load_p[b] += l.served_mw / base;
            load_q[b] += l.served_mvar / base;
            load_mw += l.served_mw;
            load_mvar += l.served_mvar;
        }
    }
    let gen_bus: Vec<usize> = gens
        .iter()
        .map(|&g| map.bus_of(network.generators[g].node).unwrap())
        .collect();

    let mut kind = vec![BusType::Pq; nb];
    let mut v_set = vec![1.0; nb];
    for (idx, &g) in gens.iter().enumerate().rev() {
        let b = gen_bus[idx];
        kind[b] = BusType::Pv;
        v_set[b] = network.generators[g].v_setpoint_pu;
    }
    kind[ref_bus] = BusType::Reference;
    v_set[ref_bus] = network.generators[reference].v_setpoint_pu;
    let mut q_fixed: Vec<f64> = load_q.iter().map(|q| -q).collect();

    // P-limit state per unit: None = responsive, Some(mw) = held
    let mut held: Vec<Option<f64>> = vec![None; gens.len()];
    let mut iterations = 0;
    let mut v = vec![1.0; nb];
    let mut th = vec![0.0; nb];
    let mut delta = 0.0;
    let mut q_rounds = 0;
    loop {
        for b in 0..nb {
            if kind[b] != BusType::Pq {
                v[b] = v_set[b];
            }
        }
        let stiff_total: f64 = gens
            .iter()
            .zip(&held)
            .filter(|(_, h)| h.is_none())
            .map(|(&g, _)| network.generators[g].stiffness())
            .sum();
        let distributed = stiff_total > 0.0;
        let mut p_fixed: Vec<f64> = load_p.iter().map(|p| -p).collect();
        let mut share = vec![0.0; nb];
        for (idx, &g) in gens.iter().enumerate() {
            let gen = &network.generators[g];
            let b = gen_bus[idx];
            match held[idx] {
                Some(mw) => p_fixed[b] += mw / base,
                None => {
                    p_fixed[b] += gen.p_set_mw / base;
                    share[b] += gen.stiffness() / stiff_total;
                }
            }
        }
        if !distributed {
            delta = 0.0;
        }
        let problem = FlowProblem {
            ybus: &ybus,
            kind: kind.clone(),
            p_fixed,
            share,
            q_fixed: q_fixed.clone(),
        };
        let (its, _) = problem
            .newton(&mut v, &mut th, &mut delta, distributed, opts)
            .map_err(|(it, mismatch, worst)| {
                if !distributed {
                    SolveError::Infeasible {
                        mismatch_mw: mismatch * base,
                    }
                } else {
                    SolveError::NonConvergence {
                        iterations: iterations + it,
                        mismatch_pu: mismatch,
                        worst_node: network.nodes[map.buses[worst][0]].id.clone(),
                    }
                }
            })?;
        iterations += its;

        // governor limits
        let mut newly_held = false;
        for (idx, &g) in gens.iter().enumerate() {
            if held[idx].is_some() {
                continue;
            }
            let gen = &network.generators[g];
            let p = gen.p_set_mw + gen.stiffness() / stiff_total * delta * base;
            if p > gen.p_max_mw + 1e-9 {
                held[idx] = Some(gen.p_max_mw);
                newly_held = true;
            } else if p < gen.p_min_mw - 1e-9 {
                held[idx] = Some(gen.p_min_mw);
                newly_held = true;
            }
        }
        if newly_held {
            continue;
        }

        // reactive limits at PV buses
        let (_, qcalc) = problem.calc(&v, &th);
        let mut switched = false;
        if opts.enforce_q_limits && q_rounds < 10 {
            for b in 0..nb {
                if kind[b] != BusType::Pv {
                    continue;
                }
                let (qmin, qmax) = gens.iter().zip(&gen_bus).filter(|(_, &gb)| gb == b).fold(
                    (0.0, 0.0),
                    |(lo, hi), (&g, _)| {
                        (
                            lo + network.generators[g].q_min_mvar,
                            hi + network.generators[g].q_max_mvar,
                        )
                    },
                );
                let qg = (qcalc[b] + load_q[b]) * base;
                if qg > qmax + 1e-6 || qg < qmin - 1e-6 {
                    kind[b] = BusType::Pq;
                    q_fixed[b] = qg.clamp(qmin, qmax) / base - load_q[b];
                    switched = true;
                }
            }
        }
        if switched {
            q_rounds += 1;
            continue;
        }
        break;
    }

    // results
    let (pcalc, qcalc) = {
        let n = nb;
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        let vc: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(v[i], th[i])).collect();
        for i in 0..n {
            let mut cur = Complex64::new(0.0, 0.0);
            for k in 0..n {
                cur += ybus.y[(i, k)] * vc[k];
            }
            let s = vc[i] * cur.conj();
            p[i] = s.re;
            q[i] = s.im;
        }
        (p, q)
    };
    let stiff_total: f64 = gens
        .iter()
        .zip(&held)
        .filter(|(_, h)| h.is_none())
        .map(|(&g, _)| network.generators[g].stiffness())
        .sum();
    let mut outputs: Vec<GeneratorOutput> = gens
        .iter()
        .enumerate()
        .map(|(idx, &g)| {
            let gen = &network.generators[g];
            let (p, clamped) = match held[idx] {
                Some(mw) => (mw, true),
                None => (
                    gen.p_set_mw + gen.stiffness() / stiff_total * delta * base,
                    false,
                ),
            };
            GeneratorOutput {
                generator: g,
                p_mw: p,
                q_mvar: 0.0,
                clamped,
            }
        })
        .collect();
    // reactive output shared over each bus's units in proportion to their Q range
    for b in 0..nb {
        let at: Vec<usize> = (0..gens.len()).filter(|&i| gen_bus[i] == b).collect();
        if at.is_empty() {
            continue;
        }
        let qbus = (qcalc[b] + load_q[b]) * base;
        let (qmin, range): (f64, f64) = at.iter().fold((0.0, 0.0), |(lo, r), &i| {
            let g = &network.generators[gens[i]];
            (lo + g.q_min_mvar, r + (g.q_max_mvar - g.q_min_mvar))
        });
        for &i in &at {
            let g = &network.generators[gens[i]];
            outputs[i].q_mvar = if range > 0.0 {
                g.q_min_mvar + (qbus - qmin) * (g.q_max_mvar - g.q_min_mvar) / range
            } else {
                qbus / at.len() as f64
            };
        }
    }

    let vc: Vec<Complex64> = (0..nb)
        .map(|i| Complex64::from_polar(v[i], th[i]))
        .collect();
    let mut flows = Vec::new();
    let mut losses = 0.0;
    for (bi, br) in network.branches.iter().enumerate() {
        if !br.closed || br.zero_impedance {
            continue;
        }
        let (Some(i), Some(j)) = (map.bus_of(br.from), map.bus_of(br.to)) else {
            continue;
        };
        let ys = Complex64::new(br.r_pu, br.x_pu).inv();
        let ych = Complex64::new(0.0, br.b_pu / 2.0);
        let i_from = (vc[i] - vc[j]) * ys + vc[i] * ych;
        let i_to = (vc[j] - vc[i]) * ys + vc[j] * ych;
        let s_from = vc[i] * i_from.conj() * base;
        let s_to = vc[j] * i_to.conj() * base;
        losses += s_from.re + s_to.re;
        flows.push(BranchFlow {
            branch: bi,
            p_from_mw: s_from.re,
            q_from_mvar: s_from.im,
            p_to_mw: s_to.re,
            q_to_mvar: s_to.im,
            loading_pct: 100.0 * s_from.norm().max(s_to.norm()) / br.rating_mva,
        });
    }

    let mut gen_p_bus = vec![0.0; nb];
    let mut gen_q_bus = vec![0.0; nb];
    for (idx, o) in outputs.iter().enumerate() {
        gen_p_bus[gen_bus[idx]] += o.p_mw / base;
        gen_q_bus[gen_bus[idx]] += o.q_mvar / base;
    }
    let bus_mismatch: Vec<f64> = (0..nb)
        .map(|b| {
            let dp = pcalc[b] - (gen_p_bus[b] - load_p[b]);
            let dq = qcalc[b] - (gen_q_bus[b] - load_q[b]);
            dp.hypot(dq)
        })
        .collect();
    let max_mismatch = bus_mismatch.iter().copied().fold(0.0, f64::max);

    let f0 = network.f0_hz;
    let frequency = if stiff_total > 0.0 {
        f0 - delta * base * f0 / stiff_total
    } else {
        f0
    };

    let v_nodes = map.node_bus.iter().map(|&b| v[b]).collect();
    let a_nodes = map.node_bus.iter().map(|&b| th[b]).collect();
    Ok(SolutionState {
        map: map.clone(),
        v_pu: v_nodes,
        angle_rad: a_nodes,
        generators: outputs,
        branches: flows,
        load_mw,
        load_mvar,
        losses_mw: losses,
        frequency_hz: frequency,
        converged: true,
        iterations,
        max_mismatch_pu: max_mismatch,
        reference_generator: reference,
        bus_mismatch_pu: bus_mismatch,
    })
}

/// Steady-state island frequency for an active-power imbalance `delta_p_mw`
/// (demand above the units' setpoints) under droop control.
///
/// Units whose share would push them past a P limit are held at the limit;
/// their saturated contribution comes off the imbalance and they leave the
/// responsive sum.
pub fn island_frequency(
    network: &Network,
    gens: &[usize],
    delta_p_mw: f64,
) -> Result<f64, SolveError> {
    let f0 = network.f0_hz;
    let online: Vec<usize> = gens
        .iter()
        .copied()
        .filter(|&g| network.generators[g].online)
        .collect();
    let mut responsive = vec![true; online.len()];
    let mut remaining = delta_p_mw;
    loop {
        let stiff: f64 = online
            .iter()
            .zip(&responsive)
            .filter(|(_, &r)| r)
            .map(|(&g, _)| network.generators[g].stiffness())
            .sum();
        if stiff <= 0.0 {
            if remaining.abs() > 1e-12 {
                return Err(SolveError::FrequencyCollapse {
                    delta_p_mw: remaining,
                });
            }
            return Ok(f0);
        }
        let mut changed = false;
        for (i, &g) in online.iter().enumerate() {
            if !responsive[i] {
                continue;
            }
            let gen = &network.generators[g];
            let p = gen.p_set_mw + remaining * gen.stiffness() / stiff;
            let limit = if p > gen.p_max_mw {
                Some(gen.p_max_mw)
            } else if p < gen.p_min_mw {
                Some(gen.p_min_mw)
            } else {
                None
            };
            if let Some(lim) = limit {
                responsive[i] = false;
                remaining -= lim - gen.p_set_mw;
                changed = true;
            }
        }
        if !changed {
            return Ok(f0 - remaining * f0 / stiff);
        }
    }
}

/// Linearized (DC) network of one island.
#[derive(Clone, Debug)]
pub struct DcModel {
    pub map: BusMap,
    pub reference_bus: usize,
    /// Inverse of the reduced susceptance matrix, padded with a zero row and
    /// column at the reference bus.
    pub x: DMatrix<f64>,
    /// Bus angles for the injections given at construction.
    pub theta: Vec<f64>,
    base_mva: f64,
}

impl DcModel {
    /// Builds the model; injections are MW per node, positive into the network.
    pub fn new(
        network: &Network,
        island: &[usize],
        injections_mw: &[(usize, f64)],
    ) -> Result<DcModel, SolveError> {
        let map = BusMap::new(network, island);
        let nb = map.len();
        let gens = island_generators(network, &map);
        let reference_bus = reference_generator(network, &gens)
            .and_then(|g| map.bus_of(network.generators[g].node))
            .unwrap_or(0);
        let mut b = DMatrix::<f64>::zeros(nb, nb);
        for br in network
            .branches
            .iter()
            .filter(|b| b.closed && !b.zero_impedance)
        {
            let (Some(i), Some(j)) = (map.bus_of(br.from), map.bus_of(br.to)) else {
                continue;
            };
            if i == j {
                continue;
            }
            let s = 1.0 / br.x_pu;
            b[(i, i)] += s;
            b[(j, j)] += s;
            b[(i, j)] -= s;
            b[(j, i)] -= s;
        }
        let keep: Vec<usize> = (0..nb).filter(|&i| i != reference_bus).collect();
        let reduced = DMatrix::from_fn(keep.len(), keep.len(), |r, c| b[(keep[r], keep[c])]);
        let inv = if keep.is_empty() {
            DMatrix::zeros(0, 0)
        } else {
            reduced.try_inverse().ok_or(SolveError::Singular)?
        };
        if inv.iter().any(|x| !x.is_finite()) {
            return Err(SolveError::Singular);
        }
        let mut x = DMatrix::zeros(nb, nb);
        for (r, &i) in keep.iter().enumerate() {
            for (c, &j) in keep.iter().enumerate() {
                x[(i, j)] = inv[(r, c)];
            }
        }
        let mut p = vec![0.0; nb];
        for &(node, mw) in injections_mw {
            let bus = map
                .bus_of(node)
                .ok_or_else(|| SolveError::OutsideIsland(network.nodes[node].id.clone()))?;
            p[bus] += mw / network.base_mva;
        }
        let theta = (0..nb)
            .map(|i| (0..nb).map(|k| x[(i, k)] * p[k]).sum())
            .collect();
        Ok(DcModel {
            map,
            reference_bus,
            x,
            theta,
            base_mva: network.base_mva,
        })
    }

    /// Flow in MW on a closed branch, from its `from` end.
    pub fn flow_mw(&self, network: &Network, branch: usize) -> Option<f64> {
        let br = &network.branches[branch];
        if !br.closed || br.zero_impedance {
            return None;
        }
        let (i, j) = (self.map.bus_of(br.from)?, self.map.bus_of(br.to)?);
        Some((self.theta[i] - self.theta[j]) / br.x_pu * self.base_mva)
    }

    /// Change of flow on `branch` per unit injected at bus `i` and withdrawn at bus `j`.
    pub fn ptdf(&self, network: &Network, branch: usize, i: usize, j: usize) -> f64 {
        let br = &network.branches[branch];
        let (Some(a), Some(b)) = (self.map.bus_of(br.from), self.map.bus_of(br.to)) else {
            return 0.0;
        };
        ((self.x[(a, i)] - self.x[(a, j)]) - (self.x[(b, i)] - self.x[(b, j)])) / br.x_pu
    }

    /// Driving-point reactance between buses `i` and `j`.
    pub fn thevenin(&self, i: usize, j: usize) -> f64 {
        self.x[(i, i)] + self.x[(j, j)] - 2.0 * self.x[(i, j)]
    }
}

/// DC branch flows (MW) of all closed impedance branches in the island.
pub fn dc_flows(
    network: &Network,
    island: &[usize],
    injections_mw: &[(usize, f64)],
) -> Result<Vec<(usize, f64)>, SolveError> {
    let model = DcModel::new(network, island, injections_mw)?;
    Ok((0..network.branches.len())
        .filter_map(|b| model.flow_mw(network, b).map(|f| (b, f)))
        .collect())
}

/// Offline branch considered for closing, with the island nodes its ends
/// would join.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosureCandidate {
    pub branch: usize,
    pub from_node: usize,
    pub to_node: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lcdf {
    /// Monitored flow change per MW of post-closure candidate flow.
    pub factor: f64,
    pub monitored_flow_mw: f64,
    pub candidate_flow_mw: f64,
    pub delta_monitored_mw: f64,
    /// |F + dF| - |F|; negative values relieve the monitored branch.
    pub relief_mw: f64,
}

/// Line-closure distribution factor from the pre-closure DC state.
pub fn lcdf(
    network: &Network,
    model: &DcModel,
    monitored: usize,
    candidate: ClosureCandidate,
) -> Result<Lcdf, SolveError> {
    let outside = |n: usize| SolveError::OutsideIsland(network.nodes[n].id.clone());
    let i = model
        .map
        .bus_of(candidate.from_node)
        .ok_or_else(|| outside(candidate.from_node))?;
    let j = model
        .map
        .bus_of(candidate.to_node)
        .ok_or_else(|| outside(candidate.to_node))?;
    let xc = network.branches[candidate.branch].x_pu;
    let denom = xc + model.thevenin(i, j);
    if denom.abs() < 1e-12 {
        return Err(SolveError::Singular);
    }
    let f_m = model.flow_mw(network, monitored).unwrap_or(0.0);
    let f_c = (model.theta[i] - model.theta[j]) / denom * model.base_mva;
    let factor = -model.ptdf(network, monitored, i, j);
    let delta = factor * f_c;
    Ok(Lcdf {
        factor,
        monitored_flow_mw: f_m,
        candidate_flow_mw: f_c,
        delta_monitored_mw: delta,
        relief_mw: (f_m + delta).abs() - f_m.abs(),
    })
}

/// Relief of every candidate, most relieving first; ties by branch id.
pub fn rank_candidates(
    network: &Network,
    model: &DcModel,
    monitored: usize,
    candidates: &[ClosureCandidate],
) -> Vec<(ClosureCandidate, Lcdf)> {
    use crate::par::*;
    let mut out: Vec<(ClosureCandidate, Lcdf)> = candidates
        .par_iter()
        .filter_map(|&c| lcdf(network, model, monitored, c).ok().map(|l| (c, l)))
        .collect();
    out.sort_by(|a, b| {
        a.1.relief_mw.total_cmp(&b.1.relief_mw).then_with(|| {
            network.branches[a.0.branch]
                .id
                .cmp(&network.branches[b.0.branch].id)
        })
    });
    out
}
