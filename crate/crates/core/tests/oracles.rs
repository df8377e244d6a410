//! Independent reference computations checked against the library.

use std::collections::VecDeque;

use blackstart::model::{islands, Network};
use blackstart::solver::{build_ybus, island_frequency, solve_powerflow, PowerFlowOptions};
use blackstart::testkit::BusBranch;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

use common::{
    dijkstra_agreement, droop_root, lcdf_agreement, random_mesh, twin_flow_change, two_unit_fixture,
};

fn bfs_labels(net: &Network) -> Vec<usize> {
    let n = net.nodes.len();
    let mut adj = vec![Vec::new(); n];
    for link in net.closed_links() {
        let (a, b) = net.link_ends(link);
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        label[s] = next;
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            for &w in &adj[v] {
                if label[w] == usize::MAX {
                    label[w] = next;
                    q.push_back(w);
                }
            }
        }
        next += 1;
    }
    label
}

#[test]
fn islands_match_breadth_first_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.gen_range(1..25);
        let mut net = random_mesh(&mut rng, n, n / 2).build();
        for br in &mut net.branches {
            br.closed = rng.gen_bool(0.5);
        }
        let bfs = bfs_labels(&net);
        let found = islands(&net);
        assert_eq!(found.len(), bfs.iter().copied().max().map_or(0, |m| m + 1));
        for isl in &found {
            let l = bfs[isl.nodes[0]];
            assert!(isl.nodes.iter().all(|&v| bfs[v] == l));
            assert_eq!(isl.nodes.len(), bfs.iter().filter(|&&x| x == l).count());
        }
    }
}

#[test]
fn ybus_reproduces_branch_currents() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = rng.gen_range(2..12);
        let mut b = random_mesh(&mut rng, n, 3);
        for k in 0..rng.gen_range(0..3) {
            b = b.shunt(k % n, rng.gen_range(-40.0..40.0));
        }
        let net = b.build();
        let all: Vec<usize> = (0..n).collect();
        let y = build_ybus(&net, &all);
        let v: Vec<Complex64> = (0..n)
            .map(|_| Complex64::from_polar(rng.gen_range(0.9..1.1), rng.gen_range(-0.3..0.3)))
            .collect();
        // injected current = sum of currents leaving through each element
        let mut inj = vec![Complex64::new(0.0, 0.0); n];
        for br in net.branches.iter().filter(|b| b.closed) {
            let (i, j) = (br.from, br.to);
            let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r_pu, br.x_pu);
            let ych = Complex64::new(0.0, br.b_pu / 2.0);
            inj[i] += (v[i] - v[j]) * ys + v[i] * ych;
            inj[j] += (v[j] - v[i]) * ys + v[j] * ych;
        }
        for s in net.shunts.iter().filter(|s| s.closed) {
            inj[s.node] += v[s.node] * Complex64::new(0.0, s.mvar_nominal / net.base_mva);
        }
        for i in 0..n {
            let bus = y.map.bus_of(i).unwrap();
            let yv: Complex64 = (0..n)
                .map(|j| y.get(bus, y.map.bus_of(j).unwrap()) * v[j])
                .sum();
            assert!((yv - inj[i]).norm() < 1e-9, "bus {i}: {yv} vs {}", inj[i]);
        }
    }
}

#[test]
fn lcdf_matches_close_and_resolve() {
    let (checked, worst) = lcdf_agreement(5, 60).unwrap();
    assert!(checked > 50 && worst <= 1e-9);
}

#[test]
fn parallel_twin_closure_halves_flow() {
    assert!((twin_flow_change() + 0.5).abs() < 1e-12);
}

#[test]
fn dijkstra_matches_exhaustive_enumeration() {
    dijkstra_agreement(17, 100).unwrap();
}

#[test]
fn droop_frequency_two_unit_step() {
    let net = two_unit_fixture();
    let f = island_frequency(&net, &[0, 1], 10.0).unwrap();
    assert!((f - 59.85).abs() <= 1e-9);
    assert!((droop_root(&net, 10.0) - 59.85).abs() <= 1e-9);
}

#[test]
fn droop_frequency_matches_clamped_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100 {
        let k = rng.gen_range(1..5);
        let mut b = BusBranch::new(1);
        for _ in 0..k {
            b = b.gen(0, rng.gen_range(20.0..200.0), 1.0);
        }
        let mut net = b.build();
        for g in &mut net.generators {
            g.p_set_mw = rng.gen_range(0.0..g.p_max_mw);
            g.droop_r_pu = rng.gen_range(0.03..0.08);
        }
        let room: f64 = net.generators.iter().map(|g| g.p_max_mw - g.p_set_mw).sum();
        let down: f64 = net.generators.iter().map(|g| g.p_set_mw).sum();
        let delta = if rng.gen_bool(0.5) {
            rng.gen_range(0.0..0.9) * room
        } else {
            -rng.gen_range(0.0..0.9) * down
        };
        let gens: Vec<usize> = (0..k).collect();
        let f = island_frequency(&net, &gens, delta).unwrap();
        assert!(
            (f - droop_root(&net, delta)).abs() < 1e-9,
            "{f} vs {}",
            droop_root(&net, delta)
        );
    }
}

#[test]
fn solved_frequency_follows_droop() {
    let net = BusBranch::new(2)
        .line(0, 1, 0.0, 0.1, 0.0)
        .gen(0, 100.0, 1.0)
        .gen(1, 100.0, 1.0)
        .load(1, 10.0, 0.0)
        .build();
    let s = solve_powerflow(&net, &[0, 1], &PowerFlowOptions::default()).unwrap();
    // lossless line: the whole 10 MW step is the governor imbalance
    assert!((s.frequency_hz - 59.85).abs() < 1e-9, "{}", s.frequency_hz);
}

#[test]
fn lcdf_matches_close_and_resolve_on_bundled_case() {
    let (checked, worst) = common::bundled_lcdf_agreement().unwrap();
    assert!(checked > 100 && worst <= 1e-9, "{checked} {worst:e}");
}
