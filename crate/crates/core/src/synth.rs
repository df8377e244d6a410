//! Seeded random bus-branch cases for property tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::caseio::{
    BranchRecord, BusRecord, CaseFile, GeneratorRecord, LoadRecord, ZoneRecord, CASE_FORMAT_VERSION,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthSpec {
    pub zones: usize,
    pub buses_per_zone: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            zones: 2,
            buses_per_zone: 5,
            seed: 0,
        }
    }
}

fn branch(id: String, from: &str, to: &str, x: f64, b: f64) -> BranchRecord {
    BranchRecord {
        id,
        from_bus: from.into(),
        to_bus: to.into(),
        r_pu: x / 10.0,
        x_pu: x,
        b_pu: b,
        rating_mva: 250.0,
        is_transformer: false,
        closed: true,
        available: true,
    }
}

fn unit(id: String, bus: &str, p_max: f64, bsu: bool) -> GeneratorRecord {
    GeneratorRecord {
        id,
        bus: bus.into(),
        p_max_mw: p_max,
        p_min_mw: 0.0,
        q_max_mvar: 0.6 * p_max,
        q_min_mvar: -0.4 * p_max,
        is_blackstart: bsu,
        droop_r_pu: Some(0.05),
        s_rating_mva: Some(p_max),
        v_setpoint_pu: 1.0,
        startup_time_s: Some(0.0),
        crew_time_s: Some(0.0),
        is_renewable: false,
        available: true,
        online: true,
        p_mw: 0.0,
    }
}

/// Tree-plus-one-loop zones chained by tie lines. Each zone has a
/// blackstart unit on its first bus, one or two larger units, a load on
/// every other bus and one critical load.
pub fn synth_case(spec: &SynthSpec) -> CaseFile {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.buses_per_zone.max(3);
    let mut case = CaseFile {
        format_version: CASE_FORMAT_VERSION,
        base_mva: 100.0,
        frequency_hz: 60.0,
        substations: Vec::new(),
        buses: Vec::new(),
        branches: Vec::new(),
        generators: Vec::new(),
        loads: Vec::new(),
        shunts: Vec::new(),
        zones: Vec::new(),
        node_breaker: None,
    };
    for z in 0..spec.zones {
        let bus = |k: usize| format!("z{z}b{k:02}");
        let mut zone = ZoneRecord {
            id: format!("Z{z}"),
            name: None,
            substations: Vec::new(),
            bsu_generators: Vec::new(),
            critical_loads: Vec::new(),
        };
        for k in 0..n {
            let kv = if k == 0 { 230.0 } else { 115.0 };
            case.buses.push(BusRecord {
                id: bus(k),
                nominal_kv: kv,
                substation: None,
            });
            zone.substations.push(bus(k));
        }
        for k in 1..n {
            let parent = rng.gen_range(0..k);
            let x = rng.gen_range(0.02..0.08);
            let b = rng.gen_range(0.0..0.03);
            case.branches
                .push(branch(format!("z{z}l{k:02}"), &bus(parent), &bus(k), x, b));
        }
        let (a, c) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != c {
            case.branches.push(branch(
                format!("z{z}l{n:02}"),
                &bus(a.min(c)),
                &bus(a.max(c)),
                0.06,
                0.01,
            ));
        }

        let bsu_mw = rng.gen_range(40.0..100.0_f64).round();
        case.generators
            .push(unit(format!("z{z}g0"), &bus(0), bsu_mw, true));
        zone.bsu_generators.push(format!("z{z}g0"));
        let mut gen_buses = vec![0];
        let mut capacity = bsu_mw;
        for u in 1..=rng.gen_range(1..=2) {
            let k = rng.gen_range(1..n);
            let p = rng.gen_range(50.0..200.0_f64).round();
            capacity += p;
            gen_buses.push(k);
            case.generators
                .push(unit(format!("z{z}g{u}"), &bus(k), p, false));
        }

        let load_buses: Vec<usize> = (1..n).filter(|k| !gen_buses.contains(k)).collect();
        let load_buses = if load_buses.is_empty() {
            vec![n - 1]
        } else {
            load_buses
        };
        let budget = 0.7 * capacity / load_buses.len() as f64;
        for (i, &k) in load_buses.iter().enumerate() {
            let p = rng.gen_range(0.3 * budget..budget).clamp(2.0, 60.0).round();
            let id = format!("z{z}d{k:02}");
            if i == 0 {
                zone.critical_loads.push(id.clone());
            }
            case.loads.push(LoadRecord {
                id,
                bus: bus(k),
                p_mw: p,
                q_mvar: (0.2 * p).round(),
                is_critical: i == 0,
                crew_time_s: Some(0.0),
                available: true,
                served_mw: None,
            });
        }
        case.zones.push(zone);
        if z > 0 {
            let from = format!("z{}b{:02}", z - 1, n - 1);
            case.branches
                .push(branch(format!("t{:02}", z), &from, &bus(0), 0.05, 0.02));
        }
    }
    case
}
