//! Small network builders for tests and benchmarks.
//!
//! [`BusBranch`] makes a bus-level network (one node per bus, no breakers)
//! with every element closed, online and fully served.

use crate::caseio::{expand_node_breaker, parse_case};
use crate::model::{
    Branch, Generator, Load, Network, NetworkParts, Node, NodeKind, Scheme, Shunt, Substation,
    DEFAULT_DROOP_PU,
};

#[derive(Clone, Debug)]
pub struct BusBranch {
    parts: NetworkParts,
}

impl BusBranch {
    pub fn new(buses: usize) -> Self {
        let mut parts = NetworkParts {
            base_mva: 100.0,
            f0_hz: 60.0,
            ..Default::default()
        };
        for i in 0..buses {
            parts.substations.push(Substation {
                id: format!("s{i:03}"),
                name: format!("s{i:03}"),
                scheme: Scheme::SingleBus,
            });
            parts.nodes.push(Node {
                id: format!("n{i:03}"),
                substation: i,
                bus: format!("n{i:03}"),
                nominal_kv: 230.0,
                kind: NodeKind::Busbar,
            });
        }
        BusBranch { parts }
    }

    pub fn line(mut self, from: usize, to: usize, r: f64, x: f64, b: f64) -> Self {
        let i = self.parts.branches.len();
        self.parts.branches.push(Branch {
            id: format!("b{i:03}"),
            from,
            to,
            r_pu: r,
            x_pu: x,
            b_pu: b,
            rating_mva: 500.0,
            closed: true,
            available: true,
            is_transformer: false,
            zero_impedance: r == 0.0 && x == 0.0,
        });
        self
    }

    /// Online unit with `p_max` MW, dispatch 0 and the given voltage setpoint.
    pub fn gen(mut self, node: usize, p_max: f64, v_set: f64) -> Self {
        let i = self.parts.generators.len();
        self.parts.generators.push(Generator {
            id: format!("g{i:03}"),
            node,
            p_max_mw: p_max,
            p_min_mw: 0.0,
            q_max_mvar: p_max,
            q_min_mvar: -p_max,
            is_blackstart: false,
            droop_r_pu: DEFAULT_DROOP_PU,
            s_rating_mva: p_max,
            v_setpoint_pu: v_set,
            startup_time_s: 0.0,
            crew_time_s: 0.0,
            online: true,
            available: true,
            is_renewable: false,
            p_set_mw: 0.0,
            p_out_mw: 0.0,
            q_mvar: 0.0,
        });
        self
    }

    pub fn load(mut self, node: usize, p: f64, q: f64) -> Self {
        let i = self.parts.loads.len();
        self.parts.loads.push(Load {
            id: format!("d{i:03}"),
            node,
            p_mw: p,
            q_mvar: q,
            is_critical: false,
            crew_time_s: 0.0,
            available: true,
            served_mw: p,
            served_mvar: q,
        });
        self
    }

    pub fn shunt(mut self, node: usize, mvar: f64) -> Self {
        let i = self.parts.shunts.len();
        self.parts.shunts.push(Shunt {
            id: format!("h{i:03}"),
            node,
            mvar_nominal: mvar,
            closed: true,
            available: true,
            discrete: true,
        });
        self
    }

    pub fn rating(mut self, branch: usize, mva: f64) -> Self {
        self.parts.branches[branch].rating_mva = mva;
        self
    }

    pub fn parts_mut(&mut self) -> &mut NetworkParts {
        &mut self.parts
    }

    pub fn build(self) -> Network {
        Network::assemble(self.parts).expect("test network is well formed")
    }
}

/// Two 230 kV buses joined by one line, expanded to node-breaker form.
pub fn line() -> Network {
    let case = parse_case(
        r#"{"format_version": 1, "base_mva": 100.0,
            "buses": [{"id": "A", "nominal_kv": 230.0}, {"id": "B", "nominal_kv": 230.0}],
            "branches": [{"id": "AB", "from_bus": "A", "to_bus": "B", "r_pu": 0.01, "x_pu": 0.1, "rating_mva": 100.0}],
            "generators": [{"id": "G", "bus": "A", "p_max_mw": 100.0, "q_max_mvar": 50.0, "q_min_mvar": -50.0, "p_mw": 10.0}],
            "loads": [{"id": "D", "bus": "B", "p_mw": 10.0, "q_mvar": 2.0}]}"#,
    )
    .expect("fixture parses");
    expand_node_breaker(&case).expect("fixture expands")
}
