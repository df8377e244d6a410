//! Run summary written next to the plan.

use std::collections::BTreeMap;

use crate::model::Network;
use crate::monitor::Violation;
use crate::plan::{PlanStatus, RestorationPlan};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct ZoneShare {
    pub total_mw: f64,
    pub served_mw: f64,
    pub restored_pct: f64,
}

#[derive(Debug, Serialize)]
pub struct LoggedViolation {
    pub step: usize,
    pub time_s: f64,
    #[serde(flatten)]
    pub violation: Violation,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub status: PlanStatus,
    pub duration_s: f64,
    pub restored_pct: f64,
    pub zones: BTreeMap<String, ZoneShare>,
    pub remedial_events: BTreeMap<String, usize>,
    pub violations: Vec<LoggedViolation>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub open_ties: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

fn pct(part: f64, whole: f64) -> f64 {
    if whole > 0.0 {
        (100.0 * part / whole).clamp(0.0, 100.0)
    } else {
        0.0
    }
}

/// Served and total MW per zone; loads outside every zone go under `-`.
pub fn zone_shares(network: &Network) -> BTreeMap<String, ZoneShare> {
    let mut out: BTreeMap<String, ZoneShare> = BTreeMap::new();
    for l in &network.loads {
        let zone = network
            .zone_of_node(l.node)
            .map_or("-".to_string(), |z| network.zones[z].id.clone());
        let e = out.entry(zone).or_insert(ZoneShare {
            total_mw: 0.0,
            served_mw: 0.0,
            restored_pct: 0.0,
        });
        e.total_mw += l.p_mw;
        e.served_mw += l.served_mw;
    }
    for share in out.values_mut() {
        share.restored_pct = pct(share.served_mw, share.total_mw);
    }
    out
}

impl RunReport {
    pub fn new(plan: &RestorationPlan, final_network: &Network) -> Self {
        let mut remedial_events = BTreeMap::new();
        for e in plan.events().filter(|e| e.kind.is_remedial()) {
            *remedial_events
                .entry(e.kind.as_str().to_string())
                .or_insert(0) += 1;
        }
        let violations = plan
            .steps
            .iter()
            .flat_map(|s| {
                s.remediated.iter().map(move |v| LoggedViolation {
                    step: s.step,
                    time_s: s.time_s,
                    violation: v.clone(),
                })
            })
            .collect();
        let st = &plan.statistics;
        RunReport {
            status: plan.status,
            duration_s: st.duration_s,
            restored_pct: pct(st.served_load_mw, st.total_load_mw),
            zones: zone_shares(final_network),
            remedial_events,
            violations,
            skipped: st.skipped.clone(),
            open_ties: st.open_ties.clone(),
            diagnostic: st.diagnostic.clone(),
        }
    }
}

/// Run report as pretty JSON.
pub fn export_report(plan: &RestorationPlan, final_network: &Network) -> String {
    let mut s = serde_json::to_string_pretty(&RunReport::new(plan, final_network))
        .expect("report serializes");
    s.push('\n');
    s
}
