//! Restoration plan, event and per-step summary types.

use serde::{Deserialize, Serialize};

use crate::monitor::Violation;

pub const PLAN_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    CloseBreaker,
    CloseBranch,
    GenOnline,
    LoadIncrement,
    ShuntClose,
    VrefChange,
    Redispatch,
    LoadShed,
    Synchronize,
}

impl EventKind {
    pub fn is_switching(self) -> bool {
        matches!(self, EventKind::CloseBreaker | EventKind::CloseBranch)
    }

    pub fn is_remedial(self) -> bool {
        matches!(
            self,
            EventKind::VrefChange
                | EventKind::Redispatch
                | EventKind::LoadShed
                | EventKind::ShuntClose
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::CloseBreaker => "close_breaker",
            EventKind::CloseBranch => "close_branch",
            EventKind::GenOnline => "gen_online",
            EventKind::LoadIncrement => "load_increment",
            EventKind::ShuntClose => "shunt_close",
            EventKind::VrefChange => "vref_change",
            EventKind::Redispatch => "redispatch",
            EventKind::LoadShed => "load_shed",
            EventKind::Synchronize => "synchronize",
        }
    }
}

/// One switching or dispatch action.
///
/// Payload conventions: `gen_online` carries the dispatch setpoint in `mw` and the
/// voltage setpoint in `setpoint_pu`; `redispatch` carries the new absolute setpoint
/// in `mw`; `vref_change` the new voltage setpoint; `load_increment` and `load_shed`
/// the MW/Mvar change.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time_s: f64,
    pub kind: EventKind,
    pub element: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mvar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setpoint_pu: Option<f64>,
}

impl Event {
    pub fn new(time_s: f64, kind: EventKind, element: impl Into<String>) -> Self {
        Event {
            time_s,
            kind,
            element: element.into(),
            mw: None,
            mvar: None,
            setpoint_pu: None,
        }
    }

    pub fn with_mw(mut self, mw: f64) -> Self {
        self.mw = Some(mw);
        self
    }

    pub fn with_mvar(mut self, mvar: f64) -> Self {
        self.mvar = Some(mvar);
        self
    }

    pub fn with_setpoint(mut self, pu: f64) -> Self {
        self.setpoint_pu = Some(pu);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    #[serde(rename = "1")]
    CriticalResources,
    #[serde(rename = "2")]
    BulkPickup,
    #[serde(rename = "3")]
    Synchronization,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::CriticalResources => 1,
            Stage::BulkPickup => 2,
            Stage::Synchronization => 3,
        }
    }
}

/// Electrical summary of one energized island after a step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IslandSummary {
    /// Smallest node id in the island.
    pub island: String,
    pub gen_mw: f64,
    pub gen_mvar: f64,
    pub load_mw: f64,
    pub load_mvar: f64,
    pub v_min_pu: f64,
    pub v_max_pu: f64,
    pub frequency_hz: f64,
    pub max_loading_pct: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_loading_branch: Option<String>,
}

/// A group of events applied at one instant, followed by one solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub step: usize,
    pub time_s: f64,
    pub stage: Stage,
    /// Subarea the step belongs to; `None` once subareas have merged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zone: Option<String>,
    /// Simulated time until the next step of this subarea.
    pub interval_s: f64,
    pub events: Vec<Event>,
    pub islands: Vec<IslandSummary>,
    /// Violations observed and remediated during this step.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub remediated: Vec<Violation>,
}

impl Step {
    /// Main action of the step; decides the following interval.
    pub fn primary_kind(&self) -> Option<EventKind> {
        self.events
            .iter()
            .map(|e| e.kind)
            .find(|k| !k.is_remedial() && !k.is_switching())
            .or_else(|| self.events.first().map(|e| e.kind))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    /// Stopping criterion met and synchronization done.
    Complete,
    /// Candidates exhausted before the stopping criterion.
    Partial,
    /// A violation could not be remediated.
    Infeasible,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanStatistics {
    pub total_load_mw: f64,
    pub served_load_mw: f64,
    pub restored_pct: f64,
    pub duration_s: f64,
    pub remedial_events: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub open_ties: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// Availability change applied on top of the blacked-out case.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvailabilityOverride {
    pub kind: ElementKind,
    pub id: String,
    pub available: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Breaker,
    Branch,
    Generator,
    Load,
    Shunt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestorationPlan {
    pub format_version: u32,
    pub status: PlanStatus,
    pub config: crate::sequencer::Config,
    #[serde(default)]
    pub overrides: Vec<AvailabilityOverride>,
    pub steps: Vec<Step>,
    pub statistics: PlanStatistics,
}

impl RestorationPlan {
    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.steps.iter().flat_map(|s| s.events.iter())
    }
}

/// One metrics row: one island at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub time_s: f64,
    pub step: usize,
    pub stage: Stage,
    pub zone: Option<String>,
    pub summary: IslandSummary,
}

pub fn metrics_history(plan: &RestorationPlan) -> Vec<MetricsRow> {
    plan.steps
        .iter()
        .flat_map(|s| {
            s.islands.iter().map(move |isl| MetricsRow {
                time_s: s.time_s,
                step: s.step,
                stage: s.stage,
                zone: s.zone.clone(),
                summary: isl.clone(),
            })
        })
        .collect()
}
