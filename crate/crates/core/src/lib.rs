//! Automated restoration planning for blacked-out power systems.
//!
//! The crate turns a bus-branch case into a node-breaker [`model::Network`],
//! blacks it out, and then drives a staged restoration: blackstart units and
//! critical loads first, bulk pickup next, and finally synchronization of the
//! subareas. Every switching step is followed by an AC power flow, a limit
//! check and, when needed, remedial actions.

// `!(x > 0.0)` also rejects NaN, which is the point of those checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod caseio;
pub mod model;
pub mod monitor;
pub mod par;
pub mod pathfinder;
pub mod plan;
pub mod report;
pub mod sequencer;
pub mod solver;
pub mod synth;
pub mod testkit;

pub use caseio::{apply_blackout, expand_node_breaker, parse_case, CaseError, CaseFile};
pub use model::Network;
pub use plan::{PlanStatus, RestorationPlan};
pub use sequencer::{run, Config};
