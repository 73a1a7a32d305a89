//! Planning and performance modelling for wavelength-routed multi-user QKD
//! networks: full-mesh wavelength plans, optical loss and crosstalk budgets,
//! decoy-state key rates, crosstalk impact and a pulse-level Monte Carlo.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exec;
pub mod netgraph;
pub mod optics;
pub mod pulsesim;
pub mod qkdrate;
pub mod report;
pub mod scenario;
pub mod xtalk;

pub use error::{Error, Result, ScenarioError};
pub use exec::Execution;
pub use netgraph::{build_plan, plan_for_nodes, route_lookup, validate_plan, NetworkPlan, NodeId};
