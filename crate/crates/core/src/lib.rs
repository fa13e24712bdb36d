//! Runtime core for a multi-rate, multi-agent task execution stack.
//!
//! The crate is organised around the data flow of one control episode:
//!
//! * [`protocol`] defines checksummed envelopes and the payload contracts.
//! * [`bus`] and [`registry`] carry envelopes between registered agents.
//! * [`agents`] hosts the deliberative roles and their numeric couplings.
//! * [`memory`], [`planner`] and [`estimator`] hold episodic memory,
//!   HTN/DAG planning and the discrete Bayesian filter.
//! * [`pipeline`] binds everything to a virtual clock and [`reactive`]
//!   computes the per-tick control output.

pub mod agents;
pub mod bus;
pub mod clock;
pub mod embed;
pub mod estimator;
pub mod linalg;
pub mod memory;
pub mod pipeline;
pub mod planner;
pub mod protocol;
pub mod reactive;
pub mod registry;

pub use clock::{Tick, VirtualClock};
pub use protocol::{AgentId, Importance};
