//! Information-flow tracking of stepwise reasoning traces.
//!
//! Traces are scored token by token, turned into trajectories in the
//! (uncertainty, effort) phase space, and analysed as an empirical flow field:
//! divergence checks, potential reconstruction, error-stage classification,
//! cohort statistics and static embedding baselines.

pub mod analysis;
pub mod baselines;
pub mod error;
pub mod flow;
pub mod gateway;
pub mod infodyn;
pub mod par;
pub mod synth;
pub mod tables;
pub mod trace;

pub use error::{Error, Result};
