//! Outpatient-aware uplink PRB allocation for a multi-cell OFDMA network.
//!
//! The crate is organised as a pipeline:
//!
//! - [`medrecords`] ingests longitudinal patient rows, cleanses them and
//!   discretizes each clinical reading into one of three severity levels.
//! - [`risk`] runs a categorical naive Bayes estimate of the stroke posterior
//!   for each outpatient and turns it into a priority weight.
//! - [`channel`] builds scenarios and the received-power map from path loss
//!   and Rayleigh fading.
//! - [`exact`] finds the optimal PRB assignment for the weighted sum-SINR and
//!   proportional-fairness objectives by branch and bound.
//! - [`heuristic`] is the real-time semi-greedy allocator with its
//!   Monte Carlo averaging harness.
//! - [`lp_export`] writes the equivalent MILP in LP text format and checks
//!   solutions coming back from external solvers.
//! - [`metrics`] and [`experiments`] aggregate runs into plot-ready tables.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod exact;
pub mod experiments;
pub mod heuristic;
pub mod lp_export;
pub mod medrecords;
pub mod metrics;
pub mod risk;
pub mod seed;

pub mod fsutil;

pub use channel::{PowerMap, Scenario, ScenarioConfig};
pub use exact::{Assignment, Objective, Slot, SinrReport, SolverConfig};
pub use heuristic::HeuristicConfig;
pub use risk::{RiskConfig, RiskProfile};

/// Crate-level error used by the experiment runners and the CLI.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Records(#[from] medrecords::RecordsError),
    #[error(transparent)]
    Risk(#[from] risk::RiskError),
    #[error(transparent)]
    Channel(#[from] channel::ChannelError),
    #[error(transparent)]
    Solver(#[from] exact::SolverError),
    #[error(transparent)]
    Heuristic(#[from] heuristic::HeuristicError),
    #[error(transparent)]
    Lp(#[from] lp_export::LpError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True when the failure comes from an instance that admits no feasible
    /// assignment (more users than slots, or PF undefined everywhere).
    pub fn is_infeasible(&self) -> bool {
        match self {
            Error::Channel(channel::ChannelError::Infeasible { .. }) => true,
            Error::Solver(e) => e.is_infeasible(),
            Error::Heuristic(heuristic::HeuristicError::Solver(e)) => e.is_infeasible(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
