//! Online assignment of machines and processing levels to stochastically
//! arriving tasks, with rejection budgets and reusable machines.
//!
//! The pipeline: build an offline LP relaxation over assignment
//! probabilities ([`lp`]), solve it, turn the solution into activation and
//! baseline value tables by backward induction ([`tables`]), and drive the
//! OMLA online policy from those tables ([`policies`]). A discrete-time
//! Monte Carlo simulator ([`sim`]), exact small-instance evaluators
//! ([`oracle`]), and a bound checker ([`verify`]) close the loop on the
//! competitive-ratio guarantees. Instances come from JSON files ([`model`]),
//! a synthetic generator ([`gen`]), or trip-record CSVs ([`ingest`]).

pub mod cli;
pub mod gen;
pub mod ingest;
pub mod lp;
pub mod model;
pub mod oracle;
pub mod policies;
pub mod reference;
pub mod sim;
pub mod tables;
pub mod verify;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed instance: {0}")]
    Instance(String),
    #[error("instance failed validation:\n{0}")]
    Validation(String),
    #[error("lp: {0}")]
    Lp(String),
    #[error("tables: {0}")]
    Tables(String),
    #[error("policy contract violation: {0}")]
    Contract(String),
    #[error("oracle limits exceeded: {0}")]
    OracleLimits(String),
    #[error("ingest: {0}")]
    Ingest(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
