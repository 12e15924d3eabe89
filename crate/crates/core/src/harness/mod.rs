//! Scenario files, the simulation loop and run metrics.

mod config;
mod metrics;
mod run;

pub use config::*;
pub use metrics::*;
pub use run::*;

use crate::wire::WireError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
