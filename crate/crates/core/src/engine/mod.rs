//! Scenario language, the deterministic tick loop and the analyses built on
//! top of it.

pub mod batch;
pub mod check;
pub mod decompose;
pub mod dsl;
pub mod metrics;
pub mod reach;
pub mod report;
pub mod run;
pub mod scenario;

use thiserror::Error;

use crate::channels::ChannelError;
use crate::configspace::SpaceError;
use crate::controller::ControllerError;
use crate::omega::OmegaError;
use crate::plant::PlantError;
use crate::storage::StorageError;

pub use dsl::{load, parse_scenario, serialize, DslError};
pub use run::{run, RunSummary, Trace};
pub use scenario::{Built, Scenario};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Omega(#[from] OmegaError),
    #[error("job {job}: unrecoverable transfer: {reason}")]
    Unrecoverable { job: u64, reason: String },
    #[error("no strategy is eligible and no recovery configuration is stored")]
    NoRecovery,
    #[error("scenario lacks {0}")]
    Missing(&'static str),
}

impl EngineError {
    /// True for problems in the scenario itself rather than in its execution.
    pub fn is_scenario_error(&self) -> bool {
        matches!(self, EngineError::Dsl(_) | EngineError::Missing(_))
    }
}
