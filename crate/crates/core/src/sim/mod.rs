//! Deterministic discrete-event simulation of verified fleets.
//!
//! A scenario config fully determines a run: agent dynamics and controllers,
//! clock offsets, the seeded lossy channel, and the scheduled cost model that
//! places every verification event on the timeline. [`engine::run_scenario`]
//! produces the event log, dense ground truth, metrics, and the stored reach
//! sets; [`audit::soundness_audit`] then replays every verdict against the
//! ground truth.

use thiserror::Error;

pub mod audit;
pub mod config;
pub mod engine;
pub mod events;
pub mod metrics;
pub mod truth;

pub use audit::{soundness_audit, AuditReport};
pub use config::{AgentConfig, ScenarioConfig};
pub use engine::{run_scenario, RunOutput};
pub use events::{EventKind, EventLog, EventRecord, ReachRecord};
pub use metrics::{metrics_report, AgentMetrics, Metrics};
pub use truth::{GroundTruth, TRUTH_DT};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),
    #[error("artifact error: {0}")]
    Artifact(String),
    #[error(transparent)]
    Reach(#[from] crate::reach::ReachError),
    #[error(transparent)]
    Comm(#[from] crate::comm::CommError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Verify(crate::verify::VerifyError),
}
