//! Module registry and the durable, lease-based job queue.
//!
//! Workers pull: `lease` hands the oldest matching queued job to one worker
//! until a deadline, `progress` heartbeats extend it and `finish` commits
//! the results. A lease that runs out puts the job back in the queue, and
//! a finish or heartbeat carrying an outdated lease is rejected. Every
//! transition is appended to a JSON-lines journal, so a restarted server
//! sees all queued and finished jobs again; jobs that were out on lease
//! come back queued.

mod clock;
mod module;
mod queue;

use thiserror::Error;

pub use clock::{Clock, ManualClock, SystemClock};
pub use module::{machine_annotator, ModuleDescriptor, OptionSpec, OptionType};
pub use queue::{
    Job, JobOutcome, JobQueue, JobState, Lease, RegisterOutcome, SlotData, SlotPayload, SubmitRequest,
    DEFAULT_LEASE_MS, DEFAULT_MAX_ATTEMPTS,
};

use discover_core::sampling::SamplingError;
use discover_core::storage::StorageError;

#[derive(Debug, Error)]
pub enum JobError {
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("conflict: module {0} is registered with a different descriptor")]
    Conflict(String),
    #[error("unknown module: {0}")]
    UnknownModule(String),
    #[error("unknown option: {0}")]
    UnknownOption(String),
    #[error("option type: {name} must be a {expected}, got {got}")]
    OptionType {
        name: String,
        expected: &'static str,
        got: String,
    },
    #[error("unresolvable input {slot}: {reason}")]
    Unresolvable { slot: String, reason: String },
    #[error("invalid output: {0}")]
    InvalidOutput(String),
    #[error("job not found: {0}")]
    NotFound(u64),
    #[error("stale lease on job {0}")]
    StaleLease(u64),
    #[error("lease_ms must be positive")]
    InvalidLease,
    #[error("progress must be within [0, 1], got {0}")]
    InvalidProgress(f64),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("journal: {0}")]
    Journal(String),
}
