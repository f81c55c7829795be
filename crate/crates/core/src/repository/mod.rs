//! Bounded-capacity capability bank with vanilla and consolidating updates.

mod entry;
mod store;
mod stream;

pub use entry::{
    merge, PolicyConfig, SkillEntry, DEFAULT_CAPACITY, DEFAULT_RETRIEVAL_K, UNIT_NORM_TOL,
};
pub use store::{AdmissionReport, Repository, Retrieved, StepOutcome};
pub use stream::{
    chunk_success_rates, retained_usage, run_stream, DomainSuccess, RetainedUsageRow, StageLog,
    StreamOutcome, StreamSpec, TaskEvent, TaskGenerator, TaskInstance,
};
