//! Sequential training of a multinomial logistic classifier on shifting
//! synthetic tasks, with an optional diagonal-Fisher quadratic penalty that
//! anchors parameters to the previous stage.

mod data;
mod model;
mod sequence;

pub use data::{gen_task, Dataset, ShiftKind, SyntheticTaskSpec, TaskData};
pub use model::{
    accumulate_fisher, estimate_fisher, fisher_sample_squares, loss_and_grad, train_stage,
    FisherState, LearnerState, TrainConfig, REFERENCE_LAMBDA_EWC,
};
pub use sequence::{
    forgetting_metrics, run_sequence, stage_specs, ForgettingMetrics, RetentionMatrix,
    SequenceOutcome,
};
