use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite: pivot {pivot:e} at index {index} (threshold {threshold:e})")]
    NotPositiveDefinite {
        index: usize,
        pivot: f64,
        threshold: f64,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("retained Hessian is singular; the anchor state is not unique")]
    SingularRetainedHessian,

    #[error("lambda grid is empty")]
    EmptyGrid,

    #[error("invalid lambda grid: {0}")]
    InvalidGrid(String),

    #[error("invalid task spec: {0}")]
    InvalidSpec(String),

    #[error("training diverged at stage step {step}: loss = {loss}")]
    DivergenceDetected { step: usize, loss: f64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("retention matrix is incomplete: missing acc[{task}][{stage}]")]
    IncompleteMatrix { task: usize, stage: usize },

    #[error("candidate embedding is not unit norm (norm = {norm})")]
    InvalidCandidate { norm: f64 },

    #[error("cannot merge antipodal embeddings (cosine = {cosine})")]
    DegenerateMerge { cosine: f64 },

    #[error("operation requires a cpe policy")]
    PolicyMismatch,

    #[error("usage log is empty")]
    EmptyLog,
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
