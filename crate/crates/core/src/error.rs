use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("length mismatch: expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("split ratios must be nonnegative and sum to 1")]
    RatioInvalid,
    #[error("batch norm needs at least 2 samples in training mode, got {0}")]
    BatchTooSmall(usize),
    #[error("subject {subject} out of range (num_subjects = {num_subjects})")]
    SubjectOutOfRange { subject: usize, num_subjects: usize },
    #[error("requested {count} components but only {available} exist")]
    CountTooLarge { count: usize, available: usize },
    #[error("step {step} outside schedule of {total} steps")]
    StepOutOfRange { step: usize, total: usize },
    #[error("non-finite gradient in {array}")]
    NonFiniteGradient { array: String },
    #[error("loss mask selects no entries")]
    EmptyMask,
    #[error("every vertex was excluded (zero noise ceiling or undefined R²)")]
    AllVerticesExcluded,
    #[error("forward cache does not match the current parameters or batch")]
    StaleCache,
    #[error("mixture component kept collapsing after {retries} reinitializations")]
    DegenerateComponent { retries: usize },
    #[error("non-finite values in {what}")]
    NonFiniteInput { what: &'static str },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
