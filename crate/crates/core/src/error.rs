use thiserror::Error;

pub type Result<T> = std::result::Result<T, DesignError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("{field}: {message}")]
    InvalidInput { field: String, message: String },

    #[error("group index {group} out of range for {n_groups} groups")]
    GroupIndex { group: usize, n_groups: usize },

    #[error("dose {dose} outside [0, {dmax}] in group {group}")]
    DoseOutOfRange { group: usize, dose: f64, dmax: f64 },

    #[error("exponential argument d/theta = {ratio} exceeds the supported range")]
    Overflow { ratio: f64 },

    #[error("information matrix is singular")]
    SingularInformation,

    #[error("reference design for candidate `{0}` has a singular information matrix")]
    SingularReference(String),

    #[error("support gradients are linearly dependent (rank {rank} < {needed})")]
    RankDeficient { rank: usize, needed: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no closed form available: {0}")]
    NoClosedForm(String),

    #[error("sample size {n} is smaller than the {support} support points")]
    SampleTooSmall { n: usize, support: usize },

    #[error("optimization failed: {0}")]
    OptimizationFailed(String),
}

impl DesignError {
    pub(crate) fn invalid(field: &str, message: impl Into<String>) -> Self {
        DesignError::InvalidInput { field: field.to_string(), message: message.into() }
    }
}
