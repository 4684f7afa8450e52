use std::fmt;

use dosedesign::DesignError;

pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_CERTIFICATION: i32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self { code: EXIT_VALIDATION, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { code: EXIT_NUMERICAL, message: message.into() }
    }

    pub fn certification(message: impl Into<String>) -> Self {
        Self { code: EXIT_CERTIFICATION, message: message.into() }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Self::validation(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<DesignError> for CliError {
    fn from(e: DesignError) -> Self {
        match e {
            DesignError::InvalidInput { .. }
            | DesignError::GroupIndex { .. }
            | DesignError::DoseOutOfRange { .. }
            | DesignError::Overflow { .. }
            | DesignError::Precondition(_)
            | DesignError::SampleTooSmall { .. } => Self::validation(e.to_string()),
            DesignError::SingularInformation
            | DesignError::SingularReference(_)
            | DesignError::RankDeficient { .. }
            | DesignError::NoClosedForm(_)
            | DesignError::OptimizationFailed(_) => Self::numerical(e.to_string()),
        }
    }
}
