//! Stage errors mapped onto process exit codes.

use skill_loom_core::Error as CoreError;

/// Exit codes: 0 success, 1 validation, 2 missing prerequisite, 3 endpoint
/// failure beyond threshold.
#[derive(Debug)]
pub enum StageError {
    Validation(String),
    MissingPrerequisite(String),
    Endpoint(String),
    Internal(String),
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) | Self::Internal(_) => 1,
            Self::MissingPrerequisite(_) => 2,
            Self::Endpoint(_) => 3,
        }
    }
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Validation(m) => write!(f, "validation error: {m}"),
            Self::MissingPrerequisite(m) => write!(f, "missing prerequisite: {m}"),
            Self::Endpoint(m) => write!(f, "endpoint failure: {m}"),
            Self::Internal(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for StageError {}

impl From<CoreError> for StageError {
    fn from(e: CoreError) -> Self {
        match &e {
            CoreError::Chat(_) => Self::Endpoint(e.to_string()),
            CoreError::Attribution(m) if m.contains("above the") => Self::Endpoint(e.to_string()),
            CoreError::Taxonomy(_)
            | CoreError::Corpus(_)
            | CoreError::Sampling(_)
            | CoreError::Eval(_)
            | CoreError::Sim(_)
            | CoreError::Augment(_)
            | CoreError::Profile(_) => Self::Validation(e.to_string()),
            _ => Self::Internal(e.to_string()),
        }
    }
}

impl From<std::io::Error> for StageError {
    fn from(e: std::io::Error) -> Self {
        Self::Internal(format!("io: {e}"))
    }
}

impl From<serde_json::Error> for StageError {
    fn from(e: serde_json::Error) -> Self {
        Self::Internal(format!("json: {e}"))
    }
}
