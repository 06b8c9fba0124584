use thiserror::Error;

use crate::audit::Role;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("record is not a JSON object")]
    NotARecord,
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("duplicate option letter {0:?}")]
    DuplicateOptionLetter(char),
    #[error("option letters must run consecutively from A: expected {expected:?}, found {found:?}")]
    NonConsecutiveLetters { expected: char, found: char },
    #[error("gold answer {0:?} is not among the option letters")]
    GoldAnswerNotInOptions(String),
    #[error("duplicate task id {0:?}")]
    DuplicateTaskId(String),
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<TaskError>,
    },
    #[error("record {id:?}: {source}")]
    Record {
        id: String,
        #[source]
        source: Box<TaskError>,
    },
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

/// Reasons a provider rejected a call without a retry being useful.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderFailure {
    #[error("mock script exhausted for task {task_id:?} ({role})")]
    ScriptExhausted { task_id: String, role: Role },
    #[error("no mock script for task {0:?}")]
    UnknownTask(String),
    #[error("image {0:?} could not be read")]
    ImageUnreadable(String),
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
    #[error("request violates a precondition: {0}")]
    Precondition(String),
}

#[derive(Debug, Clone, Error)]
pub enum GatewayError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider error: {0}")]
    Provider(#[from] ProviderFailure),
    #[error("timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
}

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("step {step} ({role}): {source}")]
    Gateway {
        step: u32,
        role: Role,
        #[source]
        source: GatewayError,
    },
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no scores to aggregate")]
    EmptyInput,
    #[error("requested subset of {requested} exceeds dataset size {available}")]
    SubsetTooLarge { requested: usize, available: usize },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("output directory belongs to a different run: {0}")]
    RunMismatch(String),
    #[error(transparent)]
    Task(#[from] TaskError),
}

impl HarnessError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        HarnessError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        HarnessError::Json {
            context: context.into(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid override {0:?}: expected key=value")]
    BadOverride(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}
