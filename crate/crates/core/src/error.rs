use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model: {variable}: {reason}")]
    Invalid { variable: String, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("joint skill space has {size} configurations, above the cap of {cap}; raise the cap to proceed")]
    Capacity { size: usize, cap: usize },
    #[error("evidence has zero probability under the model")]
    Contradiction,
    #[error("question {0} does not exist")]
    UnknownQuestion(usize),
    #[error("state {state} is out of range for question {question}")]
    InvalidState { question: usize, state: usize },
    #[error("question {0} already observed")]
    Duplicate(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("naive enumeration over {count} questions exceeds the cap of {cap}")]
    NaiveCap { count: usize, cap: usize },
}

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("invalid learning configuration: {0}")]
    Config(String),
    #[error("all {restarts} restarts ended infeasible; worst residual violations: {diagnostics}")]
    Infeasible { restarts: usize, diagnostics: String },
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("header: {0}")]
    Header(String),
    #[error("schema error at {path}: {reason}")]
    Schema { path: String, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("grade scale: {0}")]
    GradeScale(String),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("session is finished")]
    Finished,
    #[error("question {0} was already answered")]
    AlreadyAnswered(usize),
    #[error("question {0} does not exist")]
    UnknownQuestion(usize),
    #[error("state {state} is out of range for question {question}")]
    InvalidState { question: usize, state: usize },
    #[error("answer vector has {found} entries, model has {expected} questions")]
    AnswerLength { expected: usize, found: usize },
    #[error("invalid session configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("insufficient data: {0}")]
    Sizing(String),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}
