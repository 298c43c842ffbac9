use thiserror::Error;

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NnError {
    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], found: &[usize]) -> Self {
        NnError::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }
}
