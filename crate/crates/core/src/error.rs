use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CpmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CpmError {
    #[error("corpus cannot be split: {0}")]
    UnsplittableCorpus(String),

    #[error("group `{0}` is not present in the corpus")]
    UnknownGroup(String),

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("template `{role}` is missing placeholder {{{placeholder}}}")]
    MissingPlaceholder { role: String, placeholder: String },

    #[error("no keyphrase survives the document-frequency threshold {min_df}")]
    EmptyVocabulary { min_df: usize },

    #[error("concept proposal returned no usable concepts: {0}")]
    ProposalEmpty(String),

    #[error("LLM backend failure: {0}")]
    Backend(String),

    #[error("corpus file has {} invalid line(s):\n{}", .0.len(), .0.join("\n"))]
    CorpusSchema(Vec<String>),

    #[error("invalid regex `{pattern}`: {message}")]
    InvalidRegex { pattern: String, message: String },

    #[error("invalid creatinine panel: {0}")]
    InvalidPanel(String),

    #[error("invalid feedback: {0}")]
    InvalidFeedback(String),

    #[error("round directory already exists: {0}")]
    PathCollision(PathBuf),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("every seed of the round failed: {0}")]
    AllSeedsFailed(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CpmError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CpmError::Io {
            path: path.into(),
            source,
        }
    }
}
