use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("undefined perplexity: empty sequence")]
    EmptySequence,

    #[error("labels not separable: need at least 2 examples with 2 distinct labels")]
    LabelsNotSeparable,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("training diverged: loss increased by more than 1e-3 over a 10-epoch window (epoch {epoch})")]
    TrainingDiverged { epoch: usize },

    #[error("scorer kind EXTERNAL must be queried through external_score")]
    ExternalScorerLocal,

    #[error("external scorer {endpoint}: {message}")]
    ExternalScorer { endpoint: String, message: String },

    #[error("empty calibration set")]
    EmptyCalibrationSet,

    #[error("unknown model id in pricing table: {0}")]
    UnknownModel(String),

    #[error("no backend registered for model id {0}")]
    UnknownBackend(String),

    #[error("backend {model} failed: {message}")]
    Backend { model: String, message: String },

    #[error("vocabulary too small: need at least 2 tokens, got {0}")]
    VocabTooSmall(usize),

    #[error("init token {0:?} not present in vocabulary")]
    MissingInitToken(String),

    #[error("unknown instruction id {0:?}")]
    UnknownInstruction(String),

    #[error("perplexity constraint requires a language model")]
    MissingLanguageModel,

    #[error("need at least {need} clean queries, got {got}")]
    TooFewCleanQueries { need: usize, got: usize },

    #[error("scorer fingerprint mismatch: gadget was optimized against {gadget}, declared surrogate is {declared}")]
    FingerprintMismatch { gadget: String, declared: String },

    #[error("workload generation: {0}")]
    Workload(String),

    #[error("unsupported schema {got:?}, expected {expected:?}")]
    Schema { expected: String, got: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
