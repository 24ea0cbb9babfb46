use thiserror::Error;

pub type Result<T> = std::result::Result<T, SbrError>;

#[derive(Debug, Error)]
pub enum SbrError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    /// The spread between the best and worst offline-to-expert similarity
    /// is too small to normalize the selection criterion.
    #[error("degenerate criterion normalization: S+ - S- = {gap:e}")]
    DegenerateStats { gap: f64 },

    #[error("planning error: {0}")]
    Planning(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<SbrError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SbrError {
    pub fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        SbrError::Dimension {
            context: context.into(),
            expected,
            got,
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        SbrError::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
