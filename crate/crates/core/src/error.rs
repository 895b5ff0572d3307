use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid slab spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("grid has {actual} readings, expected {rows}x{cols}")]
    GridCount {
        rows: usize,
        cols: usize,
        actual: usize,
    },

    #[error("duplicate scan coordinate ({x}, {y})")]
    DuplicateCoordinate { x: f64, y: f64 },

    #[error("grid {rows}x{cols} is too small for {method} interpolation")]
    GridTooSmall {
        rows: usize,
        cols: usize,
        method: &'static str,
    },

    #[error("zone {zone} has {count} usable readings; need at least 2")]
    ZoneTooSmall { zone: String, count: usize },

    #[error("point ({x}, {y}) lies outside the mask extent")]
    OutOfExtent { x: f64, y: f64 },

    #[error("k = {0} is not supported here; expected k = 2")]
    UnsupportedK(usize),

    #[error("backward pass called without cached activations")]
    MissingCache,

    #[error(
        "training diverged at epoch {epoch}, batch {batch}: loss {loss}, gradient norm {grad_norm:.3e} \
         (learning rate {learning_rate}); lower the learning rate or check input scaling"
    )]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
        grad_norm: f64,
        learning_rate: f64,
    },

    #[error("normalization fingerprint mismatch: model {model:016x}, input {input:016x}")]
    FingerprintMismatch { model: u64, input: u64 },

    #[error("unsupported model file version {0}")]
    ModelVersion(u32),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Wraps the error with the name of the pipeline stage that raised it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
