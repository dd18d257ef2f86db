use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("kernel exceeds padded input: extent {extent} + 2*{padding} < dilated kernel span {span}")]
    KernelExceedsInput {
        extent: usize,
        padding: usize,
        span: usize,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate variance: batchnorm training needs at least 2 values per channel, got {0}")]
    DegenerateVariance(usize),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("state error: {0}")]
    State(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint incompatible with model: {}", .0.join(", "))]
    Incompatible(Vec<String>),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("stratification error: class {class} has {count} members, need at least {k}")]
    Stratification { class: usize, count: usize, k: usize },

    #[error("confusion column for true class {0} is empty")]
    UndefinedColumn(usize),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("fold {fold}: {source}")]
    InFold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// The innermost error, looking through fold context.
    pub fn root(&self) -> &Error {
        match self {
            Error::InFold { source, .. } => source.root(),
            other => other,
        }
    }
}
