use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("image {height}x{width} is smaller than the minimum slice scale {min_scale}; resize it first")]
    ImageTooSmall {
        height: usize,
        width: usize,
        min_scale: usize,
    },

    #[error("input {got}x{got} is too small for a six-level pyramid; need at least {required}x{required}")]
    PyramidTooSmall { got: usize, required: usize },

    #[error("malformed RLE: {0}")]
    Rle(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: unknown key `{0}`")]
    UnknownConfigKey(String),

    #[error("config: bad value for `{key}`: {reason}")]
    ConfigValue { key: String, reason: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("missing mask for defect image {0}")]
    MissingMask(PathBuf),

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
