use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("degenerate quadrilateral for piece {piece_id}: {reason}")]
    DegenerateQuad { piece_id: String, reason: String },

    #[error("class {class} has {count} piece(s); at least 2 are required to split")]
    InsufficientPieces { class: u32, count: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("tile size {size} exceeds piece {piece_id} ({width}x{height})")]
    TileTooLarge {
        piece_id: String,
        size: u32,
        width: u32,
        height: u32,
    },

    #[error("non-finite raw score at index {0}")]
    NonFinite(usize),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("backend failed: {0}")]
    Backend(String),

    #[error("loss curve has {0} epochs; at least 10 are required")]
    CurveTooShort(usize),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("invalid class pair ({0}, {1})")]
    InvalidPair(u32, u32),

    #[error("missing similarity pair {0}")]
    MissingPair(String),

    #[error("cannot compare similarities across models {0} and {1}")]
    CrossModel(String, String),

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::DegenerateQuad { .. }
                | Error::InsufficientPieces { .. }
                | Error::Empty(_)
                | Error::Schema(_)
        )
    }
}
