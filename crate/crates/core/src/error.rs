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

    #[error("dataset root {0} does not exist")]
    MissingRoot(PathBuf),

    #[error("no categories found under {0}")]
    NoCategories(PathBuf),

    #[error("category `{0}` contains no images")]
    EmptyCategory(String),

    #[error("duplicate image_id `{0}`")]
    DuplicateImageId(String),

    #[error("need at least 2 categories, found {0}")]
    TooFewCategories(usize),

    #[error("malformed manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error("unknown concept `{0}`")]
    UnknownConcept(String),

    #[error("malformed annotation: {0}")]
    Annotation(String),

    #[error("category `{category}` has {count} images, fewer than {folds} folds")]
    CategoryTooSmall {
        category: String,
        count: usize,
        folds: usize,
    },

    #[error("image decode failed: {0}")]
    Decode(String),

    #[error("operation requires a 3-channel image")]
    NotColor,

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("empty region")]
    EmptyRegion,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("insufficient points: need {needed}, have {available}")]
    InsufficientPoints { needed: usize, available: usize },

    #[error("insufficient descriptors for category `{category}`: need {needed}, have {available}")]
    InsufficientDescriptors {
        category: String,
        needed: usize,
        available: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing vocabulary: {0}")]
    MissingVocabulary(&'static str),

    #[error("recipe mismatch: {0}")]
    Recipe(String),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("missing feature vector for image `{0}`")]
    MissingFeature(String),

    #[error("invalid binary format: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
