use std::path::PathBuf;

/// Every failure the pipeline can surface.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("degenerate cloud: all points coincide")]
    DegenerateCloud,
    #[error("k = {k} out of range for {n} points")]
    BadK { k: usize, n: usize },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("bad count {0}")]
    BadCount(usize),
    #[error("point cloud has no normals")]
    MissingNormals,
    #[error("wavelength must be positive, got {0}")]
    BadWavelength(f64),
    #[error("mask region contains no points")]
    EmptyIntersection,
    #[error("region holds {ratio:.3} of the points, outside [0.1, 0.5]")]
    RatioOutOfRange { ratio: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("function under gradient check is not scalar valued (shape {rows}x{cols})")]
    NonScalarOutput { rows: usize, cols: usize },
    #[error("empty patch")]
    EmptyPatch,
    #[error("codebook level {0} has no entries")]
    EmptyLevel(usize),
    #[error("empty input")]
    EmptyInput,
    #[error("no template tokens to attend to")]
    EmptyTemplates,
    #[error("file format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("labels contain a single class")]
    SingleClass,
    #[error("count mismatch: {0}")]
    CountMismatch(String),
    #[error("missing labels: {0}")]
    MissingLabels(String),
    #[error("loss became NaN at step {step} (sample seed {sample_seed})")]
    NaNLoss { step: usize, sample_seed: u64 },
    #[error("augmentation failed after {attempts} attempts: {last}")]
    AugmentationFailed { attempts: usize, last: Box<Error> },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable identifier for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::MalformedFile(_) => "MalformedFile",
            Error::EmptyCloud => "EmptyCloud",
            Error::DegenerateCloud => "DegenerateCloud",
            Error::BadK { .. } => "BadK",
            Error::TooFewPoints { .. } => "TooFewPoints",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Unsupported(_) => "Unsupported",
            Error::BadCount(_) => "BadCount",
            Error::MissingNormals => "MissingNormals",
            Error::BadWavelength(_) => "BadWavelength",
            Error::EmptyIntersection => "EmptyIntersection",
            Error::RatioOutOfRange { .. } => "RatioOutOfRange",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonFinite(_) => "NonFinite",
            Error::NonScalarOutput { .. } => "NonScalarOutput",
            Error::EmptyPatch => "EmptyPatch",
            Error::EmptyLevel(_) => "EmptyLevel",
            Error::EmptyInput => "EmptyInput",
            Error::EmptyTemplates => "EmptyTemplates",
            Error::VersionMismatch { .. } => "VersionMismatch",
            Error::CorruptFile(_) => "CorruptFile",
            Error::SingleClass => "SingleClass",
            Error::CountMismatch(_) => "CountMismatch",
            Error::MissingLabels(_) => "MissingLabels",
            Error::NaNLoss { .. } => "NaNLoss",
            Error::AugmentationFailed { .. } => "AugmentationFailed",
            Error::Json(_) => "Json",
        }
    }

    /// Errors that a caller may resolve by resampling random parameters.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            Error::EmptyIntersection | Error::RatioOutOfRange { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
