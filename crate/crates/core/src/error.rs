use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    // ---- tensor / graph ----
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("log of non-positive value {0}")]
    LogDomain(f64),
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("backward called before any forward operation was recorded")]
    EmptyTape,
    #[error("backward already ran on this tape")]
    TapeConsumed,
    #[error("finite-difference step {0} outside [1e-6, 1e-4]")]
    BadFdStep(f64),

    // ---- rng ----
    #[error("categorical weights must be non-negative and sum to a positive value")]
    BadCategoricalWeights,

    // ---- nn ----
    #[error("duplicate parameter name {0:?}")]
    DuplicateParameter(String),
    #[error("unknown parameter name {0:?}")]
    UnknownParameter(String),
    #[error("parameter {0:?} has no gradient")]
    MissingGrad(String),
    #[error("dropout rate must be in [0,1), got {0}")]
    BadDropoutRate(f64),

    // ---- model / objective ----
    #[error("model config: {0}")]
    BadModelConfig(String),
    #[error("latent dimension {d} is not divisible by category count {k}")]
    IndivisibleLatent { d: usize, k: usize },
    #[error("category index {c} out of range for {k} categories")]
    CategoryOutOfRange { c: usize, k: usize },
    #[error("bernoulli reconstruction requires targets in [0,1]; found {0}")]
    TargetOutOfRange(f64),
    #[error("beta weights must be non-negative")]
    NegativeBeta,
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    // ---- data ----
    #[error("{path}: bad IDX magic at byte {offset}")]
    IdxMagic { path: String, offset: usize },
    #[error("{path}: unsupported IDX type code {code:#04x} at byte {offset}")]
    IdxType {
        path: String,
        code: u8,
        offset: usize,
    },
    #[error("{path}: truncated IDX payload at byte {offset}: expected {expected} bytes, found {actual}")]
    IdxTruncated {
        path: String,
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: IDX dimensions {dims:?} do not describe {what}")]
    IdxDims {
        path: String,
        dims: Vec<usize>,
        what: &'static str,
    },
    #[error("image and label files disagree on sample count: {images} vs {labels}")]
    SampleCountMismatch { images: usize, labels: usize },

    // ---- eval ----
    #[error("bandwidth grid is empty")]
    EmptyBandwidthGrid,
    #[error("bandwidth must be positive, got {0}")]
    BadBandwidth(f64),
    #[error("need at least {folds} points for {folds}-fold cross-validation, got {points}")]
    TooFewPoints { points: usize, folds: usize },
    #[error("grid expects {expected} images ({rows}x{cols}), got {actual}")]
    GridCountMismatch {
        expected: usize,
        rows: usize,
        cols: usize,
        actual: usize,
    },
    #[error("image has {0} pixels, expected {1}")]
    BadImageLength(usize, usize),

    // ---- checkpoint ----
    #[error("not a checkpoint file (bad magic)")]
    CheckpointMagic,
    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),
    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("truncated checkpoint at byte {0}")]
    CheckpointTruncated(usize),
    #[error("checkpoint field {0:?} is missing or malformed")]
    CheckpointField(&'static str),
    #[error("checkpoint does not match the model: {0}")]
    CheckpointMismatch(String),
    #[error("gradient check failed: max relative error {max_err:e} exceeds {threshold:e}")]
    GradCheckFailed { max_err: f64, threshold: f64 },

    // ---- config ----
    #[error("unknown config key {0:?}")]
    UnknownConfigKey(String),
    #[error("config key {key:?}: invalid value {value:?}: {reason}")]
    InvalidConfigValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("config line {line}: expected key=value, got {text:?}")]
    MalformedConfigLine { line: usize, text: String },

    // ---- io ----
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
