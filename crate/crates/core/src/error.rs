use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
///
/// The display strings are stable: the CLI and the cache readers of other
/// languages match on them.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite logits")]
    NonFiniteLogits,
    #[error("empty class axis")]
    EmptyClassAxis,
    #[error("K exceeds class count (k = {k}, classes = {classes})")]
    KExceedsClassCount { k: usize, classes: usize },
    #[error("K must be positive")]
    KNotPositive,
    #[error("index out of range (index {index}, classes {classes})")]
    IndexOutOfRange { index: usize, classes: usize },
    #[error("invalid probability mass ({0})")]
    InvalidProbabilityMass(String),
    #[error("invalid temperature {0}: must be positive")]
    InvalidTemperature(f64),
    #[error("invalid range [{lo}, {hi})")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("choice over an empty set")]
    EmptyChoice,
    #[error("invalid pipeline spec: {0}")]
    InvalidPipeline(String),
    #[error("mix partner required")]
    MixPartnerRequired,
    #[error("image shape mismatch: {0}")]
    ImageShape(String),

    #[error("record count mismatch (header says {expected}, got {actual})")]
    RecordCountMismatch { expected: u64, actual: u64 },
    #[error("index width overflow (index {index} does not fit {width} bytes)")]
    IndexWidthOverflow { index: u32, width: usize },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("cache corrupt: {0}")]
    CacheCorrupt(String),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("sample out of range (sample {sample}, samples {num_samples})")]
    SampleOutOfRange { sample: u64, num_samples: u64 },

    #[error("head dimension mismatch: {0}")]
    HeadDimensionMismatch(String),
    #[error("resolution misaligned: {0} is not a positive multiple of 32")]
    ResolutionMisaligned(usize),
    #[error("input shape mismatch: {0}")]
    InputShapeMismatch(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("model file invalid: {0}")]
    ModelFile(String),

    #[error("seed violates constraint: {0}")]
    SeedViolatesConstraint(String),
    #[error("invalid search target: {0}")]
    InvalidSearch(String),

    #[error("cache/config mismatch: {0}")]
    CacheConfigMismatch(String),
    #[error("invalid run config: {0}")]
    InvalidRunConfig(String),
    #[error("correlation needs at least two classes")]
    TooFewClasses,
    #[error("invalid predictions: {0}")]
    InvalidPredictions(String),

    #[error("corpus invalid: {0}")]
    Corpus(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by invalid user input rather than by the
    /// environment (I/O) or by corrupt data.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::CacheCorrupt(_) | Error::ModelFile(_) | Error::Corpus(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
