use std::fmt;
use std::path::PathBuf;

use spfas_autograd::TensorError;

/// Umbrella error for the pipeline crates.
#[derive(Debug)]
pub enum Error {
    Tensor(TensorError),
    Data(DataError),
    Augment(AugmentError),
    Strategy(StrategyError),
    Metrics(MetricsError),
    Train(TrainError),
    Config(ConfigError),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Tensor(e) => write!(f, "tensor: {e}"),
            Error::Data(e) => write!(f, "data: {e}"),
            Error::Augment(e) => write!(f, "augment: {e}"),
            Error::Strategy(e) => write!(f, "strategy: {e}"),
            Error::Metrics(e) => write!(f, "metrics: {e}"),
            Error::Train(e) => write!(f, "train: {e}"),
            Error::Config(e) => write!(f, "config: {e}"),
        }
    }
}

impl std::error::Error for Error {}

macro_rules! from_variant {
    ($src:ty, $variant:ident) => {
        impl From<$src> for Error {
            fn from(e: $src) -> Self {
                Error::$variant(e)
            }
        }
    };
}

from_variant!(TensorError, Tensor);
from_variant!(DataError, Data);
from_variant!(AugmentError, Augment);
from_variant!(StrategyError, Strategy);
from_variant!(MetricsError, Metrics);
from_variant!(TrainError, Train);
from_variant!(ConfigError, Config);

/// Dataset container, manifest and generator errors.
#[derive(Debug)]
pub enum DataError {
    Io(PathBuf, std::io::Error),
    /// File does not start with the expected container magic.
    BadMagic { path: PathBuf, found: [u8; 4] },
    UnsupportedVersion { path: PathBuf, version: u16 },
    /// File shorter than its header promises.
    Truncated {
        path: PathBuf,
        expected: usize,
        got: usize,
    },
    /// Header dims disagree with the caller's expectation.
    ShapeHeaderMismatch {
        path: PathBuf,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    InvalidScale(f64),
    InvalidDims { h: usize, w: usize },
    SingleClassManifest,
    ManifestParse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    UnknownLabel(String),
    EmptyManifest,
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            DataError::BadMagic { path, found } => {
                write!(f, "{}: bad magic {found:?}", path.display())
            }
            DataError::UnsupportedVersion { path, version } => write!(
                f,
                "{}: unsupported container version {version}",
                path.display()
            ),
            DataError::Truncated {
                path,
                expected,
                got,
            } => write!(
                f,
                "{}: truncated (expected {expected} payload bytes, got {got})",
                path.display()
            ),
            DataError::ShapeHeaderMismatch {
                path,
                expected,
                got,
            } => write!(
                f,
                "{}: shape header {got:?} does not match expected {expected:?}",
                path.display()
            ),
            DataError::InvalidScale(s) => write!(f, "scale {s} outside (0, 1]"),
            DataError::InvalidDims { h, w } => write!(f, "dims {h}x{w} below minimum 16x16"),
            DataError::SingleClassManifest => {
                write!(f, "manifest holds a single class; need both real and fake")
            }
            DataError::ManifestParse { path, line, msg } => {
                write!(f, "{}:{line}: {msg}", path.display())
            }
            DataError::UnknownLabel(s) => write!(f, "unknown label {s:?}"),
            DataError::EmptyManifest => write!(f, "manifest has no entries"),
        }
    }
}

impl std::error::Error for DataError {}

#[derive(Debug)]
pub enum AugmentError {
    /// Half masks require even spatial dims.
    OddDimsForHalfMask { h: usize, w: usize },
    InvalidConfig(String),
}

impl fmt::Display for AugmentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentError::OddDimsForHalfMask { h, w } => {
                write!(f, "half masks need even dims, got {h}x{w}")
            }
            AugmentError::InvalidConfig(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for AugmentError {}

#[derive(Debug)]
pub enum StrategyError {
    /// Intra-class mixup was handed two samples with different labels.
    CrossClassPair,
    LambdaOutOfRange(f64),
    MixShapeMismatch { lhs: Vec<usize>, rhs: Vec<usize> },
    EmptyRealSet,
    ZeroNormEmbedding { id: String },
    MissingEmbedding { id: String },
    EmbeddingParse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    Io(PathBuf, std::io::Error),
}

impl fmt::Display for StrategyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategyError::CrossClassPair => {
                write!(f, "intra-class mixup requires samples of the same class")
            }
            StrategyError::LambdaOutOfRange(l) => write!(f, "lambda {l} outside [0, 1]"),
            StrategyError::MixShapeMismatch { lhs, rhs } => {
                write!(f, "mixup shapes differ: {lhs:?} vs {rhs:?}")
            }
            StrategyError::EmptyRealSet => {
                write!(f, "reweighting needs at least one real sample")
            }
            StrategyError::ZeroNormEmbedding { id } => {
                write!(f, "embedding for {id} has zero norm")
            }
            StrategyError::MissingEmbedding { id } => {
                write!(f, "no precomputed embedding for {id}")
            }
            StrategyError::EmbeddingParse { path, line, msg } => {
                write!(f, "{}:{line}: {msg}", path.display())
            }
            StrategyError::Io(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

impl std::error::Error for StrategyError {}

#[derive(Debug)]
pub enum MetricsError {
    /// Score and label key sets differ.
    KeyMismatch {
        missing_in_scores: Vec<String>,
        missing_in_labels: Vec<String>,
    },
    /// A class has no samples, so its error rate is undefined.
    EmptyClass { class: &'static str },
    EmptyGrid,
    UnsortedGrid,
    ScoreOutOfRange { id: String, score: f64 },
    ScoreParse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    Io(PathBuf, std::io::Error),
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::KeyMismatch {
                missing_in_scores,
                missing_in_labels,
            } => write!(
                f,
                "score/label key mismatch: missing in scores {missing_in_scores:?}, missing in labels {missing_in_labels:?}"
            ),
            MetricsError::EmptyClass { class } => {
                write!(f, "no {class} samples; error rate undefined")
            }
            MetricsError::EmptyGrid => write!(f, "threshold grid is empty"),
            MetricsError::UnsortedGrid => write!(f, "threshold grid must be sorted ascending"),
            MetricsError::ScoreOutOfRange { id, score } => {
                write!(f, "score {score} for {id} outside [0, 1]")
            }
            MetricsError::ScoreParse { path, line, msg } => {
                write!(f, "{}:{line}: {msg}", path.display())
            }
            MetricsError::Io(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

impl std::error::Error for MetricsError {}

#[derive(Debug)]
pub enum TrainError {
    /// Loss became non-finite; carries the step diagnostics.
    NumericalAbort {
        step: usize,
        lr: f64,
        focal: f64,
        supcon: f64,
    },
    LrStepOutOfRange { t: usize, total: usize },
    InvalidConfig(String),
    CheckpointFormat { path: PathBuf, msg: String },
    Io(PathBuf, std::io::Error),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::NumericalAbort {
                step,
                lr,
                focal,
                supcon,
            } => write!(
                f,
                "non-finite loss at step {step} (lr {lr:e}, focal {focal}, supcon {supcon})"
            ),
            TrainError::LrStepOutOfRange { t, total } => {
                write!(f, "step {t} beyond schedule length {total}")
            }
            TrainError::InvalidConfig(msg) => write!(f, "{msg}"),
            TrainError::CheckpointFormat { path, msg } => {
                write!(f, "{}: {msg}", path.display())
            }
            TrainError::Io(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

impl std::error::Error for TrainError {}

#[derive(Debug)]
pub enum ConfigError {
    UnknownKey { line: usize, key: String },
    Parse { line: usize, msg: String },
    Io(PathBuf, std::io::Error),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::UnknownKey { line, key } => {
                write!(f, "line {line}: unknown key {key:?}")
            }
            ConfigError::Parse { line, msg } => write!(f, "line {line}: {msg}"),
            ConfigError::Io(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

impl std::error::Error for ConfigError {}
