use std::fmt;

/// Structured errors for tensor construction and graph operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Operand shapes are incompatible for the named operation.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A shape is invalid on its own (zero-sized dim, wrong rank, ...).
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        detail: String,
    },
    /// Data buffer length does not match the product of the shape.
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    /// `backward` was called on a non-scalar node.
    NotScalar { shape: Vec<usize> },
    /// `log` applied to a non-positive element.
    NonPositiveLog { index: usize, value: f64 },
    /// L2 normalization of a zero-norm row.
    ZeroNorm { row: usize },
    /// A forward op produced a non-finite value from finite inputs.
    NonFinite { op: &'static str },
    /// `backward` was already run on this graph; build a fresh graph instead.
    BackwardAlreadyRun,
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    SliceOutOfRange {
        axis: usize,
        start: usize,
        len: usize,
        dim: usize,
    },
    EmptyConcat,
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            TensorError::InvalidShape { op, shape, detail } => {
                write!(f, "{op}: invalid shape {shape:?} ({detail})")
            }
            TensorError::DataLength {
                shape,
                expected,
                got,
            } => write!(
                f,
                "data length {got} does not match shape {shape:?} (expected {expected})"
            ),
            TensorError::NotScalar { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            TensorError::NonPositiveLog { index, value } => {
                write!(f, "log of non-positive value {value} at element {index}")
            }
            TensorError::ZeroNorm { row } => {
                write!(f, "cannot L2-normalize zero-norm row {row}")
            }
            TensorError::NonFinite { op } => {
                write!(f, "{op} produced a non-finite value")
            }
            TensorError::BackwardAlreadyRun => {
                write!(f, "backward already run on this graph")
            }
            TensorError::AxisOutOfRange { op, axis, rank } => {
                write!(f, "{op}: axis {axis} out of range for rank {rank}")
            }
            TensorError::SliceOutOfRange {
                axis,
                start,
                len,
                dim,
            } => write!(
                f,
                "slice [{start}..{}] out of range for axis {axis} of size {dim}",
                start + len
            ),
            TensorError::EmptyConcat => write!(f, "concat requires at least one input"),
        }
    }
}

impl std::error::Error for TensorError {}
