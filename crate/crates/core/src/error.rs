use std::fmt;
use std::path::PathBuf;

use crate::tensor::Shape;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by the tensor engine, data pipeline, and file formats.
#[derive(Debug)]
pub enum Error {
    /// Data provided to a tensor constructor does not match the shape.
    DataLength { expected: usize, got: usize },
    /// Two tensors disagree on a dimension required to match.
    DimMismatch {
        op: &'static str,
        dim: &'static str,
        left: usize,
        right: usize,
    },
    /// An operation received a tensor with the wrong channel count.
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    /// Convolution kernels must be square with odd side length.
    KernelSize { got: usize },
    /// An operation that requires elements received an empty tensor.
    EmptyTensor { op: &'static str },
    /// `backward` was called on a non-scalar value.
    NonScalarLoss { shape: Shape },
    /// A trainable parameter had no gradient at optimizer-step time.
    MissingGradient { name: String },
    /// The same parameter name was bound twice with different tensors.
    ParameterRebound { name: String },
    /// A segmentation label was outside the configured region count.
    LabelOutOfRange { label: usize, k: usize },
    /// Fewer region vectors than a pairwise operation needs.
    TooFewVectors { got: usize },
    /// A mask file required by the file-backed provider is missing.
    MaskMissing { id: String, path: PathBuf },
    /// Registration radius leaves less than a quarter of the patch overlapping.
    RegistrationOverlap {
        radius: usize,
        height: usize,
        width: usize,
    },
    /// The requested patch does not fit inside the source image.
    PatchTooLarge {
        size: usize,
        height: usize,
        width: usize,
    },
    /// A dataset or split that must be non-empty was empty.
    EmptyDataset { what: &'static str },
    /// Stage-2 training requires a fully frozen teacher.
    TeacherNotFrozen { name: String },
    /// A checkpoint was written for a different model kind.
    CheckpointKind { expected: String, got: String },
    /// A checkpoint tensor does not match the architecture descriptor.
    CheckpointTensor {
        name: String,
        expected: String,
        got: String,
    },
    /// A serialized file is malformed (bad magic, truncation, bad header).
    Format { path: PathBuf, detail: String },
    /// Two evaluation directories disagree on their file sets.
    CounterpartMissing { name: String, dir: PathBuf },
    /// Invalid configuration value (flag or config file).
    Config { detail: String },
    /// Underlying I/O failure.
    Io { path: PathBuf, source: std::io::Error },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape volume {expected}")
            }
            Error::DimMismatch { op, dim, left, right } => {
                write!(f, "{op}: {dim} mismatch ({left} vs {right})")
            }
            Error::ChannelMismatch { op, expected, got } => {
                write!(f, "{op}: expected {expected} channels, got {got}")
            }
            Error::KernelSize { got } => {
                write!(f, "kernel side must be odd, got {got}")
            }
            Error::EmptyTensor { op } => write!(f, "{op}: empty tensor"),
            Error::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape}")
            }
            Error::MissingGradient { name } => {
                write!(f, "no gradient for trainable parameter `{name}`")
            }
            Error::ParameterRebound { name } => {
                write!(f, "parameter `{name}` bound twice with different values")
            }
            Error::LabelOutOfRange { label, k } => {
                write!(f, "label {label} out of range for {k} regions")
            }
            Error::TooFewVectors { got } => {
                write!(f, "pairwise similarity needs at least 2 vectors, got {got}")
            }
            Error::MaskMissing { id, path } => {
                write!(f, "no mask for image `{id}` at {}", path.display())
            }
            Error::RegistrationOverlap { radius, height, width } => write!(
                f,
                "radius {radius} leaves under 25% overlap on a {height}x{width} patch"
            ),
            Error::PatchTooLarge { size, height, width } => {
                write!(f, "patch size {size} exceeds image {height}x{width}")
            }
            Error::EmptyDataset { what } => write!(f, "{what} is empty"),
            Error::TeacherNotFrozen { name } => {
                write!(f, "teacher parameter `{name}` is not frozen")
            }
            Error::CheckpointKind { expected, got } => {
                write!(f, "checkpoint kind `{got}` cannot load as `{expected}`")
            }
            Error::CheckpointTensor { name, expected, got } => {
                write!(f, "checkpoint tensor `{name}`: expected {expected}, got {got}")
            }
            Error::Format { path, detail } => {
                write!(f, "{}: {detail}", path.display())
            }
            Error::CounterpartMissing { name, dir } => {
                write!(f, "`{name}` has no counterpart in {}", dir.display())
            }
            Error::Config { detail } => write!(f, "invalid configuration: {detail}"),
            Error::Io { path, source } => {
                write!(f, "{}: {source}", path.display())
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn format_err(path: impl Into<PathBuf>, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.into(),
        detail: detail.into(),
    }
}
