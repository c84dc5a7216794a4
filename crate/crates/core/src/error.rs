use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the reconstruction library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("grid of {0:?} voxels overflows the address space")]
    Size([usize; 3]),

    #[error("spectrum is not Hermitian: max |Im| = {max_imag:e}, max |Re| = {max_real:e}")]
    Symmetry { max_imag: f64, max_real: f64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("bad volume file format: {0}")]
    Format(String),

    #[error("volume file length mismatch: expected {expected} bytes, found {found}")]
    Length { expected: u64, found: u64 },

    #[error("non-finite value in volume data at index {0}")]
    Data(usize),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn argument(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
