//! Error type shared by every module in the crate.
//!
//! Variants are grouped by how callers are expected to react: argument
//! errors are usage bugs, data errors mean an input file or signal is
//! unusable, and numerical errors mean an iterative routine could not
//! produce a trustworthy result.

use std::fmt;
use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
#[derive(Debug)]
pub enum Error {
    /// An operation that needs at least one sample received none.
    EmptySignal(&'static str),
    /// A signal was identically zero where a nonzero value is required,
    /// e.g. as a normalization divisor.
    DegenerateSignal(&'static str),
    /// Two sequences that must agree in length do not.
    LengthMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },
    /// Acquisition metadata (dwell time, transmitter frequency, edit label)
    /// disagrees between signals that are being combined.
    MetadataMismatch(String),
    /// A caller-supplied argument is out of range or inconsistent.
    InvalidArg(String),
    /// A ppm window resolves to an empty index range on the given axis.
    EmptyWindow { lo_ppm: f64, hi_ppm: f64 },
    /// A peak search found no usable maximum inside its window.
    UnresolvedPeak(String),
    /// A parameter tensor has the wrong shape for the model configuration.
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    /// An iterative fit stopped without meeting its convergence tolerance.
    NonConvergence { context: String, iterations: usize },
    /// Too few informative pairs remain for a statistical test.
    InsufficientPairs { effective: usize },
    /// Training produced a non-finite loss or gradient.
    Diverged { epoch: usize, step: usize },
    /// A file's contents do not match the expected layout.
    Format(String),
    /// An underlying I/O operation failed.
    Io { path: PathBuf, source: std::io::Error },
}

impl Error {
    /// Wraps an I/O error together with the path being accessed.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptySignal(ctx) => write!(f, "empty signal: {ctx}"),
            Error::DegenerateSignal(ctx) => write!(f, "degenerate all-zero signal: {ctx}"),
            Error::LengthMismatch { context, left, right } => {
                write!(f, "length mismatch in {context}: {left} vs {right}")
            }
            Error::MetadataMismatch(msg) => write!(f, "metadata mismatch: {msg}"),
            Error::InvalidArg(msg) => write!(f, "invalid argument: {msg}"),
            Error::EmptyWindow { lo_ppm, hi_ppm } => {
                write!(f, "window [{lo_ppm}, {hi_ppm}] ppm covers no axis points")
            }
            Error::UnresolvedPeak(msg) => write!(f, "no usable peak: {msg}"),
            Error::ShapeMismatch { tensor, expected, found } => {
                write!(f, "tensor {tensor}: expected shape {expected:?}, found {found:?}")
            }
            Error::NonConvergence { context, iterations } => {
                write!(f, "{context}: no convergence after {iterations} iterations")
            }
            Error::InsufficientPairs { effective } => {
                write!(f, "only {effective} informative pairs; statistical test needs at least 1")
            }
            Error::Diverged { epoch, step } => {
                write!(f, "training diverged at epoch {epoch}, step {step}")
            }
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
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

/// Process exit code for a failure, used by the command-line front end.
///
/// 2 marks usage errors, 3 unreadable or inconsistent data, and 4
/// numerical failures (non-convergence, divergence, degenerate input).
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArg(_) => 2,
        Error::Io { .. }
        | Error::Format(_)
        | Error::LengthMismatch { .. }
        | Error::MetadataMismatch(_)
        | Error::ShapeMismatch { .. }
        | Error::EmptyWindow { .. } => 3,
        Error::EmptySignal(_)
        | Error::DegenerateSignal(_)
        | Error::UnresolvedPeak(_)
        | Error::NonConvergence { .. }
        | Error::InsufficientPairs { .. }
        | Error::Diverged { .. } => 4,
    }
}
