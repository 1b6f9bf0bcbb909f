//! Crate-wide error type.

use std::fmt;
use std::io;

/// Errors produced by the imaging, analysis, and planning stages.
#[derive(Debug)]
pub enum Error {
    /// Geometry parameter or range violation.
    Geometry(String),
    /// Scene construction or placement failure.
    Scene(String),
    /// Cube reconstruction / correction failure.
    Cube(String),
    /// Spectral analysis (MNF / classifier) failure.
    Spectral(String),
    /// Object detection failure.
    Detection(String),
    /// Trajectory planning failure.
    Trajectory(String),
    /// Sorting harness failure.
    Harness(String),
    /// Configuration parse or validation failure.
    Config(String),
    /// Malformed or unsupported file content.
    Format(String),
    /// Binary file with an unsupported major version.
    VersionMismatch { found: u16, supported: u16 },
    /// Stream checksum mismatch, with the byte offset of the stored CRC.
    Checksum { offset: u64, expected: u32, actual: u32 },
    /// Truncated file: expected at least `expected` bytes, found `actual`.
    Truncated { expected: u64, actual: u64 },
    /// Underlying I/O failure.
    Io(io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Geometry(m) => write!(f, "geometry: {m}"),
            Error::Scene(m) => write!(f, "scene: {m}"),
            Error::Cube(m) => write!(f, "cube: {m}"),
            Error::Spectral(m) => write!(f, "spectral: {m}"),
            Error::Detection(m) => write!(f, "detection: {m}"),
            Error::Trajectory(m) => write!(f, "trajectory: {m}"),
            Error::Harness(m) => write!(f, "harness: {m}"),
            Error::Config(m) => write!(f, "config: {m}"),
            Error::Format(m) => write!(f, "format: {m}"),
            Error::VersionMismatch { found, supported } => write!(
                f,
                "format: major version {found} is newer than supported {supported}"
            ),
            Error::Checksum { offset, expected, actual } => write!(
                f,
                "checksum: mismatch at byte offset {offset} (expected {expected:#010x}, got {actual:#010x})"
            ),
            Error::Truncated { expected, actual } => {
                write!(f, "truncated: need {expected} bytes, file has {actual}")
            }
            Error::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
