//! Batch experiment harness for the zopn toolkit: plain-text experiment
//! configs, seeded parallel runs, trace aggregation, and CSV/SVG emission.

pub mod aggregate;
pub mod config;
pub mod emit;
pub mod runner;

use std::fmt;

/// Harness-level error with a process exit code: 2 for configuration
/// problems, 3 for numerical or I/O failures.
#[derive(Debug)]
pub enum HarnessError {
    Config(String),
    Numerical(String),
    Io(std::io::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numerical(_) | HarnessError::Io(_) => 3,
        }
    }
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Config(msg) => write!(f, "configuration error: {msg}"),
            HarnessError::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            HarnessError::Io(err) => write!(f, "i/o error: {err}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<std::io::Error> for HarnessError {
    fn from(err: std::io::Error) -> Self {
        HarnessError::Io(err)
    }
}

impl From<zopn_core::CoreError> for HarnessError {
    fn from(err: zopn_core::CoreError) -> Self {
        use zopn_core::CoreError::*;
        match err {
            InvalidConfig(_) | MissingTruth(_) | DimensionMismatch { .. } => {
                HarnessError::Config(err.to_string())
            }
            _ => HarnessError::Numerical(err.to_string()),
        }
    }
}

impl From<zopn_core::problems::LibsvmError> for HarnessError {
    fn from(err: zopn_core::problems::LibsvmError) -> Self {
        HarnessError::Config(err.to_string())
    }
}
