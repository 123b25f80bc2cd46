use std::fmt;
use std::process::ExitCode;

use sharpcomp::Error;

pub const OK: u8 = 0;
pub const INTERNAL: u8 = 1;
pub const CONFIG: u8 = 2;
pub const DIVERGENCE: u8 = 3;
pub const IO: u8 = 4;
pub const BOUND_VIOLATED: u8 = 5;

/// A failure carrying its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn exit(&self) -> ExitCode {
        ExitCode::from(self.code)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config { .. }
            | Error::EmptySamples(_)
            | Error::Insufficient(_)
            | Error::ZeroVariance(_)
            | Error::Shape { .. }
            | Error::Structure(_) => CONFIG,
            Error::Divergence { .. } => DIVERGENCE,
            Error::Io { .. }
            | Error::Format { .. }
            | Error::Truncated { .. }
            | Error::CountMismatch { .. }
            | Error::Serde(_)
            | Error::Csv(_) => IO,
            Error::Contract(_) | Error::NumericFailure { .. } => INTERNAL,
        };
        Failure::new(code, e.to_string())
    }
}

pub fn io_failure(path: &std::path::Path, e: std::io::Error) -> Failure {
    Failure::new(IO, format!("I/O error on {}: {e}", path.display()))
}
