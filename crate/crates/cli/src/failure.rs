use std::fmt;

use rsdyn::Error;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ANALYSIS: i32 = 3;
pub const EXIT_USAGE: i32 = 4;

/// A message plus the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_)
        | Error::Format(_)
        | Error::InvariantViolation(_)
        | Error::EmptyInput
        | Error::SequenceTooLong { .. }
        | Error::DimensionMismatch { .. } => EXIT_INPUT,
        Error::Config(_)
        | Error::BadRange(_)
        | Error::LayerOutOfRange { .. }
        | Error::UnitOutOfRange { .. }
        | Error::UnsupportedHook(_) => EXIT_USAGE,
        _ => EXIT_ANALYSIS,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::input(e.to_string())
    }
}

pub type CliResult<T> = Result<T, Failure>;
