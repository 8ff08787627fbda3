//! Exit-code classification.

use std::fmt;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: EXIT_DATA, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { code: EXIT_NUMERICAL, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Configuration problems are usage errors; everything the library reports
/// about inputs, files and geometry is a data error.
impl From<morphface::Error> for CliError {
    fn from(e: morphface::Error) -> Self {
        match e {
            morphface::Error::Config(_) => Self::usage(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
