use std::fmt;

use eplearner::Error;

/// Exit code 1: the configuration or inputs failed validation.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit code 2: a runtime failure (I/O, data, numerics).
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Validation { key: Option<String>, message: String },
    Runtime(String),
}

impl CliError {
    pub fn validation(key: Option<&str>, message: String) -> Self {
        CliError::Validation { key: key.map(str::to_string), message }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

/// One line, `error kind=<kind> [key=<key>] message=<text>`, so scripts can
/// split on the first three fields.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation { key: Some(k), message } => write!(f, "error kind=validation key={k} message={}", one_line(message)),
            CliError::Validation { key: None, message } => write!(f, "error kind=validation message={}", one_line(message)),
            CliError::Runtime(m) => write!(f, "error kind=runtime message={}", one_line(m)),
        }
    }
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_)
            | Error::Unsupported(_)
            | Error::KTooLarge { .. }
            | Error::BadFoldCount { .. }
            | Error::MethodOutcomeMismatch { .. }
            | Error::DimensionMismatch { .. } => CliError::Validation { key: None, message: e.to_string() },
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
