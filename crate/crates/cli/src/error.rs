//! Error kinds mapped onto process exit codes.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad arguments or configuration: exit 1.
    Config,
    /// Unreadable or inconsistent input data: exit 2.
    Data,
    /// The estimate itself is unusable: exit 3.
    Numerical,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Config, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Data, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Numerical, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<odom_core::Error> for CliError {
    fn from(e: odom_core::Error) -> Self {
        use odom_core::Error as E;
        match e {
            E::Invalid { .. } => CliError::config(e.to_string()),
            E::NoCorrespondences | E::DegenerateGeometry { .. } => CliError::numerical(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}
