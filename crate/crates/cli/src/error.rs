use std::fmt;

use udn_core::UdnError;

#[derive(Debug)]
pub enum CliError {
    /// A checked property does not hold.
    Violation(String),
    Config(String),
    Core(UdnError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Violation(_) => 1,
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_numeric_abort() => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Violation(m) => write!(f, "violation: {m}"),
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<UdnError> for CliError {
    fn from(e: UdnError) -> Self {
        CliError::Core(e)
    }
}

pub fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}
