//! Exit-code carrying errors: 1 runtime failure, 2 bad configuration or input,
//! 3 network too large for exact enumeration.

use std::fmt;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn runtime(message: impl fmt::Display) -> Self {
        CliError { code: 1, message: message.to_string() }
    }

    pub fn config(message: impl fmt::Display) -> Self {
        CliError { code: 2, message: message.to_string() }
    }

    pub fn not_enumerable(message: impl fmt::Display) -> Self {
        CliError { code: 3, message: message.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Input problems (unreadable or malformed files, bad settings) exit 2, the rest 1.
pub fn classify(e: imb_core::ImbError) -> CliError {
    use imb_core::ImbError::*;
    match e {
        Config(_) | Parse { .. } | Io { .. } | Serde(_) => CliError::config(e),
        _ => CliError::runtime(e),
    }
}

pub fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::runtime(format!("cannot write {}: {e}", path.display()))
}
