use std::fmt;
use std::path::Path;

/// Exit status for configuration, usage and domain failures.
pub const EXIT_DOMAIN: i32 = 1;
/// Exit status for filesystem failures.
pub const EXIT_IO: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Core(ts2img::Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => EXIT_IO,
            CliError::Core(e) if e.is_io() => EXIT_IO,
            _ => EXIT_DOMAIN,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

impl From<ts2img::Error> for CliError {
    fn from(e: ts2img::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}
