use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// The reduced map is undefined on `pi = 0` or `m = 0`.
    #[error("state lies on a region boundary (pi = {pi}, m = {m})")]
    Boundary { pi: f64, m: f64 },

    #[error("degenerate reconstruction: {0}")]
    Degenerate(String),

    #[error("precondition violated: {0}")]
    Contract(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config error at line {line}: {msg}")]
    ConfigLine { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigLine { .. } | Error::Config(_) | Error::InvalidInput(_) => 2,
            Error::Io(_) => 1,
            _ => 3,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn ensure_finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be finite, got {x}")))
    }
}
