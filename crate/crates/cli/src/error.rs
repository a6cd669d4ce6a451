use std::fmt;

/// Failure of a command, printed as one `key=value` line on stderr.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration. Exit code 2.
    Usage {
        key: Option<String>,
        line: Option<usize>,
        msg: String,
    },
    /// A verification check failed. Exit code 1.
    Check(String),
    /// Anything that went wrong while running. Exit code 1.
    Runtime(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage {
            key: None,
            line: None,
            msg: msg.into(),
        }
    }

    pub fn key(key: impl Into<String>, line: Option<usize>, msg: impl Into<String>) -> Self {
        CliError::Usage {
            key: Some(key.into()),
            line,
            msg: msg.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage { .. } => 2,
            CliError::Check(_) | CliError::Runtime(_) => 1,
        }
    }
}

fn quoted(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " "))
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage { key, line, msg } => {
                write!(f, "error kind=usage")?;
                if let Some(k) = key {
                    write!(f, " key={k}")?;
                }
                if let Some(l) = line {
                    write!(f, " line={l}")?;
                }
                write!(f, " msg={}", quoted(msg))
            }
            CliError::Check(msg) => write!(f, "error kind=check msg={}", quoted(msg)),
            CliError::Runtime(msg) => write!(f, "error kind=runtime msg={}", quoted(msg)),
        }
    }
}

impl std::error::Error for CliError {}

impl From<rdcomm_core::Error> for CliError {
    fn from(e: rdcomm_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io: {e}"))
    }
}
