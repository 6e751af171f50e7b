use std::path::PathBuf;

/// Failure modes shared by the library and the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, range, domain).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A file did not match its declared binary or text layout.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for contract violations, 2 for format and IO problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Contract(_) => 1,
            Error::Format { .. } | Error::Config(_) | Error::Io { .. } => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! contract {
    ($($arg:tt)*) => {
        $crate::error::Error::Contract(format!($($arg)*))
    };
}
pub(crate) use contract;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err($crate::error::contract!($($arg)*));
        }
    };
}
pub(crate) use ensure;
