use std::io;
use std::path::{Path, PathBuf};

/// Failures of the file, experiment and command-line layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input: bad flags, configuration, file contents or plans.
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] fedskew_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    /// A run that started but could not finish.
    #[error("{0}")]
    Runtime(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// 1 for validation errors, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid(_) => 1,
            Error::Core(fedskew_core::Error::NonFinite(_)) => 2,
            Error::Core(_) => 1,
            Error::Io { .. } | Error::Runtime(_) => 2,
        }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
        move |source| Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::Invalid(format!($($arg)*))
    };
}

pub(crate) use invalid;
