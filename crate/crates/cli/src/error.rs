use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] storyclass::Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Core(storyclass::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError::Core(storyclass::Error::InvalidInput(message.into()))
    }

    /// 1 usage error, 2 data error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(storyclass::Error::InvalidConfig(_)) => 1,
            CliError::Core(e) if e.is_numeric_failure() => 3,
            CliError::Core(_) => 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        assert_eq!(CliError::from(storyclass::Error::InvalidConfig("x".into())).exit_code(), 1);
        assert_eq!(CliError::data("x").exit_code(), 2);
        assert_eq!(CliError::from(storyclass::Error::NonFinite("x".into())).exit_code(), 3);
    }
}
