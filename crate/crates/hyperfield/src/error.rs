//! Process-level error classification. Every failure surfaced by the CLI is
//! one of three kinds, each with a fixed exit code: configuration problems
//! (2), bad or missing data (3), and numerical failures (4).

use hyperfield_core::error::CoreError;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Data(_) => 3,
            AppError::Numerical(_) => 4,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        AppError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        AppError::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        AppError::Numerical(msg.into())
    }
}

impl From<CoreError> for AppError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NonFinite(_) => AppError::Numerical(e.to_string()),
            CoreError::InvalidData(_) | CoreError::EmptySceneBox => AppError::Data(e.to_string()),
            _ => AppError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, AppError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_stable() {
        assert_eq!(AppError::config("x").exit_code(), 2);
        assert_eq!(AppError::data("x").exit_code(), 3);
        assert_eq!(AppError::numerical("x").exit_code(), 4);
    }

    #[test]
    fn core_errors_map_by_kind() {
        let numeric: AppError = CoreError::NonFinite("loss".into()).into();
        assert_eq!(numeric.exit_code(), 4);
        let data: AppError = CoreError::InvalidData("bad cube".into()).into();
        assert_eq!(data.exit_code(), 3);
        let config: AppError = CoreError::MissingWavelength.into();
        assert_eq!(config.exit_code(), 2);
    }
}
