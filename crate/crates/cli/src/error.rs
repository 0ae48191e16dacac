use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_ORACLE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error(transparent)]
    Core(#[from] funsurvey_core::Error),

    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },

    #[error("oracle check failed")]
    OracleFailed,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::OracleFailed => EXIT_ORACLE,
            _ => EXIT_VALIDATION,
        }
    }
}
