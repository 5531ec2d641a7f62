use std::path::PathBuf;

use dendrite_core::Error as CoreError;

/// Process exit status for each failure class.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const SOLVER: u8 = 3;
    pub const IO: u8 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("usage: {0}")]
    Usage(String),
    /// Parse or semantic problem in a configuration, with the offending
    /// field path when there is one.
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Core(#[from] CoreError),
    #[error("I/O error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    /// A file exists but cannot be decoded.
    #[error("cannot read {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("{}: format version {found} is not supported (expected {expected}); re-create the file with this version", path.display())]
    Version { path: PathBuf, found: u32, expected: u32 },
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn config(msg: impl Into<String>) -> Self {
        AppError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Usage(_) => exit::USAGE,
            AppError::Config(_) => exit::CONFIG,
            AppError::Core(e) => core_exit_code(e),
            AppError::Io { .. } | AppError::Format { .. } | AppError::Version { .. } => exit::IO,
        }
    }
}

fn core_exit_code(e: &CoreError) -> u8 {
    match e {
        CoreError::Singular { .. }
        | CoreError::Residual { .. }
        | CoreError::Stability { .. }
        | CoreError::NonConvergence { .. } => exit::SOLVER,
        CoreError::Transient { source, .. } | CoreError::Sweep { source, .. } => match core_exit_code(source) {
            exit::CONFIG => exit::CONFIG,
            _ => exit::SOLVER,
        },
        _ => exit::CONFIG,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solver_failures_map_to_three_even_when_wrapped() {
        let singular = CoreError::Singular { component: "x".into() };
        assert_eq!(AppError::from(singular.clone()).exit_code(), exit::SOLVER);
        let wrapped = CoreError::Transient { time: 1.0, source: Box::new(singular) };
        assert_eq!(AppError::from(wrapped).exit_code(), exit::SOLVER);
        let unknown = CoreError::Transient { time: 1.0, source: Box::new(CoreError::UnknownElectrode("Q".into())) };
        assert_eq!(AppError::from(unknown).exit_code(), exit::CONFIG);
    }
}
