use mirrorpose_core::Error as CoreError;
use serde::Serialize;
use thiserror::Error;

/// Process exit codes. The table is part of the command-line contract.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const PARSE: i32 = 2;
    pub const INSUFFICIENT_INPUT: i32 = 3;
    pub const CALIBRATION_FAILED: i32 = 4;
    pub const PAIRING: i32 = 5;
    pub const SOLVER: i32 = 6;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: CoreError,
    },
    #[error("{0}")]
    Pairing(String),
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: i32,
    kind: &'a str,
    message: String,
}

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn parse(path: impl AsRef<std::path::Path>, message: impl ToString) -> Self {
        Self::Parse {
            path: path.as_ref().display().to_string(),
            message: message.to_string(),
        }
    }

    pub fn core(context: impl Into<String>, source: CoreError) -> Self {
        Self::Core {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io { .. } => exit::IO,
            Self::Parse { .. } | Self::InvalidArgument(_) => exit::PARSE,
            Self::Pairing(_) => exit::PAIRING,
            Self::Core { source, .. } => match source {
                CoreError::InsufficientKeypoints { .. } | CoreError::InsufficientCorrespondences { .. } => {
                    exit::INSUFFICIENT_INPUT
                }
                CoreError::CalibrationFailed(_) => exit::CALIBRATION_FAILED,
                CoreError::InvalidInput(_) | CoreError::InvalidConfig(_) | CoreError::DimensionMismatch { .. } => {
                    exit::PARSE
                }
                _ => exit::SOLVER,
            },
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            exit::IO => "io",
            exit::PARSE => "parse",
            exit::INSUFFICIENT_INPUT => "insufficient_input",
            exit::CALIBRATION_FAILED => "calibration_failed",
            exit::PAIRING => "pairing",
            _ => "solver",
        }
    }

    /// Machine-readable one-line JSON report for stderr.
    pub fn to_json(&self) -> String {
        let report = ErrorReport {
            error: ErrorBody {
                code: self.exit_code(),
                kind: self.kind(),
                message: self.to_string(),
            },
        };
        serde_json::to_string(&report).expect("error report serializes")
    }
}

pub type CliResult<T> = Result<T, CliError>;
