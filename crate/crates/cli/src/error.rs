use std::fmt;
use std::process::ExitCode;

use hain::HainError;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: exit status 2.
    Usage(String),
    /// Failure while running: exit status 1.
    Run(HainError),
    /// Outputs differ from a replayed manifest.
    Mismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            _ => ExitCode::from(1),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Mismatch(_) => "replay_mismatch",
            CliError::Run(e) => match e {
                HainError::Shape(_) => "shape",
                HainError::Contract(_) => "contract",
                HainError::Evaluation(_) => "evaluation",
                HainError::Capacity(_) => "capacity",
                HainError::Training { .. } => "training",
                HainError::UndefinedMetric(_) => "undefined_metric",
                HainError::Format(_) => "format",
                HainError::Parse { .. } => "parse",
                HainError::Integrity(_) => "integrity",
                HainError::Incompatible(_) => "incompatible",
                HainError::Io(_) => "io",
                HainError::Json(_) => "json",
                HainError::Csv(_) => "csv",
            },
        }
    }

    /// One-line JSON object for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": { "kind": self.kind(), "message": self.to_string() } }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Mismatch(m) => f.write_str(m),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<HainError> for CliError {
    fn from(e: HainError) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Run(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Run(e.into())
    }
}
