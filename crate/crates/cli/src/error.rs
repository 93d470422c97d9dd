use mpnode::lss::LssError;
use mpnode::metrics::MetricsError;
use mpnode::mp::MpError;
use mpnode::ode::OdeError;
use mpnode::systems::SystemsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error{}{}: {message}", .line.map(|l| format!(" at line {l}")).unwrap_or_default(), .key.as_ref().map(|k| format!(" (key `{k}`)")).unwrap_or_default())]
    Parse {
        line: Option<usize>,
        key: Option<String>,
        message: String,
    },
    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("malformed file {path}: {message}")]
    Format { path: String, message: String },
    #[error("unsupported format version in {path}: {found}")]
    Version { path: String, found: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("artifact {0} contains non-finite values")]
    NonFinite(String),
    #[error(transparent)]
    Systems(#[from] SystemsError),
    #[error(transparent)]
    Mp(#[from] MpError),
    #[error(transparent)]
    Lss(#[from] LssError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Ode(#[from] OdeError),
}

impl CliError {
    pub fn validation(field: &str, message: impl Into<String>) -> Self {
        Self::Validation {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit status for each error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse { .. } | Self::Validation { .. } => 2,
            Self::Format { .. } | Self::Version { .. } | Self::Io { .. } => 3,
            Self::Systems(_) | Self::Mp(_) | Self::Lss(_) | Self::Metrics(_) | Self::Ode(_) => 4,
            Self::NonFinite(_) => 5,
        }
    }
}
