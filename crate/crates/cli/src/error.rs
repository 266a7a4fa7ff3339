use koopman_core::KoopmanError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] KoopmanError),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 2 configuration, 3 numeric divergence, 4 span violation, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                KoopmanError::InvariantSubspaceViolation { .. } => 4,
                KoopmanError::Divergence { .. } | KoopmanError::AllDiverged { .. } => 3,
                KoopmanError::Domain { .. } | KoopmanError::NonFinite { .. } => 3,
                KoopmanError::DimensionMismatch { .. }
                | KoopmanError::MissingStateSelector
                | KoopmanError::NotPolynomial
                | KoopmanError::InvalidArgument(_)
                | KoopmanError::EmptyGrid
                | KoopmanError::Parse(_) => 2,
            },
        }
    }
}

pub(crate) fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}
