use o2m_core::backends::{BackendError, ConfigError};
use o2m_core::corpus::CorpusError;
use o2m_core::metrics::MetricError;
use o2m_core::mrg::MrgError;
use o2m_core::odrp::OdrpError;
use o2m_core::pipeline::{PipelineError, StatsError, TallyError};
use std::fmt;

/// A failed command, classified by exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad flags, configuration or preconditions (exit 1).
    Usage(String),
    /// Unreadable, unwritable or malformed files (exit 2).
    Io(String),
    /// A backend failed after its retries (exit 3).
    Backend(String),
    /// Training diverged (exit 4).
    NonFinite(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Backend(_) => 3,
            CliError::NonFinite(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, e: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Backend(m) => write!(f, "backend error: {m}"),
            CliError::NonFinite(m) => write!(f, "training error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Precondition(m) => CliError::Usage(m),
            other => CliError::Backend(other.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Precondition(_) | CorpusError::InvalidLabels(_) => CliError::Usage(e.to_string()),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Backend(b) => b.into(),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<MrgError> for CliError {
    fn from(e: MrgError) -> Self {
        match e {
            MrgError::Backend(b) => b.into(),
            MrgError::Metric(m) => m.into(),
            MrgError::UnparseableCompletion | MrgError::AllSlotsMissing => CliError::Backend(e.to_string()),
            MrgError::InsufficientCorpus { .. } => CliError::Io(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<OdrpError> for CliError {
    fn from(e: OdrpError) -> Self {
        match e {
            OdrpError::NonFiniteLoss { .. } => CliError::NonFinite(e.to_string()),
            OdrpError::Backend(b) => b.into(),
            OdrpError::DimensionMismatch { .. } | OdrpError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            OdrpError::AllSlotsMissing => CliError::Backend(e.to_string()),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Precondition(_) | PipelineError::MissingScorer(_) => CliError::Usage(e.to_string()),
            PipelineError::AllFailed(_) => CliError::Backend(e.to_string()),
            PipelineError::Mrg(m) => m.into(),
            PipelineError::Odrp(o) => o.into(),
            PipelineError::Backend(b) => b.into(),
        }
    }
}

impl From<TallyError> for CliError {
    fn from(e: TallyError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        CliError::Usage(e.to_string())
    }
}
