use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed invocation; the message carries the usage text.
    #[error("{0}")]
    Usage(String),

    /// A configuration file or override that violates an invariant.
    #[error("configuration error: {0}")]
    Config(String),

    /// A stage that cannot start because an earlier one has not run.
    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: occufield::Error,
    },

    #[error(transparent)]
    Core(#[from] occufield::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

/// Tags core errors with the pipeline stage that produced them; config
/// errors stay config errors so their exit path names the invariant.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for occufield::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            occufield::Error::Config(msg) => CliError::Config(msg),
            source => CliError::Stage { stage, source },
        })
    }
}
