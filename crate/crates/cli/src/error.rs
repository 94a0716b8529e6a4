use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing {what}: run `{stage}` first")]
    Missing { what: String, stage: &'static str },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] stochbench::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use stochbench::Error as E;
        match self {
            Self::Config(_) => 2,
            Self::Missing { .. } => 3,
            Self::Solver(_) => 4,
            Self::Core(E::InvalidParameter(_) | E::InvalidSpec(_) | E::UnknownSolver(_) | E::TooFewInstances { .. }) => 2,
            Self::Core(E::BudgetExceeded { .. }) => 2,
            Self::Io { .. } | Self::Core(_) => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }
}
