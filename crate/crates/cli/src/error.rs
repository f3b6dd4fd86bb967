use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{0}")]
    Runtime(String),

    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) | CliError::Io { .. } => EXIT_RUNTIME,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }
}

impl From<coexist_core::Error> for CliError {
    fn from(e: coexist_core::Error) -> Self {
        use coexist_core::Error as E;
        match e {
            E::Domain(_) | E::Precondition(_) | E::BoundaryRho { .. } | E::NonDiscreteFamily | E::TooFewPoints { .. } => {
                CliError::Config(e.to_string())
            }
            E::Starvation { .. } | E::WeightUnderflow { .. } | E::InsufficientSamples { .. } | E::NoCoSurvivors { .. } => {
                CliError::Runtime(e.to_string())
            }
        }
    }
}
