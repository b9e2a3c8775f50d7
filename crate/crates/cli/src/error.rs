use smallmass_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Core(#[from] Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for invalid experiments, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Invalid(_) => 3,
            CliError::Core(e) => match e {
                Error::UnknownSystem(_)
                | Error::MissingParameter { .. }
                | Error::InvalidParameter { .. }
                | Error::InvalidArgument(_)
                | Error::Precondition(_)
                | Error::Dimension { .. } => 2,
                Error::ExperimentInvalid(_) | Error::BlowUp { .. } => 3,
                _ => 1,
            },
            CliError::Io(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "experiment-invalid",
            _ => "runtime",
        }
    }

    /// One-line JSON diagnostic for the error stream.
    pub fn diagnostic(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}
