use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("scenario parse error at line {line}, column {column}: {message}")]
    ScenarioParse { line: usize, column: usize, message: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{0}")]
    Verdict(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// 2 parse or input error, 3 infeasible/unbounded verdict, 4 numerical failure, 1 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ScenarioParse { .. } | CliError::Invalid(_) => 2,
            CliError::Verdict(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<wmlab_core::Error> for CliError {
    fn from(e: wmlab_core::Error) -> Self {
        use wmlab_core::Error as E;
        match e {
            E::NumericalFailure(m) => CliError::Numerical(m),
            E::StepInfeasible(m) => CliError::Verdict(m),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
