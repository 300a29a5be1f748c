use thiserror::Error;

/// Errors raised by the modelling, analysis and design routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry in matrix {0}")]
    NonFiniteEntry(&'static str),

    #[error("system is not square ({outputs} outputs, {inputs} inputs)")]
    NonSquare { outputs: usize, inputs: usize },

    #[error("feedthrough matrix is not invertible (condition number {condition:e})")]
    NonInvertibleFeedthrough { condition: f64 },

    #[error("evaluation point {re}+{im}i coincides with a pole")]
    PoleAtEvaluationPoint { re: f64, im: f64 },

    #[error("frequency grid is invalid: {0}")]
    InvalidGrid(String),

    #[error("watermark remover is unstable (spectral radius {radius})")]
    UnstableRemover { radius: f64 },

    #[error("watermark generator is unstable (spectral radius {radius})")]
    UnstableGenerator { radius: f64 },

    #[error("gain does not stabilise the loop: {which} has spectral radius {radius}")]
    UnstableGain { which: &'static str, radius: f64 },

    #[error("window [{start}, {end}] outside a signal of length {len}")]
    WindowOutOfRange { start: usize, end: usize, len: usize },

    #[error("design step infeasible: {0}")]
    StepInfeasible(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
