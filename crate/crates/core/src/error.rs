use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong inside the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("deformation gradient has non-positive determinant {det:e}")]
    NonPositiveDeterminant { det: f64 },

    #[error("negative temperature {0:e}")]
    NegativeTemperature(f64),

    #[error("negative internal energy {0:e}")]
    NegativeInternalEnergy(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(
        "mechanical step failed ({reason}) after {iterations} iterations, \
         residual {residual:e}, min det {min_det:e}"
    )]
    MechanicalSolve {
        reason: String,
        iterations: usize,
        residual: f64,
        min_det: f64,
    },

    #[error(
        "thermal step failed ({reason}) after {iterations} iterations, \
         residual {residual:e}, min theta {min_theta:e}"
    )]
    ThermalSolve {
        reason: String,
        iterations: usize,
        residual: f64,
        min_theta: f64,
    },

    #[error("step {step}: {source}")]
    Step { step: usize, source: Box<Error> },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub fn at_step(self, step: usize) -> Error {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }

    /// The innermost error, with step wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } => source.root(),
            e => e,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
