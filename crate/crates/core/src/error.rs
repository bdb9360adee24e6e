use thiserror::Error;

/// Stage of a fixed-point evaluation, used to label linear-solver failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Temperature,
    Momentum,
    Coupled,
    ResidualNorm,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Temperature => "temperature",
            Stage::Momentum => "momentum",
            Stage::Coupled => "coupled",
            Stage::ResidualNorm => "residual-norm",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("degenerate geometry: {0}")]
    Geometry(String),

    #[error("linear solver failed (relative residual {residual:e}): {reason}")]
    SolverFailure { residual: f64, reason: String },

    #[error("{stage} solve failed: {source}")]
    StageFailure {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite values in fixed-point evaluation")]
    Blowup,

    #[error("fixed-point operator failed at iteration {iteration}: {source}")]
    Operator {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn in_stage(self, stage: Stage) -> Self {
        Error::StageFailure {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
