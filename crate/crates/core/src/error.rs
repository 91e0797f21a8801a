use thiserror::Error;

pub type Result<T> = std::result::Result<T, KdvError>;

#[derive(Debug, Error)]
pub enum KdvError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("solution blew up at t = {time}")]
    BlowUp { time: f64 },

    #[error(
        "operator is numerically singular (condition estimate {condition:.3e}); \
         try a wider control region, a smaller decay rate, or a longer horizon"
    )]
    IllConditioned { condition: f64 },

    #[error("operator is not positive definite (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error(
        "steering iteration diverged after {iterations} iterations (residual {residual:.3e}); \
         use smaller states or a longer horizon"
    )]
    Divergence { iterations: usize, residual: f64 },

    #[error("steering did not reach tolerance {tolerance:.3e} within {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("stabilization stage {stage} did not reach {epsilon} within t = {max_time}")]
    StabilizationTimeout {
        stage: &'static str,
        epsilon: f64,
        max_time: f64,
    },

    #[error("steering stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<KdvError>,
    },

    #[error("usage: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl KdvError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        KdvError::Parameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures raised by the steering pipeline.
    pub fn is_steering(&self) -> bool {
        matches!(
            self,
            KdvError::Divergence { .. }
                | KdvError::NotConverged { .. }
                | KdvError::StabilizationTimeout { .. }
                | KdvError::Stage { .. }
        )
    }
}
