use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value {0} is outside the penalty domain [0, inf)")]
    Domain(f64),

    #[error("function is not coercive")]
    NotCoercive,

    #[error("candidate set is empty or leaves a gap at {0}")]
    EnvelopeGap(f64),

    #[error("level {level} of variable {variable} has no observations")]
    EmptyLevel { variable: String, level: String },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("design matrix is rank deficient ({0})")]
    RankDeficient(String),

    #[error("hierarchy violated: {0}")]
    Hierarchy(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("model file error: {0}")]
    Model(String),

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
