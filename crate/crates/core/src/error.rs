use thiserror::Error;

/// Errors produced anywhere in the analysis pipeline.
#[derive(Debug, Error)]
pub enum MoatError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular design: column(s) {} are linearly dependent on the rest", .columns.join(", "))]
    SingularDesign { columns: Vec<String> },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("association matrix has no positive entries; nothing to extract")]
    EmptyScores,

    #[error("subnetwork is not testable: {0}")]
    NotTestable(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(
        "infeasible design: block {block} needs residual variance {residual:.4} (must be > 0); \
         worst shift required to repair is {shift:.4}"
    )]
    InfeasibleDesign {
        block: usize,
        residual: f64,
        shift: f64,
    },

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("predictor {predictor}, edge {edge}: {source}")]
    AtPair {
        predictor: usize,
        edge: usize,
        #[source]
        source: Box<MoatError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl MoatError {
    pub fn class(&self) -> ErrorClass {
        match self {
            MoatError::Config(_) | MoatError::InfeasibleDesign { .. } => ErrorClass::Config,
            MoatError::SingularDesign { .. }
            | MoatError::InsufficientData(_)
            | MoatError::DimensionMismatch(_)
            | MoatError::Format(_)
            | MoatError::Io(_)
            | MoatError::Json(_) => ErrorClass::Data,
            MoatError::AtPair { source, .. } => source.class(),
            MoatError::Domain(_)
            | MoatError::EmptyScores
            | MoatError::NotTestable(_)
            | MoatError::SingularCovariance(_) => ErrorClass::Numeric,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        MoatError::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, MoatError>;
