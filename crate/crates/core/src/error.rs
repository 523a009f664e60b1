use thiserror::Error;

/// Errors raised across the fingerprinting pipeline.
#[derive(Debug, Error)]
pub enum FpError {
    #[error("duplicate primary key `{0}`")]
    DuplicateKey(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("malformed row at line {line}: expected {expected} fields, found {found}")]
    MalformedRow {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("cannot encode `{value}` in numeric attribute `{attribute}`")]
    EncodeError { attribute: String, value: String },

    #[error("unknown instance `{value}` for categorical attribute `{attribute}`")]
    UnknownInstance { attribute: String, value: String },

    #[error("attribute with a single code cannot be flipped")]
    NoFlipPossible,

    #[error("code {code} out of domain for attribute `{attribute}` (cardinality {cardinality})")]
    CodeOutOfDomain {
        attribute: String,
        code: u32,
        cardinality: u32,
    },

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("marginal of attribute {attribute} disagrees across partners by {gap:e}")]
    InconsistentJointSet { attribute: usize, gap: f64 },

    #[error("attribute has zero variance")]
    DegenerateAttribute,

    #[error("requested {requested} communities for {rows} rows")]
    TooManyCommunities { requested: usize, rows: usize },

    #[error("sinkhorn did not converge after {iterations} iterations (residual {residual:e})")]
    NonConverged { iterations: usize, residual: f64 },

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("constraint violated: {0}")]
    ConstraintViolation(String),

    #[error("baseline covariance has zero norm")]
    DegenerateBaseline,

    #[error("attribute-value frequency is zero")]
    DegenerateFrequency,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl FpError {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            FpError::DuplicateKey(_) => "DuplicateKey",
            FpError::SchemaMismatch(_) => "SchemaMismatch",
            FpError::MalformedRow { .. } => "MalformedRow",
            FpError::EncodeError { .. } => "EncodeError",
            FpError::UnknownInstance { .. } => "UnknownInstance",
            FpError::NoFlipPossible => "NoFlipPossible",
            FpError::CodeOutOfDomain { .. } => "CodeOutOfDomain",
            FpError::EmptyCandidates => "EmptyCandidates",
            FpError::InconsistentJointSet { .. } => "InconsistentJointSet",
            FpError::DegenerateAttribute => "DegenerateAttribute",
            FpError::TooManyCommunities { .. } => "TooManyCommunities",
            FpError::NonConverged { .. } => "NonConverged",
            FpError::ShapeError(_) => "ShapeError",
            FpError::ConstraintViolation(_) => "ConstraintViolation",
            FpError::DegenerateBaseline => "DegenerateBaseline",
            FpError::DegenerateFrequency => "DegenerateFrequency",
            FpError::InvalidParameter(_) => "InvalidParameter",
            FpError::Io(_) => "Io",
            FpError::Json(_) => "Json",
            FpError::Csv(_) => "Csv",
        }
    }

    /// True for failures of the environment (files, streams) rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, FpError::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, FpError>;
