use thiserror::Error;

pub type Result<T> = std::result::Result<T, FwiError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FwiError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("wave speed {value} m/s at node {node} outside [{c_min}, {c_max}]")]
    BoundsViolation {
        node: usize,
        value: f64,
        c_min: f64,
        c_max: f64,
    },

    #[error("subdomain {subdomain} is rank deficient for an affine fit ({nodes} nodes)")]
    RankDeficient { subdomain: usize, nodes: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("assembly failed: {0}")]
    Assembly(String),

    #[error("solver breakdown at pivot {pivot} (|pivot| = {magnitude:e})")]
    SolverBreakdown { pivot: usize, magnitude: f64 },

    #[error("invalid source: {0}")]
    InvalidSource(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("SNR undefined: {0}")]
    UndefinedSnr(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("load error: {0}")]
    Load(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("{0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl FwiError {
    /// Short category tag used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            FwiError::InvalidGrid(_) | FwiError::InvalidPartition(_) => "geometry",
            FwiError::BoundsViolation { .. } | FwiError::RankDeficient { .. } => "model",
            FwiError::ShapeMismatch { .. } => "shape",
            FwiError::Assembly(_) | FwiError::SolverBreakdown { .. } => "solver",
            FwiError::InvalidSource(_) | FwiError::Alignment(_) | FwiError::Geometry(_) => {
                "acquisition"
            }
            FwiError::UndefinedSnr(_) => "noise",
            FwiError::Parse { .. } | FwiError::Load(_) => "io-format",
            FwiError::Config(_) => "config",
            FwiError::UnsupportedFormat(_) => "format",
            FwiError::Numeric(_) => "numeric",
            FwiError::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for FwiError {
    fn from(e: std::io::Error) -> Self {
        FwiError::Io(e.to_string())
    }
}
