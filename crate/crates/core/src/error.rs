use thiserror::Error;

/// Errors raised by the laboratory's operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid environment model: {0}")]
    ModelInvalid(String),
    #[error("invalid trap overlay: {0}")]
    OverlayInvalid(String),
    #[error("start site lies outside the region")]
    StartOutside,
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("solver did not converge: residual {residual:e} after {iterations} iterations")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("region too large: {sites} sites exceeds the limit of {limit}")]
    RegionTooLarge { sites: usize, limit: usize },
    #[error("right-exit probability from the origin is zero")]
    DegenerateRho,
    #[error("no exit mass on the right boundary")]
    NoRightExit,
    #[error("box specification violates the criterion constraints: {0}")]
    SpecInvalid(String),
    #[error("degenerate scale ladder: {0}")]
    DegenerateLadder(String),
    #[error("annealed reference does not match the block: {0}")]
    ReferenceMismatch(String),
    #[error("no drift detected")]
    NoDrift,
    #[error("support of {size} atoms exceeds the cap of {cap}")]
    SupportTooLarge { size: usize, cap: usize },
    #[error("degenerate lattice law (single atom)")]
    DegenerateLaw,
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
