use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("breakpoints must be finite and strictly increasing")]
    UnsortedBreakpoints,
    #[error("expected {expected} pieces for the given breakpoints, got {got}")]
    PieceCount { expected: usize, got: usize },
    #[error("piece {piece} is unbounded on its interval")]
    Unbounded { piece: usize },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("drift is continuous at breakpoint {xi} (removable discontinuity)")]
    ZeroJump { xi: f64 },
    #[error("drift has no discontinuities; use the identity transform")]
    NoBreakpoints,
    #[error("no bump radius with G' > 0 found after 20 halvings")]
    NoValidC,
    #[error("inverse of G did not converge at y = {y}")]
    NoConvergence { y: f64 },
    #[error("transformed scheme needs a non-degenerate diffusion (sigma > 0)")]
    DegenerateDiffusion,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("state left the representable range at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("path {index}: {source}")]
    PathFailed {
        index: usize,
        #[source]
        source: Box<SimError>,
    },
    #[error("empty bundle or sample set")]
    EmptyBundle,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SmpError {
    #[error("path carries no Brownian increments")]
    MissingNoise,
    #[error("path crosses breakpoint near t = {t} without diffusion; the first variation formula needs sigma > 0")]
    CrossingWithoutNoise { t: f64 },
    #[error("first variation is not finite at t = {t}")]
    NonFinitePhi { t: f64 },
    #[error("moment exponent must be 1, 2 or 4, got {0}")]
    InvalidExponent(u32),
    #[error("regression design is rank deficient at t = {t}")]
    RankDeficient { t: f64 },
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Error)]
pub enum DumpError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a bundle dump (bad magic bytes)")]
    BadMagic,
    #[error("config hash in header does not match the stored configuration")]
    HashMismatch,
    #[error("malformed bundle data: {0}")]
    Malformed(String),
}
