//! Error types shared across the crate.

use thiserror::Error;

/// Everything a solver or operator can reject.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("parity violation: {0}")]
    Parity(String),

    #[error("operation requires a channel domain (torus has no boundary)")]
    NoBoundary,

    #[error("operation not representable on this domain: {0}")]
    NotRepresentable(String),

    #[error("incompatible Neumann data: |∫rhs − ∮data| = {defect:.3e}")]
    IncompatibleData { defect: f64 },

    #[error("Neumann series diverged: contraction ratio {ratio:.3} ≥ 1 (c² too far from constant; increase k)")]
    SeriesDiverged { ratio: f64 },

    #[error("unphysical state: {0}")]
    Unphysical(String),

    #[error("non-finite value in field `{field}` at t = {t}")]
    NonFinite { field: &'static str, t: f64 },

    #[error("flow map degenerate: J(ζ) = {jac:.3e} ≤ 0 at marker ({ix}, {iy})")]
    DegenerateMap { jac: f64, ix: usize, iy: usize },

    #[error("backward characteristic solve failed to converge at node ({ix}, {iy}); residual {residual:.3e}")]
    BackwardSolve { ix: usize, iy: usize, residual: f64 },

    #[error("fixed-point iteration not contracting (distance grew twice); try a smaller horizon T")]
    NotContracting,

    #[error("background velocity not defined at t = {0}")]
    NoBackground(f64),

    #[error("pre-shock horizon exceeded: t = {t} ≥ t* = {t_star}")]
    ShockHorizon { t: f64, t_star: f64 },

    #[error("CFL violation: dt = {dt:.3e} > {dt_max:.3e}")]
    Cfl { dt: f64, dt_max: f64 },

    #[error("slope fit rejected: non-positive value at index {index}")]
    NonPositiveFit { index: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
