use thiserror::Error;

/// Library-wide error type. Numerical routines return these rather than
/// panicking so the CLI can map failures onto machine-readable reports.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("gamma function pole at non-positive integer z = {0}")]
    GammaPole(f64),

    #[error("branch restriction violated: {0}")]
    Branch(String),

    #[error("quadrature failed to converge: {0}")]
    Nonconvergence(String),

    #[error("singular input: {0}")]
    SingularInput(String),

    #[error("near-resonance: |det| = {det_modulus:.3e} at {location}")]
    NearResonance { det_modulus: f64, location: String },

    #[error("spectral gap: |m| = {m_abs} does not exceed mu = {mu}")]
    SpectralGap { m_abs: f64, mu: f64 },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("oscillatory-integral resolution insufficient: {0}")]
    Resolution(String),

    #[error("truncation tail beyond r_max = {r_max} carries mass {tail_mass:.3e} > tol {tol:.3e}")]
    Truncation { r_max: f64, tail_mass: f64, tol: f64 },

    #[error("integrated-by-parts tail budget {budget:.3e} exceeds tolerance {tol:.3e}")]
    TailBudget { budget: f64, tol: f64 },

    #[error("ill-conditioned fit: {0}")]
    IllConditionedFit(String),

    #[error("exponent mismatch: 1/{q1} + 1/{q2} != 1/{p} + 1")]
    ExponentMismatch { q1: f64, q2: f64, p: f64 },

    #[error("q-norm integral diverges under refinement: {0}")]
    Divergence(String),

    #[error("no ground state bracketed: {0}")]
    NoGroundState(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("continuation boundary: Re sigma = {re_sigma} is outside the zone Re sigma > {limit}")]
    ContinuationBoundary { re_sigma: f64, limit: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
