//! Special functions with complex spectral parameter: Gamma, modified
//! Bessel I/K, associated Legendre P/Q on the hyperbolic cut, and the
//! oscillatory-Gaussian error-function family.

pub mod bessel;
pub mod erf;
pub mod gamma;
pub mod legendre;

pub use bessel::{bessel_i, bessel_i_scaled, bessel_k, bessel_k_scaled};
pub use erf::{fresnel, half_line_moments, moment0};
pub use gamma::{gamma_abs2, gamma_complex, gamma_real};
pub use legendre::{
    classify_regime, legendre_p, legendre_q, p_uniform_bessel, q_uniform_bessel,
    AsymptoticRegime, LegendreOrder, RegimeKind,
};
