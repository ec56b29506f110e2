//! Associated Legendre functions on the hyperbolic cut x = cosh r > 1:
//! P^{-mu}_nu and (Hobson) Q^mu_nu for degree nu = -1/2 + sigma.
//!
//! The orders that occur in the library are mu = (n-1)/2 for dimension
//! parameter n >= 1. P is evaluated from a single one-dimensional integral
//! valid for every mu >= 0; Q has dedicated stable paths at mu in
//! {0, 1/2, 1, 3/2} (exponential integrals and elementary closed forms)
//! and a hypergeometric fallback for other orders, which converges slowly
//! as r -> 0 and is intended for r >~ 0.3.
//!
//! All integrands are written with the difference cosh(r +- d) - cosh r in
//! the factored form 2 sinh(d/2) sinh(r +- d/2), which is exact for large r
//! and removes the cancellation that the raw difference suffers.

use crate::error::{Error, Result};
use crate::quad::integrate_adaptive;
use crate::specfun::bessel::{bessel_i, bessel_k};
use crate::specfun::gamma::{gamma_complex, gamma_real};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Order/degree pair (mu, nu); nu = -1/2 + sigma.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegendreOrder {
    pub mu: f64,
    pub nu: Complex64,
}

impl LegendreOrder {
    /// Order family for the hyperbolic-space kernels: mu = (n-1)/2,
    /// nu = -1/2 + sigma.
    pub fn from_dimension(n: usize, sigma: Complex64) -> Self {
        LegendreOrder {
            mu: (n as f64 - 1.0) / 2.0,
            nu: Complex64::new(-0.5, 0.0) + sigma,
        }
    }

    /// sigma = nu + 1/2.
    pub fn sigma(&self) -> Complex64 {
        self.nu + 0.5
    }
}

/// Which asymptotic description governs a (sigma, r) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeKind {
    SmallArg,
    LargeArg,
    UniformBessel,
}

/// Classification of a spectral-parameter/radius pair, carried alongside
/// kernel samples for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticRegime {
    pub kind: RegimeKind,
    pub sigma: Complex64,
    pub r: f64,
}

/// Classify by the product |sigma| r: below 1 the small-argument forms
/// apply; past it, the Bessel-uniform description once |sigma| is
/// moderately large, otherwise the plain large-r exponential regime.
pub fn classify_regime(sigma: Complex64, r: f64) -> AsymptoticRegime {
    let kind = if sigma.norm() * r <= 1.0 {
        RegimeKind::SmallArg
    } else if sigma.norm() >= 5.0 {
        RegimeKind::UniformBessel
    } else {
        RegimeKind::LargeArg
    };
    AsymptoticRegime { kind, sigma, r }
}

/// (cosh(r + d) - cosh r)/d = 2 sinh(d/2) sinh(r + d/2) / d, extended
/// continuously to d = 0.
pub(crate) fn phi_plus(r: f64, d: f64) -> f64 {
    if d < 1e-6 {
        (1.0 + d * d / 24.0) * (r + 0.5 * d).sinh()
    } else {
        2.0 * (0.5 * d).sinh() * (r + 0.5 * d).sinh() / d
    }
}

/// (cosh r - cosh(r - d))/d on 0 <= d <= r, extended continuously to d = 0.
pub(crate) fn phi_minus(r: f64, d: f64) -> f64 {
    if d < 1e-6 {
        (1.0 + d * d / 24.0) * (r - 0.5 * d).sinh()
    } else {
        2.0 * (0.5 * d).sinh() * (r - 0.5 * d).sinh() / d
    }
}

/// d/dr of phi_plus at fixed d.
fn phi_plus_dr(r: f64, d: f64) -> f64 {
    if d < 1e-6 {
        (1.0 + d * d / 24.0) * (r + 0.5 * d).cosh()
    } else {
        2.0 * (0.5 * d).sinh() * (r + 0.5 * d).cosh() / d
    }
}

/// P^{-mu}_nu(cosh r) =
/// sqrt(2/pi) (sinh r)^{-mu} / Gamma(mu+1/2) *
/// int_0^sqrt(r) 2 v^{2 mu} [phi_minus(r, v^2)]^{mu-1/2} cosh(sigma (r - v^2)) dv.
///
/// The substitution u = r - v^2 has absorbed the endpoint singularity
/// (cosh r - cosh u)^{mu-1/2}; the remaining integrand is smooth up to a
/// v^{2 mu} factor that the adaptive driver resolves.
pub fn legendre_p(order: LegendreOrder, r: f64) -> Result<Complex64> {
    if !(r > 0.0) {
        return Err(Error::SingularInput(format!("legendre_p needs r > 0, got {r}")));
    }
    if order.mu < 0.0 {
        return Err(Error::Precondition(format!("mu must be >= 0, got {}", order.mu)));
    }
    let mu = order.mu;
    let sigma = order.sigma();
    let g = |v: f64| {
        let d = v * v;
        let w = phi_minus(r, d).powf(mu - 0.5);
        let amp = 2.0 * v.powf(2.0 * mu) * w;
        amp * (sigma * (r - d)).cosh()
    };
    let integral = integrate_adaptive(&g, 0.0, r.sqrt(), 1e-13, 48)?;
    let front = (2.0 / PI).sqrt() * r.sinh().powf(-mu) / gamma_real(mu + 0.5);
    Ok(front * integral)
}

/// Real-normalized Q at mu = 0:
/// sqrt(2) e^{-sigma r} int_0^inf e^{-sigma v^2} [phi_plus(r, v^2)]^{-1/2} dv.
fn q_real_mu0(sigma: Complex64, r: f64) -> Result<Complex64> {
    let vmax = (90.0 / (0.5 + sigma.re)).sqrt();
    let g = |v: f64| {
        let d = v * v;
        (-sigma * d).exp() * phi_plus(r, d).powf(-0.5)
    };
    let integral = integrate_adaptive(&g, 0.0, vmax, 1e-13, 46)?;
    Ok(2.0_f64.sqrt() * (-sigma * r).exp() * integral)
}

/// Real-normalized Q at mu = 1, obtained as -d/dr of the mu = 0 integral.
fn q_real_mu1(sigma: Complex64, r: f64) -> Result<Complex64> {
    let vmax = (90.0 / (0.5 + sigma.re)).sqrt();
    let g = |v: f64| {
        let d = v * v;
        let p = phi_plus(r, d);
        let w = (-sigma * d).exp();
        w * (sigma * p.powf(-0.5) + 0.5 * p.powf(-1.5) * phi_plus_dr(r, d))
    };
    let integral = integrate_adaptive(&g, 0.0, vmax, 1e-13, 46)?;
    Ok(2.0_f64.sqrt() * (-sigma * r).exp() * integral)
}

/// Gauss hypergeometric series at real argument 0 <= x < 1.
fn hyp2f1(a: Complex64, b: Complex64, c: Complex64, x: f64) -> Result<Complex64> {
    let mut term = Complex64::new(1.0, 0.0);
    let mut sum = term;
    let mut small_runs = 0usize;
    for k in 0..30_000usize {
        let kf = k as f64;
        term = term * (a + kf) * (b + kf) / ((c + kf) * (kf + 1.0)) * x;
        sum += term;
        if term.norm() < 1e-17 * sum.norm() {
            small_runs += 1;
            if small_runs > 2 {
                return Ok(sum);
            }
        } else {
            small_runs = 0;
        }
    }
    Err(Error::Nonconvergence(format!(
        "2F1 series stalled at x = {x}"
    )))
}

/// Q^mu_nu through the resolvent's hypergeometric form at dimension
/// parameter n = 2 mu + 1. Converges slowly as r -> 0; meant for orders
/// outside {0, 1/2, 1, 3/2} at r >~ 0.3.
fn q_hyp_fallback(mu: f64, sigma: Complex64, r: f64) -> Result<Complex64> {
    let n = 2.0 * mu + 1.0;
    let s = mu + 0.5 + sigma;
    let x = 1.0 / (0.5 * r).cosh().powi(2);
    let f = hyp2f1(s, sigma + 0.5, 2.0 * sigma + 1.0, x)?;
    let lg_ch = (0.5 * r).cosh().ln();
    let ln2 = std::f64::consts::LN_2;
    // pi^{-n/2} 2^{-2s-1} Gamma(s)/Gamma(sigma+1) sech^{2s}(r/2) * F
    let resolvent = (-0.5 * n * PI.ln() - (2.0 * s + 1.0) * ln2 - 2.0 * s * lg_ch).exp()
        * gamma_complex(s)?
        / gamma_complex(sigma + 1.0)?
        * f;
    let phase = Complex64::from_polar(1.0, PI * mu);
    Ok(phase
        * (2.0 * PI).powf(mu + 1.0)
        * r.sinh().powf(mu)
        * resolvent)
}

/// Q^mu_nu(cosh r) in the Hobson normalization (carrying the e^{i pi mu}
/// phase, so half-integer orders are imaginary-rotated).
pub fn legendre_q(order: LegendreOrder, r: f64) -> Result<Complex64> {
    if !(r > 0.0) {
        return Err(Error::SingularInput(format!("legendre_q needs r > 0, got {r}")));
    }
    let mu = order.mu;
    let sigma = order.sigma();
    if sigma.re < -1e-12 {
        return Err(Error::Branch(format!(
            "Re sigma = {} < 0: kernel continuation is not a pointwise object",
            sigma.re
        )));
    }
    if mu < 0.0 {
        return Err(Error::Precondition(format!("mu must be >= 0, got {mu}")));
    }
    let phase = Complex64::from_polar(1.0, PI * mu);
    let sh = r.sinh();
    if (mu - 0.0).abs() < 1e-12 {
        return q_real_mu0(sigma, r);
    }
    if (mu - 0.5).abs() < 1e-12 {
        return Ok(phase * (PI / (2.0 * sh)).sqrt() * (-sigma * r).exp());
    }
    if (mu - 1.0).abs() < 1e-12 {
        return Ok(phase * q_real_mu1(sigma, r)?);
    }
    if (mu - 1.5).abs() < 1e-12 {
        let val = (PI / 2.0).sqrt() * (-sigma * r).exp() * (sigma * sh + r.cosh())
            / sh.powf(1.5);
        return Ok(phase * val);
    }
    q_hyp_fallback(mu, sigma, r)
}

/// Bessel-uniform comparator for P: sigma^{-mu} sqrt(r/sinh r) I_mu(sigma r).
pub fn p_uniform_bessel(mu: f64, sigma: Complex64, r: f64) -> Result<Complex64> {
    let i = bessel_i(mu, sigma * r)?;
    Ok(sigma.powf(-mu) * (r / r.sinh()).sqrt() * i)
}

/// Bessel-uniform comparator for Q: e^{i pi mu} sigma^mu sqrt(r/sinh r) K_mu(sigma r).
pub fn q_uniform_bessel(mu: f64, sigma: Complex64, r: f64) -> Result<Complex64> {
    let k = bessel_k(mu, sigma * r)?;
    let phase = Complex64::from_polar(1.0, PI * mu);
    Ok(phase * sigma.powf(mu) * (r / r.sinh()).sqrt() * k)
}
