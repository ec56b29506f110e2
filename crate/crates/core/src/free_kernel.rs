//! Free resolvent kernel R_0(n/2 + sigma; r) on H^{n+1}, its imaginary
//! part on the critical line, the spectral-density coefficient a_n, the
//! representation kernel K(u; r), and the sphere-average transform h(u).
//!
//! For even n the kernel is elementary: terms c sigma^a cosh^b r sinh^{-d} r
//! e^{-sigma r}, generated programmatically from the n = 2 seed
//! e^{-sigma r}/(4 pi sinh r) by the dimension-raising step
//! R^{(n+2)} = -(2 pi sinh r)^{-1} d/dr R^{(n)} at fixed sigma.
//! For odd n it reduces to the Legendre Q evaluators.

use crate::error::{Error, Result};
use crate::quad::{integrate_adaptive, integrate_panels};
use crate::specfun::gamma::gamma_real;
use crate::specfun::legendre::{
    classify_regime, legendre_q, phi_plus, AsymptoticRegime, LegendreOrder,
};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Spectral parameter s = n/2 + sigma on H^{n+1}; lambda mirrors Im sigma
/// and is the critical-line frequency when Re sigma = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralPoint {
    pub n: usize,
    pub sigma: Complex64,
    pub lambda: f64,
}

impl SpectralPoint {
    pub fn new(n: usize, sigma: Complex64) -> Self {
        SpectralPoint {
            n,
            sigma,
            lambda: sigma.im,
        }
    }

    /// Point on the critical line, sigma = i lambda.
    pub fn critical(n: usize, lambda: f64) -> Self {
        Self::new(n, Complex64::new(0.0, lambda))
    }

    pub fn mu(&self) -> f64 {
        (self.n as f64 - 1.0) / 2.0
    }
}

/// One kernel evaluation with its regime tag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSample {
    pub r: f64,
    pub value: Complex64,
    pub regime: AsymptoticRegime,
}

/// Surface measure of the unit n-sphere: 2 pi^{(n+1)/2} / Gamma((n+1)/2).
pub fn sphere_area(n: usize) -> f64 {
    2.0 * PI.powf((n as f64 + 1.0) / 2.0) / gamma_real((n as f64 + 1.0) / 2.0)
}

/// Closed-form term list for even n: (sigma power, cosh power, sinh power
/// in the denominator, coefficient).
fn even_kernel_terms(n: usize) -> Vec<(u32, u32, u32, f64)> {
    assert!(n >= 2 && n % 2 == 0);
    let mut terms: Vec<(u32, u32, u32, f64)> = vec![(0, 0, 1, 1.0 / (4.0 * PI))];
    let mut dim = 2;
    while dim < n {
        let mut next: std::collections::HashMap<(u32, u32, u32), f64> =
            std::collections::HashMap::new();
        for &(a, b, d, c) in &terms {
            // -(2 pi sinh r)^{-1} d/dr applied to sigma^a cosh^b sinh^{-d} e^{-sigma r}
            *next.entry((a + 1, b, d + 1)).or_insert(0.0) += c / (2.0 * PI);
            if b > 0 {
                *next.entry((a, b - 1, d)).or_insert(0.0) -= c * b as f64 / (2.0 * PI);
            }
            *next.entry((a, b + 1, d + 2)).or_insert(0.0) += c * d as f64 / (2.0 * PI);
        }
        terms = next
            .into_iter()
            .filter(|&(_, c)| c != 0.0)
            .map(|((a, b, d), c)| (a, b, d, c))
            .collect();
        dim += 2;
    }
    terms
}

fn even_kernel(n: usize, sigma: Complex64, r: f64) -> Complex64 {
    let ch = r.cosh();
    let sh = r.sinh();
    let mut acc = Complex64::new(0.0, 0.0);
    for (a, b, d, c) in even_kernel_terms(n) {
        acc += c * sigma.powi(a as i32) * ch.powi(b as i32) / sh.powi(d as i32);
    }
    acc * (-sigma * r).exp()
}

/// R_0(n/2 + sigma; r): elementary closed form for even n, Legendre Q
/// evaluation for odd n.
pub fn r0_kernel(pt: SpectralPoint, r: f64) -> Result<Complex64> {
    if !(r > 0.0) {
        return Err(Error::SingularInput(format!(
            "free kernel diverges on the diagonal; r = {r}"
        )));
    }
    if pt.sigma.re < -1e-12 {
        return Err(Error::Branch(format!(
            "Re sigma = {} < 0: use the determinant-based continuation",
            pt.sigma.re
        )));
    }
    if pt.n == 0 {
        return Err(Error::Precondition("n must be >= 1".into()));
    }
    if pt.n % 2 == 0 {
        return Ok(even_kernel(pt.n, pt.sigma, r));
    }
    let mu = pt.mu();
    let q = legendre_q(LegendreOrder::from_dimension(pt.n, pt.sigma), r)?;
    let phase = Complex64::from_polar(1.0, -PI * mu);
    Ok((2.0 * PI).powf(-(pt.n as f64 + 1.0) / 2.0) * phase * r.sinh().powf(-mu) * q)
}

/// Kernel evaluation bundled with its asymptotic-regime tag.
pub fn sample(pt: SpectralPoint, r: f64) -> Result<KernelSample> {
    Ok(KernelSample {
        r,
        value: r0_kernel(pt, r)?,
        regime: classify_regime(pt.sigma, r),
    })
}

/// Spectral-density coefficient a_n(lambda) =
/// (2 pi)^{-(n+1)/2} |Gamma(n/2 + i lambda)|^2 sinh(pi lambda),
/// reduced to exact polynomial / tanh closed forms, so it stays finite for
/// every lambda. Odd in lambda; O(lambda^{n-1}) at infinity.
pub fn a_n(n: usize, lambda: f64) -> f64 {
    let front = (2.0 * PI).powf(-(n as f64 + 1.0) / 2.0) * PI;
    if n % 2 == 0 {
        // |Gamma(m + i l)|^2 = pi l / sinh(pi l) * prod_{k=1}^{m-1} (k^2 + l^2)
        let m = n / 2;
        let mut poly = lambda;
        for k in 1..m {
            poly *= (k * k) as f64 + lambda * lambda;
        }
        front * poly
    } else {
        // |Gamma(m + 1/2 + i l)|^2 = pi / cosh(pi l) * prod_{k=0}^{m-1} ((k+1/2)^2 + l^2)
        let m = (n - 1) / 2;
        let mut poly = (PI * lambda).tanh();
        for k in 0..m {
            let h = k as f64 + 0.5;
            poly *= h * h + lambda * lambda;
        }
        front * poly
    }
}

/// Im R_0(n/2 + i lambda; r). Smooth across the diagonal; odd in lambda.
pub fn im_r0_critical(n: usize, lambda: f64, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::SingularInput(format!("needs r > 0, got {r}")));
    }
    if n == 2 {
        return Ok(-(lambda * r).sin() / (4.0 * PI * r.sinh()));
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let mu = (n as f64 - 1.0) / 2.0;
    let order = LegendreOrder::from_dimension(n, Complex64::new(0.0, lambda));
    let p = crate::specfun::legendre::legendre_p(order, r)?;
    Ok(-0.5 * a_n(n, lambda) * r.sinh().powf(-mu) * p.re)
}

/// Representation kernel K(u; r) = (sinh r)^{-2 mu} (cosh r - cosh u)^{mu - 1/2}
/// on 0 <= u <= r, zero outside. The cosh difference is computed in the
/// factored product form.
pub fn k_kernel(n: usize, u: f64, r: f64) -> f64 {
    if u < 0.0 || u > r {
        return 0.0;
    }
    let mu = (n as f64 - 1.0) / 2.0;
    // cosh r - cosh u = 2 sinh((r-u)/2) sinh((r+u)/2)
    let diff = 2.0 * (0.5 * (r - u)).sinh() * (0.5 * (r + u)).sinh();
    r.sinh().powf(-2.0 * mu) * diff.powf(mu - 0.5)
}

/// Sphere-average transform of a radial function:
/// h(u) = |S^n| int_u^{r_max} K(u; r) g(r) sinh^n r dr, evaluated at the
/// given u nodes. The power sinh^{n - 2 mu} = sinh collapses the integrand
/// to sinh(r) (cosh r - cosh u)^{mu-1/2} g(r), and the substitution
/// r = u + w^2 regularizes the edge.
pub fn h_transform<F: Fn(f64) -> f64>(
    n: usize,
    g: &F,
    r_max: f64,
    u_nodes: &[f64],
) -> Result<Vec<f64>> {
    let mu = (n as f64 - 1.0) / 2.0;
    let area = sphere_area(n);
    // truncation check: mass of |g| sinh^n just beyond the grid edge
    let weight = |r: f64| r.sinh().powi(n as i32);
    let total = integrate_panels(&|r: f64| (g(r).abs() * weight(r)).into(), 0.0, r_max, 64, 16).re;
    let tail =
        integrate_panels(&|r: f64| (g(r).abs() * weight(r)).into(), r_max, r_max + 6.0, 24, 16).re;
    let tol = 1e-6;
    if tail > tol * (total + 1e-300) {
        return Err(Error::Truncation {
            r_max,
            tail_mass: tail / (total + 1e-300),
            tol,
        });
    }
    let mut out = Vec::with_capacity(u_nodes.len());
    for &u in u_nodes {
        let u = u.abs(); // even extension
        if u >= r_max {
            out.push(0.0);
            continue;
        }
        let f = |w: f64| {
            let d = w * w;
            let r = u + d;
            let amp = 2.0 * w.powf(2.0 * mu) * phi_plus(u, d).powf(mu - 0.5);
            Complex64::new(amp * r.sinh() * g(r), 0.0)
        };
        // pre-split so features down to ~1e-2 wide in w cannot hide between
        // the coarse/fine comparison nodes of a single adaptive interval
        let w_max = (r_max - u).sqrt();
        let panels = ((w_max / 0.125).ceil() as usize).clamp(8, 64);
        let mut total_u = 0.0;
        for p in 0..panels {
            let a = w_max * p as f64 / panels as f64;
            let b = w_max * (p + 1) as f64 / panels as f64;
            total_u += integrate_adaptive(&f, a, b, 1e-12, 40)?.re;
        }
        out.push(area * total_u);
    }
    Ok(out)
}

/// |R_0| divided by the regime-appropriate envelope with its constant
/// stripped: r |sigma| <= 1 uses |log r| (n = 1) or r^{1-n} (n >= 2);
/// r |sigma| >= 1 uses |sigma|^{n/2 - 1} e^{-(n/2 + Re sigma) r}.
pub fn bound_ratio(pt: SpectralPoint, r: f64) -> Result<f64> {
    let v = r0_kernel(pt, r)?.norm();
    let s = pt.sigma.norm();
    let envelope = if r * s <= 1.0 {
        if pt.n == 1 {
            r.ln().abs().max(1.0)
        } else {
            r.powf(1.0 - pt.n as f64)
        }
    } else {
        s.powf(pt.n as f64 / 2.0 - 1.0) * (-(pt.n as f64 / 2.0 + pt.sigma.re) * r).exp()
    };
    Ok(v / envelope)
}
