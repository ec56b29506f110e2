//! Quadrature for integrals with quadratic phase,
//! int_a^b e^{i(t l^2 + beta l)} F(l) dl.
//!
//! Each panel carries the phase exactly: the amplitude is replaced by its
//! cubic Chebyshev interpolant, and the monomial-times-phase panel moments
//! reduce to differences of half-line moments. Panel width is therefore
//! limited only by amplitude smoothness, never by how fast the phase turns;
//! plain Gauss panels would need O(t) nodes per unit length.

use crate::error::{Error, Result};
use crate::quad::{gauss_legendre, integrate_adaptive};
use crate::specfun::half_line_moments;
use num_complex::Complex64;
use std::f64::consts::PI;

/// Symmetry of the amplitude under l -> -l, used to extend half-line
/// integrals to the full line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
    None,
}

/// Amplitude F of an oscillatory integral together with the window that
/// carries its mass. When a parity is declared, the closure must be
/// evaluable on the reflected window too; the flag is validated against
/// samples before use.
pub struct OscillatoryIntegrand<'a> {
    pub f: &'a (dyn Fn(f64) -> Complex64 + Sync),
    /// Integration window (a, b); mass outside is the caller's truncation.
    pub support: (f64, f64),
    pub parity: Parity,
    /// Highest amplitude derivative the caller vouches for; informational,
    /// recorded so decay diagnostics can state their assumptions.
    pub smoothness: usize,
}

impl<'a> OscillatoryIntegrand<'a> {
    pub fn new(f: &'a (dyn Fn(f64) -> Complex64 + Sync), support: (f64, f64)) -> Self {
        OscillatoryIntegrand {
            f,
            support,
            parity: Parity::None,
            smoothness: 0,
        }
    }

    pub fn with_parity(mut self, parity: Parity) -> Self {
        self.parity = parity;
        self
    }

    /// Checks the declared parity against point samples.
    pub fn validate(&self) -> Result<()> {
        if self.parity == Parity::None {
            return Ok(());
        }
        let (a, b) = self.support;
        let reach = a.abs().max(b.abs());
        let mut scale: f64 = 0.0;
        let mut worst: f64 = 0.0;
        for frac in [0.17, 0.43, 0.71, 0.93] {
            let x = frac * reach;
            let fp = (self.f)(x);
            let fm = (self.f)(-x);
            scale = scale.max(fp.norm()).max(fm.norm());
            let dev = match self.parity {
                Parity::Even => (fp - fm).norm(),
                Parity::Odd => (fp + fm).norm(),
                Parity::None => 0.0,
            };
            worst = worst.max(dev);
        }
        if worst > 1e-9 * (1.0 + scale) {
            return Err(Error::Precondition(format!(
                "declared {:?} parity violated by samples: deviation {worst:.3e}",
                self.parity
            )));
        }
        Ok(())
    }
}

/// int e^{i t l^2} F(l) dl over the integrand's window. t = 0 falls back to
/// plain adaptive quadrature; t > 0 goes through the exact-phase panels.
pub fn oscillatory_integral(fi: &OscillatoryIntegrand, t: f64) -> Result<Complex64> {
    fi.validate()?;
    let (a, b) = fi.support;
    if !(b > a) {
        return Err(Error::Precondition(format!(
            "integration window [{a}, {b}] is empty"
        )));
    }
    if t < 0.0 {
        return Err(Error::Precondition(format!(
            "phase time must be >= 0, got {t}"
        )));
    }
    if t == 0.0 {
        return integrate_adaptive(&|x| (fi.f)(x), a, b, 1e-12, 44);
    }
    filon_quadratic(fi.f, a, b, t, 0.0, 1e-10, 34)
}

/// int_a^b e^{i (t l^2 + beta l)} F(l) dl for t > 0, to absolute accuracy
/// near `tol`. Panels are bisected until the cubic amplitude model is
/// consistent between one panel and its halves; a panel that refuses to
/// settle within `max_depth` bisections is a resolution failure.
pub fn filon_quadratic<F>(
    f: &F,
    a: f64,
    b: f64,
    t: f64,
    beta: f64,
    tol: f64,
    max_depth: usize,
) -> Result<Complex64>
where
    F: Fn(f64) -> Complex64 + ?Sized,
{
    assert!(t > 0.0, "exact-phase panels require t > 0");
    let n0 = 12usize;
    // rounding floor of the assembly: amplitude scale times window length;
    // bisection must not chase residuals below it
    let mut fmax: f64 = 0.0;
    for p in 0..(4 * n0) {
        let x = a + (b - a) * (p as f64 + 0.5) / (4 * n0) as f64;
        fmax = fmax.max(f(x).norm());
    }
    let floor = 1e-15 * (1.0 + fmax * (b - a));
    let mut total = Complex64::new(0.0, 0.0);
    for p in 0..n0 {
        let pa = a + (b - a) * p as f64 / n0 as f64;
        let pb = a + (b - a) * (p + 1) as f64 / n0 as f64;
        let whole = panel_filon(f, pa, pb, t, beta);
        total += filon_recurse(f, pa, pb, t, beta, tol / n0 as f64, floor, max_depth, whole)?;
    }
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn filon_recurse<F>(
    f: &F,
    a: f64,
    b: f64,
    t: f64,
    beta: f64,
    tol: f64,
    floor: f64,
    depth: usize,
    whole: Complex64,
) -> Result<Complex64>
where
    F: Fn(f64) -> Complex64 + ?Sized,
{
    let mid = 0.5 * (a + b);
    let left = panel_filon(f, a, mid, t, beta);
    let right = panel_filon(f, mid, b, t, beta);
    let halves = left + right;
    if (whole - halves).norm() <= tol.max(floor) {
        return Ok(halves);
    }
    if depth == 0 {
        return Err(Error::Resolution(format!(
            "amplitude structure on [{a}, {b}] unresolved at t = {t}, \
             residual {:.3e} over budget {:.3e}",
            (whole - halves).norm(),
            tol.max(floor)
        )));
    }
    let lv = filon_recurse(f, a, mid, t, beta, 0.5 * tol, floor, depth - 1, left)?;
    let rv = filon_recurse(f, mid, b, t, beta, 0.5 * tol, floor, depth - 1, right)?;
    Ok(lv + rv)
}

/// One panel: cubic Chebyshev fit of the amplitude about the panel center,
/// then exact moments of x^j e^{i(t x^2 + u x)}.
fn panel_filon<F>(f: &F, a: f64, b: f64, t: f64, beta: f64) -> Complex64
where
    F: Fn(f64) -> Complex64 + ?Sized,
{
    let l0 = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let u = beta + 2.0 * t * l0;
    // Chebyshev abscissae come in symmetric pairs, so the cubic splits into
    // an even 2x2 and an odd 2x2 solve
    let xa = h * (PI / 8.0).cos();
    let xb = h * (3.0 * PI / 8.0).cos();
    let fpa = f(l0 + xa);
    let fma = f(l0 - xa);
    let fpb = f(l0 + xb);
    let fmb = f(l0 - xb);
    let ea = 0.5 * (fpa + fma);
    let oa = 0.5 * (fpa - fma);
    let eb = 0.5 * (fpb + fmb);
    let ob = 0.5 * (fpb - fmb);
    let d2 = xa * xa - xb * xb;
    let c2 = (ea - eb) / d2;
    let c0 = ea - c2 * (xa * xa);
    let c3 = (oa * xb - ob * xa) / (xa * xb * d2);
    let c1 = (oa - c3 * (xa * xa * xa)) / xa;
    let j = centered_moments(u, t, h);
    let phase0 = Complex64::from_polar(1.0, t * l0 * l0 + beta * l0);
    phase0 * (c0 * j[0] + c1 * j[1] + c2 * j[2] + c3 * j[3])
}

/// J_j = int_{-h}^{h} x^j e^{i(t x^2 + u x)} dx for j = 0..3.
///
/// A panel whose phase turns by only a few radians is integrated directly
/// by Gauss-Legendre: its moments then carry relative rounding, which keeps
/// narrow panels exact. Differencing two upper tails there instead would
/// leave an absolute error set by the tail magnitude, which dwarfs the
/// O(h^{j+1}) moments as h shrinks. Strongly oscillatory panels take the
/// tail route, where h is necessarily of size 1/|u| or larger and the
/// cancellation costs only a bounded number of digits.
pub(crate) fn centered_moments(u: f64, t: f64, h: f64) -> [Complex64; 4] {
    if 2.0 * h * u.abs() + t * h * h <= 8.0 {
        let (gx, gw) = gauss_legendre(16);
        let mut out = [Complex64::new(0.0, 0.0); 4];
        for i in 0..gx.len() {
            let x = h * gx[i];
            let ph = Complex64::from_polar(h * gw[i], t * x * x + u * x);
            out[0] += ph;
            out[1] += ph * x;
            out[2] += ph * (x * x);
            out[3] += ph * (x * x * x);
        }
        return out;
    }
    let lo = shifted_moments(-h, u, t);
    let hi = shifted_moments(h, u, t);
    [lo[0] - hi[0], lo[1] - hi[1], lo[2] - hi[2], lo[3] - hi[3]]
}

/// H_j(c) = int_c^inf x^j e^{i(t x^2 + u x)} dx for j = 0..3, by expanding
/// x = c + y about the endpoint.
pub(crate) fn shifted_moments(c: f64, u: f64, t: f64) -> [Complex64; 4] {
    let m = half_line_moments(u + 2.0 * t * c, t, 3);
    let ph = Complex64::from_polar(1.0, t * c * c + u * c);
    let c2 = c * c;
    [
        ph * m[0],
        ph * (c * m[0] + m[1]),
        ph * (c2 * m[0] + 2.0 * c * m[1] + m[2]),
        ph * (c2 * c * m[0] + 3.0 * c2 * m[1] + 3.0 * c * m[2] + m[3]),
    ]
}

/// int_c^inf l^m e^{i(t l^2 + u l)} dl for arbitrary moment order, binomial
/// expansion about the endpoint. Used for exact polynomial tails above a
/// spectral cutoff.
pub(crate) fn upper_tail_moment(m: usize, c: f64, u: f64, t: f64) -> Complex64 {
    let ms = half_line_moments(u + 2.0 * t * c, t, m);
    let ph = Complex64::from_polar(1.0, t * c * c + u * c);
    let mut acc = Complex64::new(0.0, 0.0);
    let mut binom = 1.0f64;
    // sum_l C(m, l) c^{m-l} m_l
    for (l, ml) in ms.iter().enumerate() {
        acc += binom * c.powi((m - l) as i32) * ml;
        binom *= (m - l) as f64 / (l as f64 + 1.0);
    }
    ph * acc
}
