//! Gauss-Legendre quadrature: node generation, composite panels, and a
//! bisection-based adaptive driver used by the special-function integrals.

use crate::error::{Error, Result};
use num_complex::Complex64;
use std::sync::OnceLock;

/// Nodes and weights for N-point Gauss-Legendre quadrature on [-1, 1].
///
/// The orders used by the fixed-order drivers are cached; odd orders are
/// recomputed on each call.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    static CACHE8: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static CACHE16: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static CACHE24: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static CACHE32: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static CACHE48: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    static CACHE64: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let cache = match n {
        8 => Some(&CACHE8),
        16 => Some(&CACHE16),
        24 => Some(&CACHE24),
        32 => Some(&CACHE32),
        48 => Some(&CACHE48),
        64 => Some(&CACHE64),
        _ => None,
    };
    match cache {
        Some(slot) => slot.get_or_init(|| gauss_legendre_raw(n)).clone(),
        None => gauss_legendre_raw(n),
    }
}

/// Newton iteration on the Legendre polynomial with the asymptotic-cosine
/// initial guess; accurate to machine precision for N <= 64.
fn gauss_legendre_raw(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        // initial guess (Abramowitz-Stegun 25.4.30 flavor)
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            // evaluate P_n(x) and P_n'(x) by upward recurrence
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            pp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / pp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Fixed-order Gauss-Legendre integral of f over [a, b].
pub fn integrate<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64, order: usize) -> Complex64 {
    let (x, w) = gauss_legendre(order);
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..order {
        acc += w[i] * f(c + h * x[i]);
    }
    acc * h
}

/// Adaptive integral by interval bisection.
///
/// Each interval is accepted when a doubled-order rule agrees with the base
/// rule to `tol` (absolute, scaled by the accumulated magnitude). Depth is
/// budgeted; exceeding it is reported as nonconvergence rather than silently
/// returning the best effort.
pub fn integrate_adaptive<F: Fn(f64) -> Complex64>(
    f: &F,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: usize,
) -> Result<Complex64> {
    fn recurse<F: Fn(f64) -> Complex64>(
        f: &F,
        a: f64,
        b: f64,
        tol: f64,
        depth: usize,
        max_depth: usize,
    ) -> Result<Complex64> {
        let coarse = integrate(f, a, b, 16);
        let fine = integrate(f, a, b, 32);
        let err = (fine - coarse).norm();
        if err <= tol * (1.0 + fine.norm()) {
            return Ok(fine);
        }
        if depth >= max_depth {
            return Err(Error::Nonconvergence(format!(
                "adaptive depth budget {max_depth} exhausted on [{a}, {b}], err {err:.3e}"
            )));
        }
        let mid = 0.5 * (a + b);
        let left = recurse(f, a, mid, tol * 0.5, depth + 1, max_depth)?;
        let right = recurse(f, mid, b, tol * 0.5, depth + 1, max_depth)?;
        Ok(left + right)
    }
    recurse(f, a, b, tol, 0, max_depth)
}

/// Adaptive integral of a fallible integrand. The first evaluation error is
/// captured (the sample is replaced by zero so the driver can finish) and
/// re-raised afterwards, so kernel errors are not masked by quadrature.
pub fn integrate_result<F>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> Result<Complex64>
where
    F: Fn(f64) -> Result<Complex64>,
{
    let captured: std::cell::RefCell<Option<Error>> = std::cell::RefCell::new(None);
    let wrapped = |x: f64| match f(x) {
        Ok(v) => v,
        Err(e) => {
            captured.borrow_mut().get_or_insert(e);
            Complex64::new(0.0, 0.0)
        }
    };
    let v = integrate_adaptive(&wrapped, a, b, tol, depth)?;
    match captured.into_inner() {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// Composite rule: `panels` equal Gauss-Legendre panels of given order over [a, b].
pub fn integrate_panels<F: Fn(f64) -> Complex64>(
    f: &F,
    a: f64,
    b: f64,
    panels: usize,
    order: usize,
) -> Complex64 {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for p in 0..panels {
        let pa = a + p as f64 * h;
        let c = pa + 0.5 * h;
        for i in 0..order {
            acc += w[i] * f(c + 0.5 * h * x[i]);
        }
    }
    acc * (0.5 * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_nodes_integrate_polynomials_exactly() {
        // 5-point rule is exact through degree 9
        let f = |x: f64| Complex64::new(x.powi(9) + 3.0 * x.powi(4) + 1.0, 0.0);
        let v = integrate(&f, -1.0, 1.0, 5);
        // exact: 0 + 3*(2/5) + 2
        assert!((v.re - (6.0 / 5.0 + 2.0)).abs() < 1e-14);
        assert!(v.im.abs() < 1e-15);
    }

    #[test]
    fn gl_weights_sum_to_interval_length() {
        for n in [1, 2, 7, 24, 48] {
            let (_, w) = gauss_legendre(n);
            let s: f64 = w.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n} sum={s}");
        }
    }

    #[test]
    fn adaptive_handles_peaked_integrand() {
        // integral of 1/(x^2 + 1e-4) over [-1,1] = 2*atan(100)/0.01
        let f = |x: f64| Complex64::new(1.0 / (x * x + 1e-4), 0.0);
        let v = integrate_adaptive(&f, -1.0, 1.0, 1e-12, 40).unwrap();
        let exact = 2.0 * (100.0f64).atan() / 0.01;
        assert!((v.re - exact).abs() / exact < 1e-10);
    }

    #[test]
    fn adaptive_reports_depth_exhaustion() {
        // non-integrable singularity cannot converge
        let f = |x: f64| Complex64::new(1.0 / x.abs().max(1e-300), 0.0);
        assert!(integrate_adaptive(&f, -1.0, 1.0, 1e-10, 8).is_err());
    }
}
