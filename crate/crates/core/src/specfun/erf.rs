//! Error functions on the rotated rays x e^{+-i pi/4}, Fresnel integrals,
//! and half-line Gaussian-oscillatory moments m_k(u,t) = int_0^inf
//! lambda^k exp(i t lambda^2 + i u lambda) d lambda.
//!
//! The moments are the backbone of the propagator evaluation: on the
//! critical line the spectral density is polynomial (up to an
//! exponentially small correction), so the time integral reduces to
//! exactly these objects.

use num_complex::Complex64;

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// erf(z) by Taylor series. Cancellation stays below ~1e-13 for |z| <= 3.2.
fn erf_taylor(z: Complex64) -> Complex64 {
    let z2 = z * z;
    let mut term = z; // (-1)^k z^{2k+1} / k!
    let mut sum = z;
    for k in 1..140usize {
        term = term * (-z2) / k as f64;
        let add = term / (2 * k + 1) as f64;
        sum += add;
        if add.norm() < 1e-17 * sum.norm() {
            break;
        }
    }
    sum * (2.0 / SQRT_PI)
}

/// Scaled complementary error function: sqrt(pi) * e^{z^2} erfc(z), for
/// Re z > 0, by the Laplace continued fraction (modified Lentz). Intended
/// for |z| >= 3, where it converges in a few dozen iterations.
fn erfc_cf_scaled(z: Complex64) -> Complex64 {
    // evaluate G = z + (1/2)/(z + 1/(z + (3/2)/(z + ...))) and return 1/G
    let tiny = Complex64::new(1e-150, 0.0);
    let mut f = z;
    let mut c = z;
    let mut d = Complex64::new(0.0, 0.0);
    for j in 1..400usize {
        let a = j as f64 / 2.0;
        d = z + a * d;
        if d.norm() < 1e-140 {
            d = tiny;
        }
        c = z + a / c;
        if c.norm() < 1e-140 {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).norm() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// e^{-i u^2/(4t)} * erfc(u e^{-i pi/4} / (2 sqrt t)), assembled without
/// forming the individually oscillatory factors when the continued
/// fraction applies (their phases cancel exactly on this ray).
fn phase_erfc(u: f64, t: f64) -> Complex64 {
    let ray = Complex64::from_polar(1.0, -std::f64::consts::FRAC_PI_4);
    let x = u.abs() / (2.0 * t.sqrt());
    let zeta = x * ray;
    let quad_phase = Complex64::from_polar(1.0, -u * u / (4.0 * t));
    if u >= 0.0 {
        if x <= 3.2 {
            quad_phase * (Complex64::new(1.0, 0.0) - erf_taylor(zeta))
        } else {
            // e^{-zeta^2} = e^{+i u^2/4t} cancels the quadratic phase
            erfc_cf_scaled(zeta) / SQRT_PI
        }
    } else if x <= 3.2 {
        quad_phase * (Complex64::new(1.0, 0.0) + erf_taylor(zeta))
    } else {
        2.0 * quad_phase - erfc_cf_scaled(zeta) / SQRT_PI
    }
}

/// m_0(u, t) = int_0^inf e^{i t l^2 + i u l} dl for t > 0.
pub fn moment0(u: f64, t: f64) -> Complex64 {
    // c = sqrt(t) e^{-i pi/4}; m_0 = sqrt(pi)/(2c) e^{-iu^2/4t} erfc(-iu/(2c))
    let c = t.sqrt() * Complex64::from_polar(1.0, -std::f64::consts::FRAC_PI_4);
    SQRT_PI / (2.0 * c) * phase_erfc(u, t)
}

/// Half-line moments m_0 .. m_kmax.
///
/// Upward recursion 2it m_k = -delta_{k,1} - (k-1) m_{k-2} - i u m_{k-1}
/// loses digits when the phase is endpoint-dominated (u >> sqrt t), so that
/// regime switches to the endpoint expansion in powers of t/u^2.
pub fn half_line_moments(u: f64, t: f64, kmax: usize) -> Vec<Complex64> {
    assert!(t > 0.0, "moments require t > 0");
    if u > 0.0 && u * u >= 160.0 * t {
        return (0..=kmax).map(|k| moment_endpoint(k, u, t)).collect();
    }
    let mut ms = Vec::with_capacity(kmax + 1);
    ms.push(moment0(u, t));
    let two_it = Complex64::new(0.0, 2.0 * t);
    let iu = Complex64::new(0.0, u);
    for k in 1..=kmax {
        let boundary = if k == 1 { 1.0 } else { 0.0 };
        let prev2 = if k >= 2 {
            (k as f64 - 1.0) * ms[k - 2]
        } else {
            Complex64::new(0.0, 0.0)
        };
        ms.push((-prev2 - iu * ms[k - 1] - boundary) / two_it);
    }
    ms
}

/// Endpoint expansion m_k = sum_m (it)^m (k+2m)! / (m! (-iu)^{k+2m+1}),
/// asymptotic in t/u^2; used when u^2 >= 160 t so the optimal-truncation
/// error is below ~e^{-40}.
fn moment_endpoint(k: usize, u: f64, t: f64) -> Complex64 {
    let inv_miu = 1.0 / Complex64::new(0.0, -u);
    // term_0 = k! / (-iu)^{k+1}
    let mut term = inv_miu;
    for j in 1..=k {
        term *= j as f64 * inv_miu;
    }
    let mut sum = term;
    let mut prev_norm = term.norm();
    for m in 0..60usize {
        let p = (k + 2 * m) as f64;
        term = term * Complex64::new(0.0, t) * (p + 2.0) * (p + 1.0) / (m as f64 + 1.0)
            * inv_miu
            * inv_miu;
        let n = term.norm();
        if n > prev_norm {
            break; // divergent tail of the asymptotic series
        }
        sum += term;
        prev_norm = n;
        if n < 1e-18 * sum.norm() {
            break;
        }
    }
    sum
}

/// Unnormalized Fresnel integrals (int_0^x cos(s^2) ds, int_0^x sin(s^2) ds),
/// extended to negative x as odd functions.
pub fn fresnel(x: f64) -> (f64, f64) {
    if x < 0.0 {
        let (c, s) = fresnel(-x);
        return (-c, -s);
    }
    // Cu + i Su = (sqrt(pi)/2) e^{i pi/4} erf(x e^{-i pi/4})
    let ray = Complex64::from_polar(1.0, -std::f64::consts::FRAC_PI_4);
    let erf_val = if x <= 3.2 {
        erf_taylor(x * ray)
    } else {
        // erf = 1 - e^{-zeta^2} * scaled/sqrt(pi), e^{-zeta^2} = e^{i x^2}
        Complex64::new(1.0, 0.0)
            - Complex64::from_polar(1.0, x * x) * erfc_cf_scaled(x * ray) / SQRT_PI
    };
    let w = SQRT_PI / 2.0 * Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4) * erf_val;
    (w.re, w.im)
}
