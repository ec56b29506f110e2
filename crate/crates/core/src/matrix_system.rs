//! Ground states of the focusing NLS on H^{n+1}, the matrix operator
//! obtained by linearizing around them, and its resolvent and propagator.
//!
//! The essential spectrum of the matrix operator is |m| >= mu, two
//! branches. Each branch point m = +-(mu + tau^2) is probed through the
//! same strip-weighted Nystrom solves as the scalar theory, one
//! oscillatory block and one evanescent block at a time. The propagator
//! is a contour integral collapsed onto the two branches, evaluated as a
//! free diagonal part plus tabulated spectral corrections.

use crate::error::{Error, Result};
use crate::free_kernel::{r0_kernel, sphere_area, SpectralPoint};
use crate::perturbed::{averaged_r0_entry, PerturbedPropagator, PotentialSpec};
use crate::propagator::oscillatory::filon_quadratic;
use crate::propagator::{free_propagator_kernel, smooth_step};
use crate::quad::integrate_result;
use crate::radial_operator::{discretize, RadialGrid};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, RwLock};

/// Positive radial ground state of
/// psi'' + n coth(r) psi' - (mu - n^2/4) psi + psi^{p+1} = 0.
///
/// The profile is stored on a uniform radial grid and continued past
/// `r_tail` by its exact exponential rate.
#[derive(Clone)]
pub struct BoundState {
    pub n: usize,
    pub mu: f64,
    pub p: f64,
    /// psi(0)
    pub amplitude: f64,
    /// exponential rate fitted on the outer part of the samples
    pub decay_rate: f64,
    samples: Vec<f64>,
    step: f64,
    r_tail: f64,
    tail_c: f64,
}

impl fmt::Debug for BoundState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundState")
            .field("n", &self.n)
            .field("mu", &self.mu)
            .field("p", &self.p)
            .field("amplitude", &self.amplitude)
            .field("decay_rate", &self.decay_rate)
            .field("r_tail", &self.r_tail)
            .finish()
    }
}

impl BoundState {
    pub fn kappa2(&self) -> f64 {
        self.mu - (self.n as f64) * (self.n as f64) / 4.0
    }

    /// n/2 + sqrt(mu), the linear decay rate at zero energy.
    pub fn theoretical_rate(&self) -> f64 {
        self.n as f64 / 2.0 + self.mu.sqrt()
    }

    pub fn eval(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return self.amplitude;
        }
        if r >= self.r_tail {
            return self.tail_c * (-self.theoretical_rate() * r).exp();
        }
        let x = r / self.step;
        let i = (x.floor() as usize).min(self.samples.len() - 2);
        let s = x - i as f64;
        if i == 0 || i + 2 >= self.samples.len() {
            return self.samples[i] * (1.0 - s) + self.samples[i + 1] * s;
        }
        let (vm, v0, v1, v2) = (
            self.samples[i - 1],
            self.samples[i],
            self.samples[i + 1],
            self.samples[i + 2],
        );
        let c1 = 0.5 * (v1 - vm);
        let c2 = vm - 2.5 * v0 + 2.0 * v1 - 0.5 * v2;
        let c3 = 0.5 * (v2 - vm) + 1.5 * (v0 - v1);
        v0 + s * (c1 + s * (c2 + s * c3))
    }

    /// Profile samples (r_k, psi(r_k)) on the stored uniform grid.
    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.samples
            .iter()
            .enumerate()
            .map(move |(k, &v)| (k as f64 * self.step, v))
    }

    /// Scaled copy of the profile. The result no longer solves the
    /// stationary equation; it is a decay-certified input for
    /// small-amplitude linearization studies.
    pub fn scaled(&self, factor: f64) -> BoundState {
        BoundState {
            amplitude: self.amplitude * factor,
            samples: self.samples.iter().map(|v| v * factor).collect(),
            tail_c: self.tail_c * factor,
            ..self.clone()
        }
    }

    /// Sup of the stationary-equation residual over (0, r_hi], by finite
    /// differences on the stored samples.
    pub fn ode_residual_sup(&self, r_hi: f64) -> f64 {
        let h = self.step;
        let kap2 = self.kappa2();
        let nf = self.n as f64;
        let i_hi = ((r_hi.min(self.r_tail) / h) as usize).min(self.samples.len() - 3);
        let mut worst = 0.0f64;
        for i in 2..i_hi {
            let r = i as f64 * h;
            let (um2, um1, u0, up1, up2) = (
                self.samples[i - 2],
                self.samples[i - 1],
                self.samples[i],
                self.samples[i + 1],
                self.samples[i + 2],
            );
            let d2 = (-up2 + 16.0 * up1 - 30.0 * u0 + 16.0 * um1 - um2) / (12.0 * h * h);
            let d1 = (um2 - 8.0 * um1 + 8.0 * up1 - up2) / (12.0 * h);
            let res = d2 + nf * (r.cosh() / r.sinh()) * d1 - kap2 * u0 + u0.powf(self.p + 1.0);
            worst = worst.max(res.abs());
        }
        worst
    }
}

struct Stationary {
    nf: f64,
    kap2: f64,
    pp1: f64,
}

impl Stationary {
    fn field(&self, r: f64, y: f64, yp: f64) -> (f64, f64) {
        let src = if y > 0.0 { y.powf(self.pp1) } else { 0.0 };
        (
            yp,
            -self.nf * (r.cosh() / r.sinh()) * yp + self.kap2 * y - src,
        )
    }

    fn step(&self, r: f64, y: f64, yp: f64, h: f64) -> (f64, f64) {
        let (k1y, k1p) = self.field(r, y, yp);
        let (k2y, k2p) = self.field(r + h / 2.0, y + h / 2.0 * k1y, yp + h / 2.0 * k1p);
        let (k3y, k3p) = self.field(r + h / 2.0, y + h / 2.0 * k2y, yp + h / 2.0 * k2p);
        let (k4y, k4p) = self.field(r + h, y + h * k3y, yp + h * k3p);
        (
            y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y),
            yp + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p),
        )
    }

    fn series_c2(&self, a: f64) -> f64 {
        (self.kap2 * a - a.powf(self.pp1)) / (2.0 * (self.nf + 1.0))
    }

    /// r^4 coefficient of the even series at the origin.
    fn series_c4(&self, a: f64) -> f64 {
        let c2 = self.series_c2(a);
        let src = if a > 0.0 { a.powf(self.pp1 - 1.0) } else { 0.0 };
        (c2 * (self.kap2 - self.pp1 * src) - 2.0 * self.nf * c2 / 3.0) / (12.0 + 4.0 * self.nf)
    }

    fn series_eval(&self, a: f64, r: f64) -> (f64, f64) {
        let (c2, c4) = (self.series_c2(a), self.series_c4(a));
        (
            a + c2 * r * r + c4 * r * r * r * r,
            2.0 * c2 * r + 4.0 * c4 * r * r * r,
        )
    }
}

/// Forward shot from the series start at the origin. Returns whether the
/// trajectory crossed zero inside the box, and its value at `r_probe`
/// (meaningful only when it did not cross earlier).
fn shoot_forward(st: &Stationary, a: f64, r_box: f64, h: f64, r_probe: f64) -> (bool, f64) {
    let mut r = 1e-4;
    let (mut y, mut yp) = st.series_eval(a, r);
    let mut probe = a;
    let steps = ((r_box - r) / h) as usize;
    for _ in 0..steps {
        let nr = r + h;
        let (ny, nyp) = st.step(r, y, yp, h);
        if r < r_probe && nr >= r_probe {
            probe = ny;
        }
        y = ny;
        yp = nyp;
        r = nr;
        if y < 0.0 || !y.is_finite() {
            return (true, probe);
        }
    }
    (false, probe)
}

/// Integrate backward from the exponential tail. The decaying solution
/// grows in this direction, so the march is stable and the samples keep
/// full accuracy all the way to the origin. Returns the ascending
/// samples (index k at r = k h_store, with the r = 0 value filled from
/// the interior series) and psi' at the first stored radius.
fn integrate_backward(
    st: &Stationary,
    s_rate: f64,
    c: f64,
    n_store: usize,
    h_store: f64,
    sub: usize,
) -> (Vec<f64>, f64) {
    let r_far = n_store as f64 * h_store;
    let mut y = c * (-s_rate * r_far).exp();
    let mut yp = -s_rate * y;
    let h = h_store / sub as f64;
    let mut desc = Vec::with_capacity(n_store + 1);
    desc.push(y);
    for k in (1..n_store).rev() {
        let base = (k + 1) as f64 * h_store;
        for j in 0..sub {
            let r = base - j as f64 * h;
            let (ny, nyp) = st.step(r, y, yp, -h);
            y = ny;
            yp = nyp;
        }
        desc.push(y);
    }
    let yp_end = yp;
    desc.reverse();
    let y1 = desc[0];
    let mut a = y1;
    for _ in 0..4 {
        a = y1 - (st.series_eval(a, h_store).0 - a);
    }
    let mut samples = Vec::with_capacity(n_store + 1);
    samples.push(a);
    samples.extend_from_slice(&desc);
    (samples, yp_end)
}

/// Shooting solver. The amplitude is bisected between trajectories that
/// cross zero and trajectories that never do; the undershoot side is
/// overdamped at moderate parameters and flattens onto the constant
/// solution kappa^{2/p} instead of turning back up, so zero crossing is
/// the only reliable dichotomy. The certified amplitude then seeds a
/// backward integration from the tail, which rebuilds the profile along
/// the numerically stable direction.
pub fn bound_state_solve(n: usize, mu: f64, p: f64) -> Result<BoundState> {
    bound_state_solve_in_box(n, mu, p, 20.0)
}

/// Same solver with an explicit integration box, exposed so independence
/// of the box can be checked.
pub fn bound_state_solve_in_box(n: usize, mu: f64, p: f64, r_box: f64) -> Result<BoundState> {
    let nf = n as f64;
    let kap2 = mu - nf * nf / 4.0;
    if kap2 <= 0.0 {
        return Err(Error::Precondition(format!(
            "mass parameter mu = {mu} must exceed n^2/4 = {}",
            nf * nf / 4.0
        )));
    }
    if p <= 0.0 || (n >= 2 && p >= 4.0 / (nf - 1.0)) {
        return Err(Error::Precondition(format!(
            "nonlinearity power p = {p} outside the subcritical range (0, {})",
            4.0 / (nf - 1.0)
        )));
    }
    let st = Stationary {
        nf,
        kap2,
        pp1: p + 1.0,
    };
    let h = 5e-4;
    let r_probe = (0.3 * r_box).min(6.0);
    let mut lo = kap2.powf(1.0 / p) * 1.0001;
    if shoot_forward(&st, lo, r_box, h, r_probe).0 {
        return Err(Error::NoGroundState(
            "threshold amplitude already crosses zero".into(),
        ));
    }
    let mut hi = lo;
    let mut crossed = false;
    for _ in 0..40 {
        hi *= 2.0;
        if shoot_forward(&st, hi, r_box, h, r_probe).0 {
            crossed = true;
            break;
        }
        lo = hi;
    }
    if !crossed {
        return Err(Error::NoGroundState(format!(
            "no zero crossing up to amplitude {hi}"
        )));
    }
    let mut width = hi - lo;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if shoot_forward(&st, mid, r_box, h, r_probe).0 {
            hi = mid;
        } else {
            lo = mid;
        }
        // the bracket must shrink strictly or the dichotomy has broken
        let w = hi - lo;
        if !(w < width) {
            return Err(Error::Nonconvergence("shooting bracket stalled".into()));
        }
        width = w;
    }
    let a_forward = lo;
    let (_, y_probe) = shoot_forward(&st, a_forward, r_box, h, r_probe);
    // rebuild the profile backward from the tail; the forward trajectory
    // seeds the tail amplitude, and matching psi' at the innermost stored
    // radius removes the singular homogeneous component at the origin
    let s_rate = nf / 2.0 + mu.sqrt();
    let h_store = 2e-3;
    let n_store = (r_box / h_store).round() as usize;
    let sub = 4;
    let c_est = y_probe * (s_rate * r_probe).exp();
    if !(c_est > 0.0 && c_est.is_finite()) {
        return Err(Error::Nonconvergence(format!(
            "tail amplitude estimate {c_est} from the forward shot"
        )));
    }
    let miss = |c: f64| -> f64 {
        let (samples, yp_end) = integrate_backward(&st, s_rate, c, n_store, h_store, sub);
        let a = samples[0];
        yp_end - st.series_eval(a, h_store).1
    };
    let mut c_lo = c_est * 0.7;
    let mut c_hi = c_est * 1.3;
    let mut f_lo = miss(c_lo);
    let mut f_hi = miss(c_hi);
    let mut tries = 0;
    while f_lo.signum() == f_hi.signum() {
        tries += 1;
        if tries > 8 {
            return Err(Error::Nonconvergence(
                "tail amplitude bracket never changes sign".into(),
            ));
        }
        c_lo /= 1.6;
        c_hi *= 1.6;
        f_lo = miss(c_lo);
        f_hi = miss(c_hi);
    }
    for _ in 0..70 {
        let mid = 0.5 * (c_lo + c_hi);
        if miss(mid).signum() == f_lo.signum() {
            c_lo = mid;
        } else {
            c_hi = mid;
        }
        if c_hi - c_lo < 1e-13 * c_hi {
            break;
        }
    }
    let c_star = 0.5 * (c_lo + c_hi);
    let (samples, _) = integrate_backward(&st, s_rate, c_star, n_store, h_store, sub);
    let amplitude = samples[0];
    if (amplitude - a_forward).abs() > 1e-6 * amplitude.max(1.0) {
        return Err(Error::Nonconvergence(format!(
            "backward profile amplitude {amplitude} disagrees with the forward bracket {a_forward}"
        )));
    }
    if samples.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Nonconvergence(
            "ground state profile lost positivity".into(),
        ));
    }
    // fitted decay over an outer window of genuine samples
    let fit_lo = (8.0f64.min(0.5 * r_box) / h_store) as usize;
    let fit_hi = ((0.75 * r_box).min(15.0) / h_store) as usize;
    let (mut sx, mut sy, mut sxx, mut sxy, mut cnt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for k in fit_lo..fit_hi {
        let r = k as f64 * h_store;
        let l = samples[k].ln();
        sx += r;
        sy += l;
        sxx += r * r;
        sxy += r * l;
        cnt += 1.0;
    }
    let decay_rate = -(cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
    if (decay_rate - s_rate).abs() > 0.1 * s_rate {
        return Err(Error::Nonconvergence(format!(
            "fitted decay {decay_rate} strays from the linear rate {s_rate}"
        )));
    }
    let r_tail = 0.96 * r_box;
    let k_tail = (r_tail / h_store) as usize;
    let tail_c = samples[k_tail] * (s_rate * (k_tail as f64 * h_store)).exp();
    Ok(BoundState {
        n,
        mu,
        p,
        amplitude,
        decay_rate,
        samples,
        step: h_store,
        r_tail: k_tail as f64 * h_store,
        tail_c,
    })
}

/// The two radial potentials of the linearized operator, sharing one
/// certified decay rate.
#[derive(Debug, Clone)]
pub struct MatrixPotential {
    pub v1: PotentialSpec,
    pub v2: PotentialSpec,
    pub alpha: f64,
}

impl MatrixPotential {
    pub fn zero() -> Self {
        MatrixPotential {
            v1: PotentialSpec::zero(),
            v2: PotentialSpec::zero(),
            alpha: 4.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.v1.v0 == 0.0 && self.v2.v0 == 0.0
    }

    fn envelope_ok(&self, grid: &RadialGrid) -> Result<()> {
        self.v1.envelope_ok(grid)?;
        self.v2.envelope_ok(grid)
    }
}

/// V1 = beta(psi^2) + beta'(psi^2) psi^2 and V2 = beta'(psi^2) psi^2 for
/// the pure power beta(x) = x^{p/2}, so V1 = (1 + p/2) psi^p and
/// V2 = (p/2) psi^p. The signs are locked by the zero-mode relation: the
/// linearized operator annihilates (psi, -psi) exactly when these
/// combinations restore the stationary equation.
pub fn linearize(state: &BoundState) -> MatrixPotential {
    let p = state.p;
    let alpha = 0.97 * p * state.decay_rate.min(state.theoretical_rate());
    let s1 = Arc::new(state.clone());
    let s2 = s1.clone();
    let f1 = move |r: f64| (1.0 + p / 2.0) * s1.eval(r).powf(p);
    let f2 = move |r: f64| (p / 2.0) * s2.eval(r).powf(p);
    // envelope constants certified on a dense abscissa
    let sup_weighted = |f: &dyn Fn(f64) -> f64| {
        let mut v0 = 0.0f64;
        let mut r = 0.0;
        while r <= 25.0 {
            v0 = v0.max(f(r).abs() * (alpha * r).exp());
            r += 0.01;
        }
        v0 * 1.02
    };
    let v01 = sup_weighted(&f1);
    let v02 = sup_weighted(&f2);
    MatrixPotential {
        v1: PotentialSpec::new(f1, v01, alpha),
        v2: PotentialSpec::new(f2, v02, alpha),
        alpha,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    PlusI0,
    MinusI0,
}

/// Point m on the essential spectrum |m| > mu, with the branch parameter
/// tau >= 0 fixed by |m| = mu + tau^2 and the side of the limiting
/// absorption.
#[derive(Debug, Clone, Copy)]
pub struct MassPoint {
    pub m: f64,
    pub tau: f64,
    pub side: Side,
}

impl MassPoint {
    pub fn new(mu: f64, m: f64, side: Side) -> Result<Self> {
        if !(m.abs() > mu) {
            return Err(Error::SpectralGap { m_abs: m.abs(), mu });
        }
        Ok(MassPoint {
            m,
            tau: (m.abs() - mu).sqrt(),
            side,
        })
    }

    /// Spectral parameters (sigma_1, sigma_2) of the two scalar blocks,
    /// sigma_1 = sqrt(mu - z) and sigma_2 = sqrt(mu + z), continued onto
    /// the requested side of the branch. The oscillatory block picks up
    /// +i tau when z approaches its branch from below and -i tau from
    /// above; the other block stays evanescent at sqrt(2 mu + tau^2).
    pub fn block_sigmas(&self, mu: f64) -> (Complex64, Complex64) {
        let ev = Complex64::new((2.0 * mu + self.tau * self.tau).sqrt(), 0.0);
        let im = match (self.side, self.m > 0.0) {
            (Side::MinusI0, true) | (Side::PlusI0, false) => self.tau,
            (Side::MinusI0, false) | (Side::PlusI0, true) => -self.tau,
        };
        let osc = Complex64::new(0.0, im);
        if self.m > 0.0 {
            (osc, ev)
        } else {
            (ev, osc)
        }
    }
}

/// Operator on pairs of radial functions, raw measure convention
/// blockwise; the 2N x 2N matrix is stored whole and indexed by
/// (block, node).
#[derive(Debug, Clone)]
pub struct BlockKernelOp {
    pub grid: RadialGrid,
    pub m: DMatrix<Complex64>,
}

impl BlockKernelOp {
    pub fn block(&self, a: usize, b: usize) -> DMatrix<Complex64> {
        let n = self.grid.len();
        self.m.view((a * n, b * n), (n, n)).clone_owned()
    }
}

fn scalar_block(pt: SpectralPoint, grid: &RadialGrid) -> Result<DMatrix<Complex64>> {
    if pt.sigma.im == 0.0 {
        let mut w_max = 0.0f64;
        let mut p = 0;
        while p < grid.len() {
            let (a, b, _, j1) = grid.panel_bounds(p);
            w_max = w_max.max(b - a);
            p = j1;
        }
        if pt.sigma.re * w_max >= 4.8 {
            return evanescent_block(pt, grid);
        }
    }
    let k = move |r1: f64, r2: f64| averaged_r0_entry(pt, r1, r2);
    Ok(discretize(&k, grid)?.matrix)
}

/// Point-Nystrom entries cannot resolve a kernel whose scale 1/sigma sits
/// far below the panel width. Strongly evanescent blocks are therefore
/// assembled by product integration near the diagonal: inside the band
/// each entry is the exact panel integral projected onto the panel's
/// Lagrange basis, outside it the kernel is smooth at node resolution and
/// point values stand.
fn evanescent_block(pt: SpectralPoint, grid: &RadialGrid) -> Result<DMatrix<Complex64>> {
    let sigma = pt.sigma.re;
    let m = grid.len();
    let area = sphere_area(grid.n);
    let npow = grid.n as i32;
    let band = 8.0 / sigma;
    let rows: Vec<Result<Vec<Complex64>>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let ri = grid.nodes[i];
            let mut row = Vec::with_capacity(m);
            for j in 0..m {
                row.push(averaged_r0_entry(pt, ri, grid.nodes[j])?);
            }
            let mut p = 0;
            while p < m {
                let (a, b, j0, j1) = grid.panel_bounds(p);
                p = j1;
                let dist = (a - ri).max(ri - b).max(0.0);
                if dist > band {
                    continue;
                }
                for q in j0..j1 {
                    let xq = grid.nodes[q];
                    let f = |s: f64| -> Result<Complex64> {
                        let mut l = 1.0;
                        for q2 in j0..j1 {
                            if q2 != q {
                                l *= (s - grid.nodes[q2]) / (xq - grid.nodes[q2]);
                            }
                        }
                        Ok(averaged_r0_entry(pt, ri, s)?
                            * (area * s.sinh().powi(npow) * l))
                    };
                    let val = if ri > a && ri < b {
                        // the averaged kernel has a derivative kink at s = ri
                        integrate_result(&f, a, ri, 1e-11, 40)?
                            + integrate_result(&f, ri, b, 1e-11, 40)?
                    } else {
                        integrate_result(&f, a, b, 1e-11, 40)?
                    };
                    row[q] = val / grid.measure(q);
                }
            }
            Ok(row)
        })
        .collect();
    let mut out = DMatrix::from_element(m, m, Complex64::new(0.0, 0.0));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row?.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}

fn assemble_h0(n: usize, s1: Complex64, s2: Complex64, grid: &RadialGrid) -> Result<BlockKernelOp> {
    let b1 = scalar_block(SpectralPoint::new(n, s1), grid)?;
    let b2 = scalar_block(SpectralPoint::new(n, s2), grid)?;
    let sz = grid.len();
    let mut m = DMatrix::from_element(2 * sz, 2 * sz, Complex64::new(0.0, 0.0));
    for i in 0..sz {
        for j in 0..sz {
            m[(i, j)] = b1[(i, j)];
            m[(sz + i, sz + j)] = -b2[(i, j)];
        }
    }
    Ok(BlockKernelOp {
        grid: grid.clone(),
        m,
    })
}

/// Free matrix resolvent at a point of the essential spectrum:
/// diag(R_0(sigma_1), -R_0(sigma_2)) in the branch decomposition.
pub fn h0_resolvent(n: usize, mu: f64, pt: &MassPoint, grid: &RadialGrid) -> Result<BlockKernelOp> {
    let (s1, s2) = pt.block_sigmas(mu);
    assemble_h0(n, s1, s2, grid)
}

/// Free matrix resolvent inside the spectral gap |m| < mu, where both
/// square roots are real and the blocks are real symmetric kernels.
pub fn h0_resolvent_gap(n: usize, mu: f64, m: f64, grid: &RadialGrid) -> Result<BlockKernelOp> {
    if m.abs() >= mu {
        return Err(Error::Precondition(format!(
            "gap evaluation needs |m| < mu, got m = {m}, mu = {mu}"
        )));
    }
    let s1 = Complex64::new((mu - m).sqrt(), 0.0);
    let s2 = Complex64::new((mu + m).sqrt(), 0.0);
    assemble_h0(n, s1, s2, grid)
}

/// Node values of the coupling matrix [[-V1, -V2], [V2, V1]].
struct CouplingTable {
    v1: Vec<f64>,
    v2: Vec<f64>,
}

impl CouplingTable {
    fn new(mv: &MatrixPotential, grid: &RadialGrid) -> Self {
        CouplingTable {
            v1: grid.nodes.iter().map(|&r| mv.v1.eval(r)).collect(),
            v2: grid.nodes.iter().map(|&r| mv.v2.eval(r)).collect(),
        }
    }

    fn at(&self, a: usize, b: usize, j: usize) -> f64 {
        match (a, b) {
            (0, 0) => -self.v1[j],
            (0, 1) => -self.v2[j],
            (1, 0) => self.v2[j],
            (1, 1) => self.v1[j],
            _ => unreachable!(),
        }
    }
}

/// Entry of the coupling matrix at an arbitrary radius.
#[cfg(test)]
fn coupling(mv: &MatrixPotential, a: usize, b: usize, r: f64) -> f64 {
    match (a, b) {
        (0, 0) => -mv.v1.eval(r),
        (0, 1) => -mv.v2.eval(r),
        (1, 0) => mv.v2.eval(r),
        (1, 1) => mv.v1.eval(r),
        _ => unreachable!(),
    }
}

/// Strip-weighted system I + rho^{-alpha/2} V R_0 D rho^{alpha/2} whose
/// determinant is the matrix resonance indicator.
fn matrix_weighted_system(
    ct: &CouplingTable,
    alpha: f64,
    blocks: &BlockKernelOp,
    grid: &RadialGrid,
) -> DMatrix<Complex64> {
    let sz = grid.len();
    let mut out = DMatrix::from_element(2 * sz, 2 * sz, Complex64::new(0.0, 0.0));
    for ba in 0..2 {
        for bb in 0..2 {
            for i in 0..sz {
                let vi = ct.at(ba, bb, i);
                if vi == 0.0 {
                    continue;
                }
                let wi = (alpha * grid.nodes[i] / 2.0).exp() * vi;
                for j in 0..sz {
                    let wj = grid.measure(j) * (-alpha * grid.nodes[j] / 2.0).exp();
                    out[(ba * sz + i, bb * sz + j)] =
                        wi * blocks.m[(bb * sz + i, bb * sz + j)] * wj;
                }
            }
        }
    }
    for k in 0..2 * sz {
        out[(k, k)] += 1.0;
    }
    out
}

/// det(I + rho^{-alpha/2} V (H_0 - z)^{-1} rho^{alpha/2}) at the mass
/// point.
pub fn matrix_fredholm_det(
    mv: &MatrixPotential,
    n: usize,
    mu: f64,
    pt: &MassPoint,
    grid: &RadialGrid,
) -> Result<Complex64> {
    mv.envelope_ok(grid)?;
    let h0 = h0_resolvent(n, mu, pt, grid)?;
    let ct = CouplingTable::new(mv, grid);
    Ok(matrix_weighted_system(&ct, mv.alpha, &h0, grid)
        .lu()
        .determinant())
}

/// (H - z)^{-1} = (I + (H_0 - z)^{-1} V)^{-1} (H_0 - z)^{-1} on the grid,
/// raw measure convention.
pub fn matrix_rv(
    mv: &MatrixPotential,
    n: usize,
    mu: f64,
    pt: &MassPoint,
    grid: &RadialGrid,
) -> Result<BlockKernelOp> {
    mv.envelope_ok(grid)?;
    let h0 = h0_resolvent(n, mu, pt, grid)?;
    if mv.is_zero() {
        return Ok(h0);
    }
    let sz = grid.len();
    let alpha = mv.alpha;
    let ct = CouplingTable::new(mv, grid);
    let bw = matrix_weighted_system(&ct, alpha, &h0, grid);
    let lu = bw.lu();
    let det = lu.determinant();
    if det.norm() < 1e-10 {
        return Err(Error::NearResonance {
            det_modulus: det.norm(),
            location: format!("m = {:.6}", pt.m),
        });
    }
    let mut rhs = DMatrix::from_element(2 * sz, 2 * sz, Complex64::new(0.0, 0.0));
    for b in 0..2 {
        for j in 0..sz {
            let wj = (alpha * grid.nodes[j] / 2.0).exp() / grid.measure(j);
            rhs[(b * sz + j, b * sz + j)] = Complex64::new(wj, 0.0);
        }
    }
    let s = lu.solve(&rhs).expect("determinant already checked");
    let mut left = h0.m.clone();
    for b in 0..2 {
        for j in 0..sz {
            let dj = grid.measure(j) * (-alpha * grid.nodes[j] / 2.0).exp();
            for i in 0..2 * sz {
                left[(i, b * sz + j)] *= dj;
            }
        }
    }
    Ok(BlockKernelOp {
        grid: grid.clone(),
        m: left * s,
    })
}

/// Determinant sweep along one branch of the essential spectrum.
pub fn matrix_det_scan(
    mv: &MatrixPotential,
    n: usize,
    mu: f64,
    m_range: (f64, f64),
    steps: usize,
    side: Side,
    grid: &RadialGrid,
) -> Result<Vec<(f64, Complex64)>> {
    mv.envelope_ok(grid)?;
    let ct = CouplingTable::new(mv, grid);
    let pts: Vec<f64> = (0..steps)
        .map(|i| m_range.0 + (m_range.1 - m_range.0) * i as f64 / (steps - 1).max(1) as f64)
        .collect();
    pts.par_iter()
        .map(|&m| {
            let pt = MassPoint::new(mu, m, side)?;
            let h0 = h0_resolvent(n, mu, &pt, grid)?;
            let det = matrix_weighted_system(&ct, mv.alpha, &h0, grid)
                .lu()
                .determinant();
            Ok((m, det))
        })
        .collect()
}

/// Scalar-block data of one contour branch: kernels of the two diagonal
/// blocks (signs not yet folded in) and their spectral points.
struct BranchBlocks {
    n0: DMatrix<Complex64>,
    n1: DMatrix<Complex64>,
    p0: SpectralPoint,
    p1: SpectralPoint,
}

/// Resolvent columns from a point source at the origin in each block,
/// solved through I + R_0 D V in strip weights; one factorization serves
/// both sources. Returns the columns and the determinant modulus.
fn branch_columns(
    ct: &CouplingTable,
    alpha: f64,
    bl: &BranchBlocks,
    grid: &RadialGrid,
    m_label: f64,
) -> Result<([Vec<Complex64>; 2], f64)> {
    let sz = grid.len();
    let mut cw = DMatrix::from_element(2 * sz, 2 * sz, Complex64::new(0.0, 0.0));
    for a in 0..2 {
        let (nblk, asign) = if a == 0 { (&bl.n0, 1.0) } else { (&bl.n1, -1.0) };
        for b in 0..2 {
            for j in 0..sz {
                let fj =
                    ct.at(a, b, j) * grid.measure(j) * (alpha * grid.nodes[j] / 2.0).exp();
                if fj == 0.0 {
                    continue;
                }
                for i in 0..sz {
                    cw[(a * sz + i, b * sz + j)] =
                        (-alpha * grid.nodes[i] / 2.0).exp() * asign * nblk[(i, j)] * fj;
                }
            }
        }
    }
    for k in 0..2 * sz {
        cw[(k, k)] += 1.0;
    }
    let lu = cw.lu();
    let det = lu.determinant();
    if det.norm() < 1e-10 {
        return Err(Error::NearResonance {
            det_modulus: det.norm(),
            location: format!("|m| = {m_label:.6}"),
        });
    }
    let mut rhs = DMatrix::from_element(2 * sz, 2, Complex64::new(0.0, 0.0));
    for j in 0..sz {
        let w = (-alpha * grid.nodes[j] / 2.0).exp();
        rhs[(j, 0)] = w * r0_kernel(bl.p0, grid.nodes[j])?;
        rhs[(sz + j, 1)] = -w * r0_kernel(bl.p1, grid.nodes[j])?;
    }
    let yw = lu.solve(&rhs).expect("determinant already checked");
    let unweight = |src: usize| -> Vec<Complex64> {
        (0..2 * sz)
            .map(|k| (alpha * grid.nodes[k % sz] / 2.0).exp() * yw[(k, src)])
            .collect()
    };
    Ok(([unweight(0), unweight(1)], det.norm()))
}

/// Contour propagator e^{itH} P_c of the linearized operator, evaluated
/// entrywise at (origin, r). Both branches m = +-(mu + tau^2) of the
/// essential spectrum carry tabulated spectral corrections on top of the
/// free diagonal part; the tables are built from the z - i0 side.
pub struct MatrixPropagator {
    mv: MatrixPotential,
    pub n: usize,
    pub mu: f64,
    grid: RadialGrid,
    tau_step: f64,
    /// per tau index, per source block: resolvent columns on each branch
    pos_cols: Vec<[Vec<Complex64>; 2]>,
    neg_cols: Vec<[Vec<Complex64>; 2]>,
    pub min_det_modulus: f64,
    slices: RwLock<HashMap<u64, Arc<[Vec<f64>; 8]>>>,
}

impl MatrixPropagator {
    pub fn build(
        mv: &MatrixPotential,
        n: usize,
        mu: f64,
        grid: &RadialGrid,
        tau_max: f64,
        tau_step: f64,
    ) -> Result<Self> {
        mv.envelope_ok(grid)?;
        let count = (tau_max / tau_step).round() as usize + 1;
        if mv.is_zero() {
            return Ok(MatrixPropagator {
                mv: mv.clone(),
                n,
                mu,
                grid: grid.clone(),
                tau_step,
                pos_cols: (0..count).map(|_| [Vec::new(), Vec::new()]).collect(),
                neg_cols: (0..count).map(|_| [Vec::new(), Vec::new()]).collect(),
                min_det_modulus: 1.0,
                slices: RwLock::new(HashMap::new()),
            });
        }
        let ct = CouplingTable::new(mv, grid);
        let sols: Vec<Result<([Vec<Complex64>; 2], [Vec<Complex64>; 2], f64)>> = (0..count)
            .into_par_iter()
            .map(|i| {
                let tau = i as f64 * tau_step;
                let m_label = mu + tau * tau;
                let ev = Complex64::new((2.0 * mu + tau * tau).sqrt(), 0.0);
                let p_osc = SpectralPoint::critical(n, tau);
                let p_ev = SpectralPoint::new(n, ev);
                let p_osc_m = SpectralPoint::new(n, Complex64::new(0.0, -tau));
                let b_osc = scalar_block(p_osc, grid)?;
                let b_ev = scalar_block(p_ev, grid)?;
                // the conjugate frequency block is the entrywise conjugate
                let b_osc_m = b_osc.map(|z| z.conj());
                let pos = BranchBlocks {
                    n0: b_osc,
                    n1: b_ev.clone(),
                    p0: p_osc,
                    p1: p_ev,
                };
                let neg = BranchBlocks {
                    n0: b_ev,
                    n1: b_osc_m,
                    p0: p_ev,
                    p1: p_osc_m,
                };
                let (pc, dp) = branch_columns(&ct, mv.alpha, &pos, grid, m_label)?;
                let (nc, dn) = branch_columns(&ct, mv.alpha, &neg, grid, m_label)?;
                Ok((pc, nc, dp.min(dn)))
            })
            .collect();
        let mut pos_cols = Vec::with_capacity(count);
        let mut neg_cols = Vec::with_capacity(count);
        let mut min_det = f64::MAX;
        for s in sols {
            let (p, q, d) = s?;
            min_det = min_det.min(d);
            pos_cols.push(p);
            neg_cols.push(q);
        }
        Ok(MatrixPropagator {
            mv: mv.clone(),
            n,
            mu,
            grid: grid.clone(),
            tau_step,
            pos_cols,
            neg_cols,
            min_det_modulus: min_det,
            slices: RwLock::new(HashMap::new()),
        })
    }

    pub fn tau_max(&self) -> f64 {
        (self.pos_cols.len() - 1) as f64 * self.tau_step
    }

    /// Correction tables at radius r: slices[branch * 4 + 2a + b] holds
    /// Im (R_V - R_0)_{ab}(tau_i; 0 -> r), branch 0 positive, 1 negative.
    fn slice(&self, r: f64) -> Result<Arc<[Vec<f64>; 8]>> {
        if let Some(s) = self.slices.read().unwrap().get(&r.to_bits()) {
            return Ok(s.clone());
        }
        let count = self.pos_cols.len();
        let sz = self.grid.len();
        let ct = CouplingTable::new(&self.mv, &self.grid);
        let rows: Vec<Result<[f64; 8]>> = (0..count)
            .into_par_iter()
            .map(|i| {
                if self.mv.is_zero() || i == 0 {
                    // the jump closes up at the branch point
                    return Ok([0.0; 8]);
                }
                let tau = i as f64 * self.tau_step;
                let ev = Complex64::new((2.0 * self.mu + tau * tau).sqrt(), 0.0);
                let mut out = [0.0; 8];
                for branch in 0..2 {
                    let (p0, p1, cols) = if branch == 0 {
                        (
                            SpectralPoint::critical(self.n, tau),
                            SpectralPoint::new(self.n, ev),
                            &self.pos_cols[i],
                        )
                    } else {
                        (
                            SpectralPoint::new(self.n, ev),
                            SpectralPoint::new(self.n, Complex64::new(0.0, -tau)),
                            &self.neg_cols[i],
                        )
                    };
                    // kernel rows N_a(r, r_k) with the block signs folded in
                    let mut k0 = vec![Complex64::new(0.0, 0.0); sz];
                    let mut k1 = vec![Complex64::new(0.0, 0.0); sz];
                    for k in 0..sz {
                        let rk = self.grid.nodes[k];
                        let (e0, e1) = if r < 1e-12 {
                            (r0_kernel(p0, rk)?, r0_kernel(p1, rk)?)
                        } else {
                            (averaged_r0_entry(p0, rk, r)?, averaged_r0_entry(p1, rk, r)?)
                        };
                        k0[k] = e0;
                        k1[k] = -e1;
                    }
                    for (b, col) in cols.iter().enumerate() {
                        let mut corr = [Complex64::new(0.0, 0.0); 2];
                        for k in 0..sz {
                            let mk = self.grid.measure(k);
                            for c in 0..2 {
                                let uc = col[c * sz + k] * mk;
                                let v0c = ct.at(0, c, k);
                                let v1c = ct.at(1, c, k);
                                if v0c != 0.0 {
                                    corr[0] -= k0[k] * v0c * uc;
                                }
                                if v1c != 0.0 {
                                    corr[1] -= k1[k] * v1c * uc;
                                }
                            }
                        }
                        out[branch * 4 + b] = corr[0].im;
                        out[branch * 4 + 2 + b] = corr[1].im;
                    }
                }
                Ok(out)
            })
            .collect();
        let mut slices: [Vec<f64>; 8] = std::array::from_fn(|_| Vec::with_capacity(count));
        for row in rows {
            let row = row?;
            for (k, s) in slices.iter_mut().enumerate() {
                s.push(row[k]);
            }
        }
        let arc = Arc::new(slices);
        self.slices
            .write()
            .unwrap()
            .insert(r.to_bits(), arc.clone());
        Ok(arc)
    }

    /// Budget for the spectral content discarded above the taper, the
    /// worst case over branches and entries; same integration by parts
    /// accounting as the scalar propagator.
    pub fn tail_budget(&self, t: f64, r: f64) -> Result<f64> {
        if self.mv.is_zero() {
            return Ok(0.0);
        }
        let slices = self.slice(r)?;
        let lmax = self.tau_max();
        let step = self.tau_step;
        let i_edge = ((0.9 * lmax / step) as usize).min(slices[0].len() - 2);
        let mut worst = 0.0f64;
        for s in slices.iter() {
            let env = s[i_edge..].iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            let dp = (s[i_edge + 1] - s[i_edge]).abs() / step;
            worst = worst.max((env + 0.5 * dp * lmax) / (2.0 * t));
        }
        Ok(worst)
    }

    /// 2x2 kernel [[K11, K12], [K21, K22]] at (origin, r).
    pub fn entries_with_tol(&self, t: f64, r: f64, tail_tol: f64) -> Result<[[Complex64; 2]; 2]> {
        if t < 1.0 {
            return Err(Error::Precondition(format!(
                "large-time engine needs t >= 1, got {t}"
            )));
        }
        let kap2 = self.mu - (self.n as f64) * (self.n as f64) / 4.0;
        let free = free_propagator_kernel(self.n, t, r)?;
        let phase1 = Complex64::from_polar(1.0, t * kap2);
        let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
        out[0][0] = phase1 * free;
        out[1][1] = phase1.conj() * free.conj();
        if self.mv.is_zero() {
            return Ok(out);
        }
        let budget = self.tail_budget(t, r)?;
        if budget > tail_tol {
            return Err(Error::TailBudget {
                budget,
                tol: tail_tol,
            });
        }
        let slices = self.slice(r)?;
        let lmax = self.tau_max();
        let taper_lo = 0.9 * lmax;
        let step = self.tau_step;
        let phase_mu = Complex64::from_polar(1.0, t * self.mu);
        for a in 0..2 {
            for b in 0..2 {
                let mut val = out[a][b];
                for branch in 0..2 {
                    let s = &slices[branch * 4 + 2 * a + b];
                    let f = |l: f64| -> Complex64 {
                        let w = if l <= taper_lo {
                            1.0
                        } else {
                            smooth_step((lmax - l) / (lmax - taper_lo))
                        };
                        Complex64::new(w * l * PerturbedPropagator::interp(s, step, l), 0.0)
                    };
                    let integral = filon_quadratic(&f, 0.0, lmax, t, 0.0, 1e-11, 30)?;
                    // the negative branch carries e^{-it(mu + tau^2)}; for
                    // real tables that is the conjugate of the positive
                    // phase integral
                    val += if branch == 0 {
                        phase_mu * (-2.0 / PI) * integral
                    } else {
                        phase_mu.conj() * (-2.0 / PI) * integral.conj()
                    };
                }
                out[a][b] = val;
            }
        }
        Ok(out)
    }

    pub fn entries(&self, t: f64, r: f64) -> Result<[[Complex64; 2]; 2]> {
        self.entries_with_tol(t, r, 2e-3)
    }
}
