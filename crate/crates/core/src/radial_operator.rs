//! Radial sector of H^{n+1}: geodesic distance, angular reduction of
//! two-point kernels, Nystrom discretization on clustered Gauss-Legendre
//! grids, weighted operator norms, kernel q-norms, and a Young-type
//! composition inequality evaluated on the grid measure.
//!
//! Operators act on radial profiles f(r); two-point kernels enter through
//! their angular average kbar(r1, r2), so matrices are one dimensional in
//! each slot. Non-radial spherical-harmonic sectors are out of scope.

use crate::error::{Error, Result};
use crate::free_kernel::sphere_area;
use crate::quad::{gauss_legendre, integrate_result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

const NODES_PER_PANEL: usize = 8;

/// Quadrature grid on (0, r_max]: Gauss-Legendre panels with cubic
/// clustering toward the origin, so the near-diagonal kernel structure at
/// small r and the e^{-nr/2} tails are both resolved.
#[derive(Debug, Clone)]
pub struct RadialGrid {
    pub n: usize,
    pub nodes: Vec<f64>,
    pub quad_weights: Vec<f64>,
    /// |S^n| sinh^n(r_i): the volume density against dr.
    pub volume_weights: Vec<f64>,
    panel_edges: Vec<f64>,
    gamma: f64,
}

impl RadialGrid {
    /// Cubic clustering: right for kernels whose difficult structure sits
    /// at the origin. Kernels with a uniform short scale along the whole
    /// diagonal (large real sigma or high frequency) want
    /// `with_clustering(.., 1.0)` and spacing below ~2.5 / scale instead.
    pub fn new(n: usize, r_max: f64, node_hint: usize) -> Self {
        Self::with_clustering(n, r_max, node_hint, 3.0)
    }

    /// Panel edges at r_max (k / panels)^gamma.
    pub fn with_clustering(n: usize, r_max: f64, node_hint: usize, gamma: f64) -> Self {
        assert!(n >= 1 && r_max > 0.0 && gamma >= 1.0);
        let panels = ((node_hint + NODES_PER_PANEL / 2) / NODES_PER_PANEL).max(4);
        let area = sphere_area(n);
        let (gx, gw) = gauss_legendre(NODES_PER_PANEL);
        let mut edges = Vec::with_capacity(panels + 1);
        for k in 0..=panels {
            let t = k as f64 / panels as f64;
            edges.push(r_max * t.powf(gamma));
        }
        let mut nodes = Vec::with_capacity(panels * NODES_PER_PANEL);
        let mut quad_weights = Vec::with_capacity(panels * NODES_PER_PANEL);
        let mut volume_weights = Vec::with_capacity(panels * NODES_PER_PANEL);
        for p in 0..panels {
            let c = 0.5 * (edges[p] + edges[p + 1]);
            let h = 0.5 * (edges[p + 1] - edges[p]);
            for i in 0..NODES_PER_PANEL {
                let r = c + h * gx[i];
                nodes.push(r);
                quad_weights.push(h * gw[i]);
                volume_weights.push(area * r.sinh().powi(n as i32));
            }
        }
        RadialGrid {
            n,
            nodes,
            quad_weights,
            volume_weights,
            panel_edges: edges,
            gamma,
        }
    }

    pub fn default_for(n: usize) -> Self {
        Self::new(n, 25.0, 400)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn r_max(&self) -> f64 {
        *self.panel_edges.last().unwrap()
    }

    /// Discrete measure of node i: quadrature weight times volume density.
    pub fn measure(&self, i: usize) -> f64 {
        self.quad_weights[i] * self.volume_weights[i]
    }

    /// Node count scaled by `node_factor`, r_max by `r_max_factor`, same
    /// clustering; the refinement-stability checks compare norms across
    /// this.
    pub fn refined(&self, node_factor: f64, r_max_factor: f64) -> Self {
        Self::with_clustering(
            self.n,
            self.r_max() * r_max_factor,
            (self.len() as f64 * node_factor).round() as usize,
            self.gamma,
        )
    }

    /// Edges of the panel containing node i, and the node-index range of
    /// that panel.
    pub(crate) fn panel_bounds(&self, i: usize) -> (f64, f64, usize, usize) {
        let p = i / NODES_PER_PANEL;
        (
            self.panel_edges[p],
            self.panel_edges[p + 1],
            p * NODES_PER_PANEL,
            (p + 1) * NODES_PER_PANEL,
        )
    }
}

/// Samples of rho^eta with rho = e^{-r}, the boundary-defining weight.
#[derive(Debug, Clone)]
pub struct WeightProfile {
    pub eta: f64,
    pub values: Vec<f64>,
}

impl WeightProfile {
    pub fn new(grid: &RadialGrid, eta: f64) -> Result<Self> {
        if eta < 0.0 {
            return Err(Error::Precondition(format!(
                "weight exponent eta = {eta} must be >= 0"
            )));
        }
        Ok(WeightProfile {
            eta,
            values: grid.nodes.iter().map(|&r| (-eta * r).exp()).collect(),
        })
    }
}

/// Geodesic distance between points at radii r1, r2 separated by angle
/// theta: cosh d = cosh r1 cosh r2 - sinh r1 sinh r2 cos theta. Evaluated
/// through asinh of the half-angle form, which keeps full precision at
/// small separations where acosh near 1 would lose half the digits.
pub fn geodesic_distance(r1: f64, r2: f64, theta: f64) -> f64 {
    let s = (0.5 * (r1 - r2)).sinh();
    let t = (0.5 * theta).sin();
    let q = s * s + r1.sinh() * r2.sinh() * t * t;
    2.0 * q.sqrt().asinh()
}

/// Average of a distance kernel over the sphere of radius r2 as seen from
/// a point at radius r1:
/// (|S^{n-1}| / |S^n|) int_0^pi k(d(r1, r2, theta)) sin^{n-1} theta dtheta.
/// Theta panels are clustered quadratically toward 0, where the diagonal
/// singularity of resolvent kernels concentrates when r1 = r2.
pub fn angular_average<F>(n: usize, k: &F, r1: f64, r2: f64) -> Result<Complex64>
where
    F: Fn(f64) -> Result<Complex64>,
{
    if n == 0 {
        return Err(Error::Precondition("angular average needs n >= 1".into()));
    }
    if r1.min(r2) == 0.0 {
        // concentric degeneracy: every point of the sphere is equidistant
        return k(r1.max(r2));
    }
    let front = sphere_area(n - 1) / sphere_area(n);
    let pw = n as i32 - 1;
    let integrand =
        |theta: f64| -> Result<Complex64> { Ok(k(geodesic_distance(r1, r2, theta))? * theta.sin().powi(pw)) };
    let panels = 10;
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..panels {
        let a = PI * (j as f64 / panels as f64).powi(2);
        let b = PI * ((j + 1) as f64 / panels as f64).powi(2);
        acc += integrate_result(&integrand, a, b, 1e-12, 44)?;
    }
    Ok(front * acc)
}

/// Angular average of the H^3 free kernel in closed form:
/// kbar = e^{-sigma (hi - lo)} (1 - e^{-2 sigma lo}) /
///        (8 pi sigma sinh r1 sinh r2), lo/hi = min/max(r1, r2),
/// with the removable sigma -> 0 limit taken by series.
pub fn averaged_free_kernel_h3(sigma: Complex64, r1: f64, r2: f64) -> Complex64 {
    let lo = r1.min(r2);
    let hi = r1.max(r2);
    if lo <= 0.0 {
        return (-sigma * hi).exp() / (4.0 * PI * hi.sinh());
    }
    let z = -2.0 * sigma * lo;
    let factor = if z.norm() < 1e-6 {
        // (1 - e^z)/sigma = 2 lo (1 + z/2 + z^2/6 + ...)
        2.0 * lo * (1.0 + z / 2.0 + z * z / 6.0)
    } else {
        (1.0 - z.exp()) / sigma
    };
    (-sigma * (hi - lo)).exp() * factor / (8.0 * PI * r1.sinh() * r2.sinh())
}

/// Nystrom matrix of an integral operator on radial functions. `matrix`
/// stores kernel values kbar(r_i, r_j); the diagonal entries carry the
/// product-integration correction for the panel containing r_i. Folding
/// conjugates by the square root of the discrete measure, the L^2(dvol)
/// representation in which symmetric kernels give symmetric matrices.
#[derive(Debug, Clone)]
pub struct RadialKernelOp {
    pub grid: RadialGrid,
    pub matrix: DMatrix<Complex64>,
    pub weights_folded: bool,
}

impl RadialKernelOp {
    /// (Kf)_i = sum_j M_ij f_j mu_j on the raw representation.
    pub fn apply(&self, f: &[Complex64]) -> Vec<Complex64> {
        assert!(!self.weights_folded, "apply expects the raw representation");
        assert_eq!(f.len(), self.grid.len());
        let m = self.grid.len();
        (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| self.matrix[(i, j)] * f[j] * self.grid.measure(j))
                    .sum()
            })
            .collect()
    }

    /// D^{1/2} M D^{1/2} with D the diagonal of discrete measures.
    pub fn folded(&self) -> RadialKernelOp {
        assert!(!self.weights_folded);
        let m = self.grid.len();
        let mut a = self.matrix.clone();
        for i in 0..m {
            let si = self.grid.measure(i).sqrt();
            for j in 0..m {
                a[(i, j)] *= si * self.grid.measure(j).sqrt();
            }
        }
        RadialKernelOp {
            grid: self.grid.clone(),
            matrix: a,
            weights_folded: true,
        }
    }
}

/// Discretize the angular-averaged kernel kbar(r1, r2) on the grid, acting
/// as (Kf)_i = sum_j M_ij f_j w_j vol_j. Each diagonal cell is
/// re-integrated adaptively, split at r_i where averaged resolvent kernels
/// have a derivative kink, and the difference from the naive in-panel sum
/// is absorbed into M_ii. A correction above 10% of the row norm means the
/// panel cannot represent the kernel at all and is reported as a coarse
/// grid rather than silently patched.
pub fn discretize<F>(k: &F, grid: &RadialGrid) -> Result<RadialKernelOp>
where
    F: Fn(f64, f64) -> Result<Complex64> + Sync,
{
    let m = grid.len();
    let area = sphere_area(grid.n);
    let npow = grid.n as i32;
    let rows: Vec<Result<Vec<Complex64>>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let ri = grid.nodes[i];
            let mut row = Vec::with_capacity(m);
            for j in 0..m {
                row.push(k(ri, grid.nodes[j])?);
            }
            let (a, b, j0, j1) = grid.panel_bounds(i);
            let cell = |r: f64| -> Result<Complex64> { Ok(k(ri, r)? * area * r.sinh().powi(npow)) };
            let exact = integrate_result(&cell, a, ri, 1e-11, 40)?
                + integrate_result(&cell, ri, b, 1e-11, 40)?;
            let naive: Complex64 = (j0..j1).map(|j| row[j] * grid.measure(j)).sum();
            let corr = exact - naive;
            row[i] += corr / grid.measure(i);
            let row_norm: f64 = (0..m).map(|j| row[j].norm() * grid.measure(j)).sum();
            if corr.norm() > 0.1 * row_norm {
                return Err(Error::GridTooCoarse(format!(
                    "diagonal correction {:.3e} exceeds 10% of row norm {:.3e} at r = {ri:.4}",
                    corr.norm(),
                    row_norm
                )));
            }
            Ok(row)
        })
        .collect();
    let mut matrix = DMatrix::zeros(m, m);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row?.into_iter().enumerate() {
            matrix[(i, j)] = v;
        }
    }
    Ok(RadialKernelOp {
        grid: grid.clone(),
        matrix,
        weights_folded: false,
    })
}

/// Largest singular value of rho^eta K rho^eta as an operator on L^2(dvol).
pub fn weighted_norm(op: &RadialKernelOp, w: &WeightProfile) -> f64 {
    assert_eq!(op.grid.len(), w.values.len(), "weight and operator grids differ");
    assert!(!op.weights_folded);
    let m = op.grid.len();
    let mut a = op.matrix.clone();
    for i in 0..m {
        let li = w.values[i] * op.grid.measure(i).sqrt();
        for j in 0..m {
            a[(i, j)] *= li * w.values[j] * op.grid.measure(j).sqrt();
        }
    }
    spectral_norm(&a)
}

/// Power iteration on A^H A. Only the top singular value is ever consumed,
/// and the norm checks tolerate ~1e-8 relative error, so a full SVD is not
/// worth its cost on the production grid sizes.
pub(crate) fn spectral_norm(a: &DMatrix<Complex64>) -> f64 {
    let m = a.ncols();
    if m == 0 {
        return 0.0;
    }
    let ah = a.adjoint();
    let mut v = DVector::from_fn(m, |i, _| {
        Complex64::new(1.0 + (0.37 + 1.61 * i as f64).sin(), (0.77 * i as f64).cos())
    });
    let nv = v.norm();
    v = v.unscale(nv);
    let mut est = 0.0;
    for _ in 0..1200 {
        let u = a * &v;
        let s = u.norm();
        if s == 0.0 {
            return 0.0;
        }
        let t = &ah * u;
        let nt = t.norm();
        v = t.unscale(nt);
        if (s - est).abs() <= 1e-11 * s {
            return s;
        }
        est = s;
    }
    est
}

/// Weighted L^q norm of a kernel row over the grid:
/// ( int |k(r)|^q rho^{alpha q} dvol )^{1/q}; q = inf gives the weighted
/// sup. The result is a truncated-domain quantity by construction; it is
/// recomputed with doubled node count and must stabilize to 2%, otherwise
/// the norm is reported as divergent (the full critical-line kernel at
/// q = inf, for instance, whose sup grows as nodes approach the origin).
/// The weight threshold alpha > max(0, n(1/q - 1/2)) governs convergence
/// in r_max, which the caller owns through the grid.
pub fn kernel_q_norm<F>(grid: &RadialGrid, k: &F, q: f64, alpha: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<Complex64>,
{
    if !(q >= 1.0) {
        return Err(Error::Precondition(format!("q = {q} must be >= 1")));
    }
    let eval = |g: &RadialGrid| -> Result<f64> {
        if q.is_infinite() {
            let mut sup: f64 = 0.0;
            for &r in &g.nodes {
                sup = sup.max(k(r)?.norm() * (-alpha * r).exp());
            }
            Ok(sup)
        } else {
            let mut acc = 0.0;
            for (i, &r) in g.nodes.iter().enumerate() {
                acc += (k(r)?.norm() * (-alpha * r).exp()).powf(q) * g.measure(i);
            }
            Ok(acc.powf(1.0 / q))
        }
    };
    let coarse = eval(grid)?;
    let fine = eval(&grid.refined(2.0, 1.0))?;
    if (fine - coarse).abs() > 0.02 * fine.abs().max(1e-300) {
        return Err(Error::Divergence(format!(
            "q-norm moved {coarse:.6e} -> {fine:.6e} under node doubling (q = {q}, alpha = {alpha})"
        )));
    }
    Ok(fine)
}

fn lq(vals: impl Iterator<Item = (f64, f64)>, q: f64) -> f64 {
    if q.is_infinite() {
        vals.fold(0.0, |m, (v, _)| m.max(v))
    } else {
        vals.map(|(v, mu)| v.powf(q) * mu).sum::<f64>().powf(1.0 / q)
    }
}

/// Both sides of the Young-type composition bound on the grid measure:
/// lhs = sup_{z'} || int K1(., w) K2(w, z') dmu(w) ||_p with
/// 1/p = 1/q1 + 1/q2 - 1, and rhs = A_{q1}(K1) B_{q2}(K2) where A, B are
/// the larger of the uniform row and column q-norms. The inequality
/// lhs <= rhs holds on any measure space, so on the grid it must hold to
/// roundoff; callers assert lhs <= rhs (1 + tol).
pub fn young_compose_check(
    k1: &RadialKernelOp,
    k2: &RadialKernelOp,
    q1: f64,
    q2: f64,
) -> Result<(f64, f64)> {
    assert!(!k1.weights_folded && !k2.weights_folded);
    assert_eq!(k1.grid.len(), k2.grid.len(), "operands on different grids");
    let inv_p = 1.0 / q1 + 1.0 / q2 - 1.0;
    if !(q1 >= 1.0) || !(q2 >= 1.0) || !(-1e-12..=1.0 + 1e-12).contains(&inv_p) {
        let p = if inv_p.abs() > 1e-12 { 1.0 / inv_p } else { f64::INFINITY };
        return Err(Error::ExponentMismatch { q1, q2, p });
    }
    let p = if inv_p <= 1e-12 { f64::INFINITY } else { 1.0 / inv_p };
    let g = &k1.grid;
    let m = g.len();
    // T = K1 D K2 via measure-scaled rows of K2
    let mut dk2 = k2.matrix.clone();
    for w in 0..m {
        let mu = g.measure(w);
        for zp in 0..m {
            dk2[(w, zp)] *= mu;
        }
    }
    let t = &k1.matrix * &dk2;
    let mut lhs: f64 = 0.0;
    for zp in 0..m {
        lhs = lhs.max(lq((0..m).map(|i| (t[(i, zp)].norm(), g.measure(i))), p));
    }
    let uniform = |k: &RadialKernelOp, q: f64| -> f64 {
        let mut best: f64 = 0.0;
        for z in 0..m {
            let row = lq((0..m).map(|w| (k.matrix[(z, w)].norm(), g.measure(w))), q);
            let col = lq((0..m).map(|w| (k.matrix[(w, z)].norm(), g.measure(w))), q);
            best = best.max(row).max(col);
        }
        best
    };
    Ok((lhs, uniform(k1, q1) * uniform(k2, q2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::free_kernel::{im_r0_critical, r0_kernel, SpectralPoint};
    use crate::quad::integrate_panels;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn grid_volume_matches_closed_forms() {
        // int_0^R sinh^n r dr for n = 1, 2, 3
        let cases: [(usize, f64, fn(f64) -> f64); 3] = [
            (1, 18.0, |r| r.cosh() - 1.0),
            (2, 25.0, |r| 0.5 * (r.sinh() * r.cosh() - r)),
            (3, 12.0, |r| r.cosh().powi(3) / 3.0 - r.cosh() + 2.0 / 3.0),
        ];
        for (n, rmax, exact) in cases {
            let g = RadialGrid::new(n, rmax, 400);
            let total: f64 = (0..g.len()).map(|i| g.measure(i)).sum();
            let want = sphere_area(n) * exact(rmax);
            assert!((total - want).abs() < 1e-8 * want, "n={n}: {total} vs {want}");
            assert!(g.nodes.windows(2).all(|p| p[0] < p[1]));
            assert!(g.nodes[0] > 0.0 && g.r_max() == rmax);
        }
    }

    #[test]
    fn geodesic_distance_reference_points() {
        assert!((geodesic_distance(2.0, 0.7, 0.0) - 1.3).abs() < 1e-14);
        assert!((geodesic_distance(2.0, 0.7, PI) - 2.7).abs() < 1e-13);
        let d = geodesic_distance(1.0, 1.0, PI / 2.0);
        let want = (1.0f64.cosh().powi(2)).acosh();
        assert!((d - want).abs() < 1e-13, "{d} vs {want}");
        assert_eq!(
            geodesic_distance(0.3, 1.9, 2.0),
            geodesic_distance(1.9, 0.3, 2.0)
        );
        // small-separation precision: d ~ theta sinh r, no acosh-near-1 loss
        let eps = geodesic_distance(5.0, 5.0, 1e-9);
        assert!((eps - 1e-9 * 5.0f64.sinh()).abs() < 1e-22);
    }

    #[test]
    fn angular_average_normalization_and_degeneracy() {
        let one = |_d: f64| Ok(Complex64::new(1.0, 0.0));
        for n in 1..=4 {
            let v = angular_average(n, &one, 0.9, 1.7).unwrap();
            assert!((v.re - 1.0).abs() < 1e-12, "n={n}: {v}");
            assert!(v.im.abs() < 1e-14);
        }
        let k = |d: f64| Ok(Complex64::new((-0.3 * d).exp() * d.cos(), 0.1 * d));
        let v = angular_average(3, &k, 0.0, 1.3).unwrap();
        assert!((v - k(1.3).unwrap()).norm() < 1e-14);
    }

    #[test]
    fn angular_average_h3_matches_closed_form_and_oracle() {
        let sigma = Complex64::new(1.0, 0.0);
        let free = |d: f64| r0_kernel(SpectralPoint::new(2, sigma), d);
        for (r1, r2) in [(1.0, 1.0), (1.3, 0.4), (2.5, 2.5)] {
            let v = angular_average(2, &free, r1, r2).unwrap();
            let want = averaged_free_kernel_h3(sigma, r1, r2);
            assert!(
                (v - want).norm() < 1e-9 * want.norm(),
                "({r1},{r2}): {v} vs {want}"
            );
        }
        // oversampled direct quadrature, away from the diagonal
        let (r1, r2) = (1.3, 0.4);
        let oracle = integrate_panels(
            &|th: f64| {
                let d = geodesic_distance(r1, r2, th);
                r0_kernel(SpectralPoint::new(2, sigma), d).unwrap() * th.sin()
            },
            0.0,
            PI,
            400,
            16,
        ) * (sphere_area(1) / sphere_area(2));
        let v = angular_average(2, &free, r1, r2).unwrap();
        assert!((v - oracle).norm() < 1e-8 * oracle.norm());
    }

    #[test]
    fn discretize_zero_kernel() {
        let g = RadialGrid::new(2, 8.0, 64);
        let z = |_: f64, _: f64| Ok(Complex64::new(0.0, 0.0));
        let op = discretize(&z, &g).unwrap();
        assert!(op.matrix.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn discretized_resolvent_inverts_shifted_laplacian() {
        // s = 2, n = 2: s(n-s) = 0, so R_0(2) applied to -lap(phi) with
        // lap = d^2/dr^2 + 2 coth r d/dr must return phi
        let g = RadialGrid::new(2, 12.0, 240);
        let sigma = Complex64::new(1.0, 0.0);
        let k = |r1: f64, r2: f64| Ok(averaged_free_kernel_h3(sigma, r1, r2));
        let op = discretize(&k, &g).unwrap();
        let phi = |r: f64| (-(r - 4.0) * (r - 4.0)).exp();
        let rhs: Vec<Complex64> = g
            .nodes
            .iter()
            .map(|&r| {
                let p = phi(r);
                let dp = -2.0 * (r - 4.0) * p;
                let ddp = (4.0 * (r - 4.0) * (r - 4.0) - 2.0) * p;
                Complex64::new(-(ddp + 2.0 / r.tanh() * dp), 0.0)
            })
            .collect();
        let back = op.apply(&rhs);
        let err = g
            .nodes
            .iter()
            .enumerate()
            .map(|(i, &r)| (back[i].re - phi(r)).abs().max(back[i].im.abs()))
            .fold(0.0f64, f64::max);
        assert!(err < 1e-4, "max reconstruction error {err}");
    }

    #[test]
    fn folded_matrix_symmetry_for_real_sigma() {
        let g = RadialGrid::new(2, 10.0, 80);
        let k = |r1: f64, r2: f64| Ok(averaged_free_kernel_h3(Complex64::new(0.7, 0.0), r1, r2));
        let a = discretize(&k, &g).unwrap().folded();
        let scale = a.matrix.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        let m = g.len();
        for i in 0..m {
            for j in 0..i {
                assert!((a.matrix[(i, j)] - a.matrix[(j, i)]).norm() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn narrow_kernel_on_coarse_grid_is_rejected() {
        let g = RadialGrid::new(2, 10.0, 48);
        let k = |r1: f64, r2: f64| {
            let d = (r1 - r2) / 0.02;
            Ok(Complex64::new((-d * d).exp(), 0.0))
        };
        assert!(matches!(discretize(&k, &g), Err(Error::GridTooCoarse(_))));
    }

    #[test]
    fn weighted_norm_zero_operator() {
        let g = RadialGrid::new(2, 8.0, 48);
        let z = |_: f64, _: f64| Ok(Complex64::new(0.0, 0.0));
        let op = discretize(&z, &g).unwrap();
        let w = WeightProfile::new(&g, 0.5).unwrap();
        assert_eq!(weighted_norm(&op, &w), 0.0);
    }

    #[test]
    fn real_sigma_norm_decays_at_spectral_distance_rate() {
        // || R_0(1 + sigma) || is 1/sigma^2, the distance from s(n - s) to
        // the continuous spectrum [1, inf); uniform panels because the
        // e^{-sigma |r1 - r2|} kink runs along the whole diagonal
        let g = RadialGrid::with_clustering(2, 10.0, 480, 1.0);
        let w = WeightProfile::new(&g, 0.0).unwrap();
        let mut norms = Vec::new();
        for s in [4.0, 6.0, 9.0] {
            let k =
                move |r1: f64, r2: f64| Ok(averaged_free_kernel_h3(Complex64::new(s, 0.0), r1, r2));
            let v = weighted_norm(&discretize(&k, &g).unwrap(), &w);
            assert!(
                v * s * s > 0.9 && v * s * s < 1.01,
                "sigma = {s}: norm {v} vs 1/sigma^2 {}",
                1.0 / (s * s)
            );
            norms.push(v);
        }
        let slope = (norms[2] / norms[0]).ln() / (9.0f64 / 4.0).ln();
        assert!(slope <= -1.9, "fit exponent {slope}, norms {norms:?}");
    }

    #[test]
    fn critical_line_weighted_norm_decays_like_inverse_lambda() {
        let g = RadialGrid::with_clustering(2, 12.0, 560, 1.0);
        let w = WeightProfile::new(&g, 0.5).unwrap();
        let mut prods = Vec::new();
        for lam in [1.0, 5.0, 15.0] {
            let sig = Complex64::new(0.0, lam);
            let k = move |r1: f64, r2: f64| Ok(averaged_free_kernel_h3(sig, r1, r2));
            prods.push(weighted_norm(&discretize(&k, &g).unwrap(), &w) * lam);
        }
        let lo = prods.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = prods.iter().cloned().fold(0.0f64, f64::max);
        assert!(hi / lo < 2.5, "lambda * norm spread too wide: {prods:?}");
        // the high-frequency end is refinement-stable to 1%
        let g2 = g.refined(2.0, 1.25);
        let w2 = WeightProfile::new(&g2, 0.5).unwrap();
        let sig = Complex64::new(0.0, 15.0);
        let k = move |r1: f64, r2: f64| Ok(averaged_free_kernel_h3(sig, r1, r2));
        let p2 = weighted_norm(&discretize(&k, &g2).unwrap(), &w2) * 15.0;
        assert!(
            (p2 - prods[2]).abs() < 0.01 * p2,
            "refinement moved {} -> {p2}",
            prods[2]
        );
    }

    #[test]
    fn q_norm_sup_distinguishes_im_kernel_from_full_kernel() {
        let g = RadialGrid::new(2, 15.0, 200);
        let lam = 5.0;
        let imk = move |r: f64| im_r0_critical(2, lam, r).map(|v| Complex64::new(v, 0.0));
        let sup = kernel_q_norm(&g, &imk, f64::INFINITY, 1.0).unwrap();
        // |sin(lam r)| e^{-r} / (4 pi sinh r) peaks at lam/(4 pi) toward r = 0
        assert!(sup <= lam / (4.0 * PI) * 1.001 && sup > 0.5 * lam / (4.0 * PI), "{sup}");
        let full = move |r: f64| r0_kernel(SpectralPoint::critical(2, lam), r);
        assert!(matches!(
            kernel_q_norm(&g, &full, f64::INFINITY, 1.0),
            Err(Error::Divergence(_))
        ));
    }

    #[test]
    fn q1_norm_stays_within_the_lambda_budget() {
        let g = RadialGrid::new(2, 15.0, 200);
        let mut scaled = Vec::new();
        for lam in [5.0, 10.0, 20.0] {
            let k = move |r: f64| r0_kernel(SpectralPoint::critical(2, lam), r);
            let v = kernel_q_norm(&g, &k, 1.0, 1.0).unwrap();
            scaled.push(v / lam); // budget <lambda>^{n-1} = lambda
        }
        assert!(scaled.iter().all(|&s| s.is_finite() && s > 0.0));
        for &s in &scaled[1..] {
            assert!(s <= scaled[0] * 1.01, "{scaled:?}");
        }
    }

    fn random_op(g: &RadialGrid, rng: &mut StdRng, complex: bool) -> RadialKernelOp {
        let m = g.len();
        let mut mat = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let re: f64 = rng.gen();
                let im = if complex { rng.gen::<f64>() - 0.5 } else { 0.0 };
                mat[(i, j)] = Complex64::new(re, im);
            }
        }
        RadialKernelOp {
            grid: g.clone(),
            matrix: mat,
            weights_folded: false,
        }
    }

    #[test]
    fn young_inequality_on_random_kernels() {
        let g = RadialGrid::new(2, 8.0, 40);
        let mut rng = StdRng::seed_from_u64(42);
        for (q1, q2) in [(1.0, 1.0), (4.0 / 3.0, 4.0 / 3.0), (2.0, 1.0)] {
            for trial in 0..100 {
                let k1 = random_op(&g, &mut rng, trial % 2 == 1);
                let k2 = random_op(&g, &mut rng, trial % 3 == 1);
                let (lhs, rhs) = young_compose_check(&k1, &k2, q1, q2).unwrap();
                assert!(
                    lhs <= rhs * (1.0 + 1e-10),
                    "q=({q1},{q2}) trial {trial}: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn young_degenerate_identity_composition() {
        // K2 = discrete delta: the composition reproduces K1, so lhs equals
        // the largest column p-norm of K1 exactly
        let g = RadialGrid::new(2, 8.0, 40);
        let mut rng = StdRng::seed_from_u64(7);
        let k1 = random_op(&g, &mut rng, true);
        let m = g.len();
        let mut eye = DMatrix::zeros(m, m);
        for i in 0..m {
            eye[(i, i)] = Complex64::new(1.0 / g.measure(i), 0.0);
        }
        let k2 = RadialKernelOp {
            grid: g.clone(),
            matrix: eye,
            weights_folded: false,
        };
        let (lhs, rhs) = young_compose_check(&k1, &k2, 4.0 / 3.0, 4.0 / 3.0).unwrap();
        let mut col_norm: f64 = 0.0;
        for j in 0..m {
            let v: f64 = (0..m)
                .map(|i| k1.matrix[(i, j)].norm_sqr() * g.measure(i))
                .sum();
            col_norm = col_norm.max(v.sqrt());
        }
        assert!((lhs - col_norm).abs() <= 1e-10 * col_norm, "{lhs} vs {col_norm}");
        assert!(lhs <= rhs * (1.0 + 1e-10));
    }

    #[test]
    fn young_on_the_weighted_free_kernel() {
        let g = RadialGrid::new(2, 15.0, 160);
        let sig = Complex64::new(0.0, 5.0);
        let k = move |r1: f64, r2: f64| {
            Ok(averaged_free_kernel_h3(sig, r1, r2) * (-0.5 * (r1 + r2)).exp())
        };
        let op = discretize(&k, &g).unwrap();
        let (lhs, rhs) = young_compose_check(&op, &op, 4.0 / 3.0, 4.0 / 3.0).unwrap();
        assert!(lhs <= rhs * (1.0 + 1e-10), "{lhs} vs {rhs}");
        assert!(lhs > 0.0 && rhs.is_finite());
    }

    #[test]
    fn young_rejects_incompatible_exponents() {
        let g = RadialGrid::new(2, 8.0, 40);
        let mut rng = StdRng::seed_from_u64(3);
        let k1 = random_op(&g, &mut rng, false);
        let k2 = random_op(&g, &mut rng, false);
        assert!(matches!(
            young_compose_check(&k1, &k2, 3.0, 3.0),
            Err(Error::ExponentMismatch { .. })
        ));
    }

    #[test]
    fn weighted_norm_monotone_in_eta() {
        // diag contractions cannot grow the norm
        let g = RadialGrid::new(2, 8.0, 40);
        let mut rng = StdRng::seed_from_u64(11);
        let op = random_op(&g, &mut rng, true);
        let mut last = f64::INFINITY;
        for eta in [0.0, 0.25, 0.7, 1.5] {
            let w = WeightProfile::new(&g, eta).unwrap();
            let v = weighted_norm(&op, &w);
            assert!(v <= last * (1.0 + 1e-9), "eta={eta}: {v} > {last}");
            last = v;
        }
    }

    #[test]
    fn weight_profile_checks_sign_and_monotonicity() {
        let g = RadialGrid::new(2, 8.0, 40);
        assert!(WeightProfile::new(&g, -0.1).is_err());
        let w = WeightProfile::new(&g, 0.8).unwrap();
        assert!(w.values.windows(2).all(|p| p[1] < p[0]));
        assert!(w.values.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig { cases: 40, ..Default::default() })]
        #[test]
        fn young_holds_for_arbitrary_kernels(seed in 0u64..(1u64 << 48), triple in 0usize..3) {
            let g = RadialGrid::new(2, 6.0, 32);
            let mut rng = StdRng::seed_from_u64(seed);
            let k1 = random_op(&g, &mut rng, true);
            let k2 = random_op(&g, &mut rng, true);
            let (q1, q2) = [(1.0, 1.0), (4.0 / 3.0, 4.0 / 3.0), (2.0, 1.0)][triple];
            let (lhs, rhs) = young_compose_check(&k1, &k2, q1, q2).unwrap();
            proptest::prop_assert!(lhs <= rhs * (1.0 + 1e-10), "{} vs {}", lhs, rhs);
        }
    }
}
