//! Resolvent `(e^{i theta} mu^2 - A_T)^{-1}` of the constant-coefficient model,
//! frequency by frequency: the free part restricted to the half-line plus a
//! separable singular Green correction.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::green::{op_plus_matrix, tr_plus, twist, ExpTerm, KernelKind, KernelValue, NormalSymbol, OpPlusOptions};
use crate::halfline::{HalfLineBasis, HalfLineFunction};
use crate::linalg::{c, lstsq, power_norm, CMat, CVec, C64};
use crate::model::{boundary_symbol_solve, reduced_min_sv, spectral_sigma, BcKind, LaplaceTypeModel, ProjectionBC, Spectral};
use crate::symbol::ParamPoint;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Quadrature for `int f(xi') dxi' / (2 pi)^{n-1}`.
#[derive(Debug, Clone, Serialize)]
pub struct FrequencyGrid {
    pub dim: usize,
    /// Largest `|xi'|` among the nodes.
    pub cutoff: f64,
    /// Spacing for uniform grids; `0` for the compactified rule.
    pub spacing: f64,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl FrequencyGrid {
    /// The single point `xi' = ()` for `n = 1`.
    pub fn trivial() -> Self {
        Self { dim: 0, cutoff: 0.0, spacing: 0.0, points: vec![vec![]], weights: vec![1.0] }
    }

    /// Tensor grid `h k`, `|k| <= cutoff / h`, trapezoid weights.
    pub fn uniform(dim: usize, cutoff: f64, spacing: f64) -> Result<Self> {
        if dim == 0 {
            return Ok(Self::trivial());
        }
        if !(cutoff > 0.0 && spacing > 0.0) {
            return Err(Error::InvalidArgument("cutoff and spacing must be positive".into()));
        }
        let k = (cutoff / spacing).floor() as i64;
        let axis: Vec<f64> = (-k..=k).map(|j| j as f64 * spacing).collect();
        let mut points: Vec<Vec<f64>> = vec![vec![]];
        for _ in 0..dim {
            points = points.into_iter().flat_map(|p| axis.iter().map(move |&a| {
                let mut q = p.clone();
                q.push(a);
                q
            })).collect();
        }
        let w = (spacing / (2.0 * PI)).powi(dim as i32);
        Ok(Self { dim, cutoff: k as f64 * spacing, spacing, weights: vec![w; points.len()], points })
    }

    /// `xi' = scale tan(phi)`, Gauss-Legendre in `phi` on each half of
    /// `(-pi/2, pi/2)` so that a kink at `xi' = 0` costs nothing; covers all of `R`.
    pub fn compactified(scale: f64, n: usize) -> Self {
        let (x, w) = gauss_legendre(n);
        let mut points = Vec::with_capacity(2 * n);
        let mut weights = Vec::with_capacity(2 * n);
        for sign in [-1.0, 1.0] {
            for (xi, wi) in x.iter().zip(&w) {
                let phi = 0.25 * PI * (xi + 1.0);
                let sec = 1.0 / phi.cos();
                points.push(vec![sign * scale * phi.tan()]);
                weights.push(wi * 0.25 * PI * scale * sec * sec / (2.0 * PI));
            }
        }
        let cutoff = points.iter().map(|p| p[0].abs()).fold(0.0, f64::max);
        Self { dim: 1, cutoff, spacing: 0.0, points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Kernels at one boundary frequency.
#[derive(Debug, Clone)]
pub struct FrequencyRecord {
    pub xi: Vec<f64>,
    pub sigma: Vec<C64>,
    pub free: KernelValue,
    pub correction: KernelValue,
}

/// `(e^{i theta} mu^2 - A_T)^{-1} = B_+ + G` sampled on a frequency grid.
#[derive(Debug, Clone)]
pub struct ResolventDecomposition {
    pub mu: f64,
    pub theta: f64,
    pub bc: BcKind,
    pub records: Vec<FrequencyRecord>,
}

fn projectors(sp: &Spectral) -> Vec<CMat> {
    (0..sp.sigmas.len())
        .map(|k| {
            let u = sp.vectors.column(k);
            &u * u.adjoint()
        })
        .collect()
}

fn ensure_decay(sp: &Spectral) -> Result<()> {
    let re = sp.min_re_sigma();
    if re > 0.0 { Ok(()) } else { Err(Error::NoDecayingMode(re)) }
}

/// `r(t, s) = -e^{-sigma |t - s|} / (2 sigma)` by spectral calculus.
pub fn free_resolvent_kernel(model: &LaplaceTypeModel, pt: &ParamPoint) -> Result<KernelValue> {
    let sp = spectral_sigma(model, &pt.xi_prime, pt.mu)?;
    ensure_decay(&sp)?;
    let proj = projectors(&sp);
    let sig = sp.sigmas.clone();
    let l = model.l;
    Ok(KernelValue::function(KernelKind::Green, l, l, move |t, s| {
        let mut out = CMat::zeros(l, l);
        for (p, s_k) in proj.iter().zip(&sig) {
            out += p * (-(-s_k * (t - s).abs()).exp() / (2.0 * s_k));
        }
        out
    }))
}

/// Separable correction `e^{-sigma t} M e^{-sigma s}` making the boundary rows of
/// the full kernel vanish.
pub fn green_correction_kernel(model: &LaplaceTypeModel, bc: &ProjectionBC, pt: &ParamPoint) -> Result<KernelValue> {
    let sp = spectral_sigma(model, &pt.xi_prime, pt.mu)?;
    ensure_decay(&sp)?;
    let rows = bc.rows(&pt.xi_prime);
    let sigma = sp.sigma();
    let l = model.l;
    let (mut rm, mut rhs) = (CMat::zeros(rows[0].nrows(), l), CMat::zeros(rows[0].nrows(), l));
    let (mut neg, mut pos) = (CMat::identity(l, l), CMat::identity(l, l));
    for r in &rows {
        rm += r * &neg;
        rhs += r * &pos;
        neg = -&neg * &sigma;
        pos = &pos * &sigma;
    }
    let rhs = rhs * sp.apply(|s| c(0.5) / s);
    let min_sv = reduced_min_sv(bc, &pt.xi_prime, &rm);
    if min_sv < 1e-12 {
        return Err(Error::NotElliptic { xi: pt.xi_prime.clone(), mu: pt.mu, min_sv });
    }
    let m = lstsq(&rm, &rhs);
    let proj = projectors(&sp);
    let mut terms = Vec::new();
    for (pk, sk) in proj.iter().zip(&sp.sigmas) {
        for (pm, sm) in proj.iter().zip(&sp.sigmas) {
            let coeff = pk * &m * pm;
            if coeff.iter().any(|z| z.norm() > 0.0) {
                terms.push(ExpTerm::green(coeff, 0, 0, *sk, *sm));
            }
        }
    }
    KernelValue::exp_poly(KernelKind::Green, l, l, terms)
}

pub fn decompose(model: &LaplaceTypeModel, bc: &ProjectionBC, mu: f64, grid: &FrequencyGrid) -> Result<ResolventDecomposition> {
    let records = grid
        .points
        .par_iter()
        .map(|xi| {
            let pt = ParamPoint::at_origin(xi.clone(), mu)?;
            let sp = spectral_sigma(model, xi, mu)?;
            Ok(FrequencyRecord {
                xi: xi.clone(),
                sigma: sp.sigmas,
                free: free_resolvent_kernel(model, &pt)?,
                correction: green_correction_kernel(model, bc, &pt)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResolventDecomposition { mu, theta: model.theta, bc: bc.kind, records })
}

/// Discretized `R(xi', mu)` on `basis`, component-major.
pub fn resolvent_matrix(model: &LaplaceTypeModel, bc: &ProjectionBC, pt: &ParamPoint, basis: &HalfLineBasis) -> Result<CMat> {
    let sp = spectral_sigma(model, &pt.xi_prime, pt.mu)?;
    ensure_decay(&sp)?;
    let n = basis.n_modes;
    let l = model.l;
    let mut out = green_correction_kernel(model, bc, pt)?.discretize(basis)?;
    for (p, &s) in projectors(&sp).iter().zip(&sp.sigmas) {
        let s2 = s * s;
        let t = op_plus_matrix(&NormalSymbol::bounded(move |x| -c(1.0) / (c(x * x) + s2)), basis, OpPlusOptions::default())?;
        out += crate::linalg::kron(p, &t);
    }
    debug_assert_eq!(out.shape(), (n * l, n * l));
    Ok(out)
}

/// `x'`-Fourier samples of a function on the half-space.
#[derive(Debug, Clone)]
pub struct HalfSpaceFunction {
    pub grid: FrequencyGrid,
    pub values: Vec<HalfLineFunction>,
}

impl HalfSpaceFunction {
    /// `phi_hat(xi') g(t)`.
    pub fn separable(grid: &FrequencyGrid, basis: &HalfLineBasis, phi_hat: impl Fn(&[f64]) -> C64, g: impl Fn(f64) -> C64 + Sync) -> Self {
        let base = HalfLineFunction::scalar_fn(basis, g);
        let values = grid
            .points
            .iter()
            .map(|xi| HalfLineFunction { basis: basis.clone(), coeffs: &base.coeffs * phi_hat(xi) })
            .collect();
        Self { grid: grid.clone(), values }
    }

    /// Inverse Fourier transform in `x'` at `(x', t)`.
    pub fn eval(&self, x_prime: &[f64], t: f64) -> CVec {
        let mut out = CVec::zeros(self.values[0].dim());
        for ((xi, w), v) in self.grid.points.iter().zip(&self.grid.weights).zip(&self.values) {
            let phase: f64 = xi.iter().zip(x_prime).map(|(a, b)| a * b).sum();
            out += v.eval(t) * (C64::from_polar(*w, phase));
        }
        out
    }
}

/// Result of [`resolvent_apply`]; `max_residual` is the largest per-frequency ODE residual.
#[derive(Debug, Clone)]
pub struct ResolventApply {
    pub u: HalfSpaceFunction,
    pub max_residual: f64,
}

/// `u = (e^{i theta} mu^2 - A_T)^{-1} f`, frequency by frequency.
pub fn resolvent_apply(model: &LaplaceTypeModel, bc: &ProjectionBC, mu: f64, f: &HalfSpaceFunction) -> Result<ResolventApply> {
    if f.values.len() != f.grid.len() || f.grid.dim + 1 != model.n {
        return Err(Error::Dimension("frequency grid does not match the data or the model".into()));
    }
    let zero_data = CVec::zeros(match &bc.general {
        Some(g) => g.ell.iter().sum(),
        None => model.l,
    });
    let out = f
        .grid
        .points
        .par_iter()
        .zip(&f.values)
        .map(|(xi, fv)| {
            let pt = ParamPoint::at_origin(xi.clone(), mu)?;
            let s = boundary_symbol_solve(model, bc, &pt, fv, &zero_data)?;
            Ok((s.u, s.residual))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_residual = out.iter().map(|x| x.1).fold(0.0, f64::max);
    Ok(ResolventApply { u: HalfSpaceFunction { grid: f.grid.clone(), values: out.into_iter().map(|x| x.0).collect() }, max_residual })
}

#[derive(Debug, Clone, Serialize)]
pub struct NormScanRow {
    pub mu: f64,
    pub norm: f64,
    /// `mu^d ||R(mu)||`.
    pub scaled: f64,
    /// Frequency where the supremum was attained.
    pub xi_at_max: Vec<f64>,
}

/// `sup_{xi'} ||R(xi', mu)||` by power iteration on the discretized resolvent,
/// with the Laguerre scale tied to `mu`.
pub fn resolvent_norm_scan(model: &LaplaceTypeModel, bc: &ProjectionBC, mu_list: &[f64], n_modes: usize, xi_ratios: &[f64]) -> Result<Vec<NormScanRow>> {
    let dirs = crate::model::directions(model.n - 1, 8);
    mu_list
        .iter()
        .map(|&mu| {
            let basis = HalfLineBasis::new(n_modes, mu.max(1e-3))?;
            let mut pts = Vec::new();
            for r in xi_ratios {
                if *r == 0.0 || model.n == 1 {
                    pts.push(vec![0.0; model.n - 1]);
                } else {
                    for d in &dirs {
                        pts.push(d.iter().map(|v| v * r * mu).collect::<Vec<f64>>());
                    }
                }
            }
            let norms = pts
                .par_iter()
                .map(|xi| {
                    let pt = ParamPoint::at_origin(xi.clone(), mu)?;
                    let r = resolvent_matrix(model, bc, &pt, &basis)?;
                    let ra = r.adjoint();
                    let (v, _) = power_norm(|x| &r * x, |x| &ra * x, r.ncols(), 20_000, 1e-10).ok_or(Error::PowerIteration(20_000))?;
                    Ok((v, xi.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            let (norm, xi) = norms.into_iter().fold((0.0, vec![]), |a, b| if b.0 > a.0 { b } else { a });
            Ok(NormScanRow { mu, norm, scaled: mu.powi(model.d as i32) * norm, xi_at_max: xi })
        })
        .collect()
}

/// `int Tr_+ G(xi', mu) dxi'` with its quadrature diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct TraceDensity {
    pub mu: f64,
    pub value: C64,
    pub grid_cutoff: f64,
    /// Change of the value under the last grid refinement.
    pub tail_estimate: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct TraceDensityOptions {
    pub initial_points: usize,
    pub max_points: usize,
    /// Relative refinement change that counts as converged.
    pub target: f64,
    /// Relative tail above which the grid is rejected.
    pub tol: f64,
    /// Take `Tr_+` of the twisted kernels.
    pub twisted: bool,
}

impl Default for TraceDensityOptions {
    fn default() -> Self {
        Self { initial_points: 32, max_points: 2048, target: 1e-13, tol: 1e-8, twisted: false }
    }
}

fn trace_at(model: &LaplaceTypeModel, bc: &ProjectionBC, xi: &[f64], mu: f64, twisted: bool) -> Result<C64> {
    let pt = ParamPoint::at_origin(xi.to_vec(), mu)?;
    let g = green_correction_kernel(model, bc, &pt)?;
    if twisted { tr_plus(&twist(&g, &pt)?) } else { tr_plus(&g) }
}

pub fn trace_density(model: &LaplaceTypeModel, bc: &ProjectionBC, mu: f64, opts: TraceDensityOptions) -> Result<TraceDensity> {
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument("trace density needs mu > 0".into()));
    }
    match model.n {
        1 => {
            let value = trace_at(model, bc, &[], mu, opts.twisted)?;
            Ok(TraceDensity { mu, value, grid_cutoff: 0.0, tail_estimate: 0.0 })
        }
        2 => {
            let integrate = |grid: &FrequencyGrid| -> Result<C64> {
                let vals = grid
                    .points
                    .par_iter()
                    .zip(&grid.weights)
                    .map(|(xi, w)| Ok(trace_at(model, bc, xi, mu, opts.twisted)? * *w))
                    .collect::<Result<Vec<C64>>>()?;
                Ok(pairwise_sum(&vals))
            };
            let mut n = opts.initial_points;
            let mut grid = FrequencyGrid::compactified(mu, n);
            let mut prev = integrate(&grid)?;
            loop {
                n *= 2;
                grid = FrequencyGrid::compactified(mu, n);
                let cur = integrate(&grid)?;
                let tail = (cur - prev).norm();
                let scale = cur.norm().max(1e-300);
                if tail <= opts.target * scale || n >= opts.max_points {
                    if tail > opts.tol * scale {
                        return Err(Error::EnlargeGrid { cutoff: grid.cutoff, tail: tail / scale });
                    }
                    return Ok(TraceDensity { mu, value: cur, grid_cutoff: grid.cutoff, tail_estimate: tail });
                }
                prev = cur;
            }
        }
        n => Err(Error::Order(format!("trace density is implemented for n <= 2, got n = {n}"))),
    }
}

fn pairwise_sum(v: &[C64]) -> C64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{op_norm, CVec};
    use std::sync::Arc;

    fn lap(n: usize, l: usize, theta: f64) -> LaplaceTypeModel {
        LaplaceTypeModel::laplacian(n, l, theta).unwrap()
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(20);
        for k in 0..39 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum();
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn free_kernel_examples() {
        let m = lap(2, 1, PI);
        let pt = ParamPoint::at_origin(vec![0.6], 0.8).unwrap();
        let r = free_resolvent_kernel(&m, &pt).unwrap();
        for t in [0.0, 0.7, 3.0] {
            assert!((r.eval(t, t)[(0, 0)] + c(0.5)).norm() < 1e-15);
        }
        let far = ParamPoint::at_origin(vec![0.0], 1e3).unwrap();
        assert!((free_resolvent_kernel(&m, &far).unwrap().eval(1.0, 1.0)[(0, 0)].norm() - 5e-4).abs() < 1e-15);
    }

    // second-order differences of r(., s) away from the diagonal
    #[test]
    fn free_kernel_solves_the_ode_off_diagonal() {
        let m = lap(2, 1, 0.6 * PI);
        let pt = ParamPoint::at_origin(vec![0.4], 1.3).unwrap();
        let sigma = spectral_sigma(&m, &[0.4], 1.3).unwrap().sigmas[0];
        let r = free_resolvent_kernel(&m, &pt).unwrap();
        let s = 1.5;
        let h = 1e-3;
        for t in [0.3, 0.9, 2.2, 4.0] {
            let d2 = (r.eval(t + h, s)[(0, 0)] - r.eval(t, s)[(0, 0)] * 2.0 + r.eval(t - h, s)[(0, 0)]) / (h * h);
            assert!((d2 - sigma * sigma * r.eval(t, s)[(0, 0)]).norm() < 1e-6);
        }
        // jump of the derivative is one
        let jump = (r.eval(s + h, s)[(0, 0)] - r.eval(s - h, s)[(0, 0)]) / h;
        assert!(jump.norm() < 1e-2);
        let dr = (r.eval(s + h, s)[(0, 0)] - r.eval(s, s)[(0, 0)]) / h - (r.eval(s, s)[(0, 0)] - r.eval(s - h, s)[(0, 0)]) / h;
        assert!((dr - c(1.0)).norm() < 1e-2);
    }

    #[test]
    fn correction_examples() {
        let pt = ParamPoint::at_origin(vec![0.3], 1.1).unwrap();
        let m = lap(2, 1, 0.5 * PI);
        let s = spectral_sigma(&m, &[0.3], 1.1).unwrap().sigmas[0];
        let gd = green_correction_kernel(&m, &ProjectionBC::dirichlet(1), &pt).unwrap();
        let gn = green_correction_kernel(&m, &ProjectionBC::neumann(1), &pt).unwrap();
        let free = free_resolvent_kernel(&m, &pt).unwrap();
        for sv in [0.2, 1.0, 2.5] {
            let e = (-s * sv).exp() / (2.0 * s);
            assert!((gd.eval(0.0, sv)[(0, 0)] - e).norm() < 1e-15);
            assert!((gn.eval(0.0, sv)[(0, 0)] + e).norm() < 1e-15);
            assert!((free.eval(0.0, sv)[(0, 0)] + gd.eval(0.0, sv)[(0, 0)]).norm() < 1e-15);
            assert!((gd.eval(0.4, sv)[(0, 0)] + gn.eval(0.4, sv)[(0, 0)]).norm() < 1e-15);
            // Neumann: d/dt of the full kernel at t = 0 is -sigma g + sigma e^{-sigma s}/(2 sigma)
            let h = 1e-5;
            let full = |t: f64| free.eval(t, sv)[(0, 0)] + gn.eval(t, sv)[(0, 0)];
            assert!(((full(h) - full(0.0)) / h).norm() < 1e-4);
        }
        let m2 = lap(2, 2, PI);
        let s2 = spectral_sigma(&m2, &[0.3], 1.1).unwrap().sigmas[0];
        let pi = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0), c(0.0)]));
        let bc = ProjectionBC::projection(2, Arc::new(move |_: &[f64]| pi.clone()), Arc::new(|_: &[f64]| CMat::zeros(2, 2)));
        let g = green_correction_kernel(&m2, &bc, &pt).unwrap();
        let e = (-s2 * 0.9).exp() / (2.0 * s2);
        let expect = CMat::from_diagonal(&CVec::from_vec(vec![e, -e]));
        assert!((g.eval(0.4, 0.5) - expect).norm() < 1e-14);
    }

    #[test]
    fn discretized_kernel_meets_boundary_rows() {
        let b = HalfLineBasis::new(64, 1.5).unwrap();
        let m = lap(2, 1, 0.7 * PI);
        let pt = ParamPoint::at_origin(vec![0.5], 1.0).unwrap();
        let end = CMat::from_fn(1, 64, |_, j| c(b.endpoint_values()[j]));
        let d = b.derivative_matrix();
        let mut fs = CMat::zeros(64, 3);
        fs.set_column(0, &b.exp_coefficients(c(1.0)));
        fs.set_column(1, &b.exp_coefficients(C64::new(2.0, 1.0)));
        fs.set_column(2, &b.project(1, |t| CVec::from_element(1, c(t * (-3.0 * t).exp()))).column(0).into_owned());
        for bc in [ProjectionBC::dirichlet(1), ProjectionBC::neumann(1)] {
            let r = resolvent_matrix(&m, &bc, &pt, &b).unwrap();
            let row = match bc.kind {
                BcKind::Dirichlet => end.clone(),
                _ => &end * &d,
            };
            let res = op_norm(&(row * &r * &fs));
            assert!(res < 1e-8, "{:?}: {res}", bc.kind);
        }
    }

    #[test]
    fn tr_plus_closed_forms() {
        for (theta, mu, xi) in [(PI, 1.0, 0.0), (0.5 * PI, 2.0, 0.7), (1.2, 0.3, 2.0)] {
            let m = lap(2, 1, theta);
            let pt = ParamPoint::at_origin(vec![xi], mu).unwrap();
            let s = spectral_sigma(&m, &[xi], mu).unwrap().sigmas[0];
            let want = c(0.25) / (s * s);
            let d = tr_plus(&green_correction_kernel(&m, &ProjectionBC::dirichlet(1), &pt).unwrap()).unwrap();
            let nn = tr_plus(&green_correction_kernel(&m, &ProjectionBC::neumann(1), &pt).unwrap()).unwrap();
            assert!((d - want).norm() <= 1e-8 * want.norm());
            assert!((nn + want).norm() <= 1e-8 * want.norm());
        }
    }

    #[test]
    fn density_examples() {
        for theta in [0.5 * PI, PI, 1.7] {
            let m = lap(1, 1, theta);
            for mu in [1.0, 3.0] {
                let d = trace_density(&m, &ProjectionBC::dirichlet(1), mu, Default::default()).unwrap();
                let want = -C64::from_polar(1.0, -theta) / (4.0 * mu * mu);
                assert!((d.value - want).norm() < 1e-14);
            }
        }
        let m = lap(2, 1, PI);
        for mu in [1.0, 4.0, 37.0] {
            let d = trace_density(&m, &ProjectionBC::dirichlet(1), mu, Default::default()).unwrap();
            assert!((d.value - c(0.125 / mu)).norm() < 1e-12 / mu, "{d:?}");
            let nn = trace_density(&m, &ProjectionBC::neumann(1), mu, Default::default()).unwrap();
            assert!((nn.value + c(0.125 / mu)).norm() < 1e-12 / mu);
        }
        assert!(matches!(trace_density(&lap(3, 1, PI), &ProjectionBC::dirichlet(1), 1.0, Default::default()), Err(Error::Order(_))));
    }

    #[test]
    fn twisted_and_untwisted_densities_agree() {
        let m = lap(2, 1, 0.8 * PI);
        let bc = ProjectionBC::robin(1, Arc::new(|x: &[f64]| CMat::identity(1, 1) * c(0.5 * x[0].abs())));
        for mu in [0.5, 2.0, 9.0] {
            let a = trace_density(&m, &bc, mu, Default::default()).unwrap();
            let b = trace_density(&m, &bc, mu, TraceDensityOptions { twisted: true, ..Default::default() }).unwrap();
            assert!((a.value - b.value).norm() <= 1e-8 * a.value.norm());
        }
    }

    #[test]
    fn density_slope_matches_leading_power() {
        let m = lap(2, 1, 0.6 * PI);
        let d4 = trace_density(&m, &ProjectionBC::dirichlet(1), 4.0, Default::default()).unwrap().value.norm();
        let d64 = trace_density(&m, &ProjectionBC::dirichlet(1), 64.0, Default::default()).unwrap().value.norm();
        let slope = (d64 / d4).ln() / 16f64.ln();
        assert!((slope + 1.0).abs() < 1e-3);
    }

    #[test]
    fn frequencywise_norm_within_spectral_bound() {
        let b = HalfLineBasis::new(48, 1.0).unwrap();
        for theta in [0.5 * PI, PI, 1.5 * PI] {
            let m = lap(2, 1, theta);
            for (xi, mu) in [(0.0, 1.0), (1.0, 1.0), (2.0, 0.5)] {
                let pt = ParamPoint::at_origin(vec![xi], mu).unwrap();
                let z = C64::from_polar(mu * mu, theta);
                // spectrum of -d^2 + xi^2 with Dirichlet or Neumann is [xi^2, inf)
                let dist = if z.re >= xi * xi { z.im.abs() } else { (z - c(xi * xi)).norm() };
                for bc in [ProjectionBC::dirichlet(1), ProjectionBC::neumann(1)] {
                    let r = op_norm(&resolvent_matrix(&m, &bc, &pt, &b).unwrap());
                    assert!(r <= (1.0 + 1e-9) / dist, "theta={theta} xi={xi}: {r} vs {}", 1.0 / dist);
                }
            }
        }
    }

    #[test]
    fn apply_of_zero_is_zero() {
        let m = lap(2, 1, PI);
        let basis = HalfLineBasis::new(32, 2.0).unwrap();
        let grid = FrequencyGrid::uniform(1, 4.0, 0.5).unwrap();
        let f = HalfSpaceFunction::separable(&grid, &basis, |_| c(0.0), |_| c(0.0));
        let u = resolvent_apply(&m, &ProjectionBC::dirichlet(1), 2.0, &f).unwrap();
        assert!(u.u.values.iter().all(|v| v.coeffs.norm() == 0.0));
    }
}
