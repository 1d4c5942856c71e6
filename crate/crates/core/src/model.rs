//! Laplace-type model `A = D_{x_n}^2 + q(D')` on the half-space with boundary
//! conditions of global projection type, and the three ellipticity checks.
//!
//! At a boundary frequency the interior operator `e^{i theta} mu^2 - q - D_n^2`
//! is `d_t^2 - sigma^2` with `sigma = (q - e^{i theta} mu^2)^{1/2}`, so its
//! decaying kernel is `e^{-sigma t} z`. Boundary rows `sum_l C_l gamma_l` act on
//! that kernel as `sum_l C_l (-sigma)^l`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::green::{op_plus_matrix, NormalSymbol, OpPlusOptions};
use crate::halfline::{block_diag, HalfLineBasis, HalfLineFunction};
use crate::linalg::{c, hermitian_eigen, kron, lstsq, min_singular_value, range_basis, CMat, CVec, C64, I};
use crate::symbol::ParamPoint;

/// Matrix-valued function of `xi'`.
pub type MatrixSymbol = Arc<dyn Fn(&[f64]) -> CMat + Send + Sync>;

/// `e^{i theta} mu^2 - A` with `A = D_{x_n}^2 + q(xi')` at the principal level.
#[derive(Clone)]
pub struct LaplaceTypeModel {
    pub n: usize,
    pub l: usize,
    pub theta: f64,
    pub q: MatrixSymbol,
    /// Order of the limit operator `e^{i theta} - a0d D^d` used by (Pi3).
    pub d: usize,
    pub a0d: C64,
}

impl std::fmt::Debug for LaplaceTypeModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LaplaceTypeModel").field("n", &self.n).field("l", &self.l).field("theta", &self.theta).finish()
    }
}

impl LaplaceTypeModel {
    pub fn new(n: usize, l: usize, theta: f64, q: MatrixSymbol) -> Result<Self> {
        if !(theta > 0.0 && theta < 2.0 * PI) {
            return Err(Error::InvalidArgument(format!("theta = {theta} must lie in (0, 2 pi)")));
        }
        Self::negative_control(n, l, theta, q)
    }

    /// Same as [`LaplaceTypeModel::new`] but accepts any `theta`.
    pub fn negative_control(n: usize, l: usize, theta: f64, q: MatrixSymbol) -> Result<Self> {
        if n == 0 || l == 0 {
            return Err(Error::InvalidArgument("n and L must be positive".into()));
        }
        Ok(Self { n, l, theta, q, d: 2, a0d: c(1.0) })
    }

    /// `q(xi') = |xi'|^2 I_L`.
    pub fn laplacian(n: usize, l: usize, theta: f64) -> Result<Self> {
        Self::new(n, l, theta, scalar_times_identity(l, |xi| xi.iter().map(|v| v * v).sum()))
    }

    pub fn q_at(&self, xi_prime: &[f64]) -> Result<CMat> {
        let q = (self.q)(xi_prime);
        if q.shape() != (self.l, self.l) {
            return Err(Error::Dimension(format!("q has shape {:?}, expected {}x{}", q.shape(), self.l, self.l)));
        }
        Ok(q)
    }

    fn check_point(&self, pt: &ParamPoint) -> Result<()> {
        if pt.xi_prime.len() != self.n - 1 {
            return Err(Error::Dimension(format!("xi' has {} components, model needs {}", pt.xi_prime.len(), self.n - 1)));
        }
        Ok(())
    }

    /// Interior principal symbol `e^{i theta} mu^2 - q(xi') - xi_n^2`.
    pub fn interior_symbol(&self, xi: &[f64], mu: f64) -> Result<CMat> {
        let (xp, xn) = xi.split_at(self.n - 1);
        let q = self.q_at(xp)?;
        let shift = C64::from_polar(mu * mu, self.theta) - c(xn[0] * xn[0]);
        Ok(CMat::identity(self.l, self.l) * shift - q)
    }
}

pub fn scalar_times_identity<F>(l: usize, f: F) -> MatrixSymbol
where
    F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
{
    Arc::new(move |xi: &[f64]| CMat::identity(l, l) * c(f(xi)))
}

/// Unitary diagonalization of `q(xi')` with the roots `sigma_k`.
#[derive(Debug, Clone)]
pub struct Spectral {
    pub eigenvalues: Vec<f64>,
    pub vectors: CMat,
    pub sigmas: Vec<C64>,
}

impl Spectral {
    /// `U diag(f(sigma_k)) U*`.
    pub fn apply(&self, f: impl Fn(C64) -> C64) -> CMat {
        let d = CMat::from_diagonal(&CVec::from_iterator(self.sigmas.len(), self.sigmas.iter().map(|s| f(*s))));
        &self.vectors * d * self.vectors.adjoint()
    }

    pub fn sigma(&self) -> CMat {
        self.apply(|s| s)
    }

    pub fn min_re_sigma(&self) -> f64 {
        self.sigmas.iter().map(|s| s.re).fold(f64::INFINITY, f64::min)
    }
}

/// Principal square root of `q(xi') - e^{i theta} mu^2` by spectral calculus.
pub fn spectral_sigma(model: &LaplaceTypeModel, xi_prime: &[f64], mu: f64) -> Result<Spectral> {
    let q = model.q_at(xi_prime)?;
    let (eigenvalues, vectors) = hermitian_eigen(&q);
    let shift = C64::from_polar(mu * mu, model.theta);
    let scale = eigenvalues.iter().fold(mu * mu, |a, v| a.max(v.abs())).max(1e-300);
    let mut sigmas = Vec::with_capacity(eigenvalues.len());
    for lam in &eigenvalues {
        let z = c(*lam) - shift;
        if z.im.abs() <= 1e-14 * scale && z.re <= 1e-14 * scale {
            return Err(Error::BranchCut { re: z.re, im: z.im });
        }
        sigmas.push(z.sqrt());
    }
    Ok(Spectral { eigenvalues, vectors, sigmas })
}

/// `sigma(x', xi', mu)` as an `L x L` matrix.
pub fn sigma_root(model: &LaplaceTypeModel, pt: &ParamPoint) -> Result<CMat> {
    model.check_point(pt)?;
    if pt.radius() == 0.0 {
        return Err(Error::Domain);
    }
    Ok(spectral_sigma(model, &pt.xi_prime, pt.mu)?.sigma())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BcKind {
    Dirichlet,
    Neumann,
    Robin,
    Projection,
    General,
}

/// `T = Pi S` with `S_k = sum_{l <= k} s_{kl} gamma_l` and block lower-triangular `Pi`.
#[derive(Clone)]
pub struct GeneralBc {
    /// Block sizes `ell_k`, one per `S_k`, `k = 0..d-1`.
    pub ell: Vec<usize>,
    /// `Pi(xi')`, square of size `sum ell`.
    pub pi: MatrixSymbol,
    /// `S_l(xi')` for `l = 0..d-1`, each `sum ell x L`: the coefficient of `gamma_l`.
    pub s: Arc<dyn Fn(&[f64]) -> Vec<CMat> + Send + Sync>,
}

/// Boundary condition of global projection type.
#[derive(Clone)]
pub struct ProjectionBC {
    pub kind: BcKind,
    pub l: usize,
    /// `pi^{(0)}(xi')`, homogeneous of degree 0.
    pub pi: MatrixSymbol,
    /// `b^{(1)}(xi')`, homogeneous of degree 1.
    pub b: MatrixSymbol,
    pub general: Option<GeneralBc>,
}

impl std::fmt::Debug for ProjectionBC {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProjectionBC").field("kind", &self.kind).field("l", &self.l).finish()
    }
}

fn constant(m: CMat) -> MatrixSymbol {
    Arc::new(move |_: &[f64]| m.clone())
}

impl ProjectionBC {
    pub fn dirichlet(l: usize) -> Self {
        Self { kind: BcKind::Dirichlet, l, pi: constant(CMat::identity(l, l)), b: constant(CMat::zeros(l, l)), general: None }
    }

    pub fn neumann(l: usize) -> Self {
        Self { kind: BcKind::Neumann, l, pi: constant(CMat::zeros(l, l)), b: constant(CMat::zeros(l, l)), general: None }
    }

    /// `gamma_1 + b gamma_0`, i.e. the projection case with `pi = 0`.
    pub fn robin(l: usize, b: MatrixSymbol) -> Self {
        Self { kind: BcKind::Robin, l, pi: constant(CMat::zeros(l, l)), b, general: None }
    }

    /// `(pi gamma_0, (1 - pi)(gamma_1 + b gamma_0))`.
    pub fn projection(l: usize, pi: MatrixSymbol, b: MatrixSymbol) -> Self {
        Self { kind: BcKind::Projection, l, pi, b, general: None }
    }

    pub fn general(l: usize, g: GeneralBc) -> Self {
        Self { kind: BcKind::General, l, pi: g.pi.clone(), b: constant(CMat::zeros(l, l)), general: Some(g) }
    }

    /// Number of normal traces involved.
    pub fn order(&self) -> usize {
        match &self.general {
            Some(g) => g.ell.len(),
            None => 2,
        }
    }

    /// `pi^2 = pi` at `xi'` (and block lower-triangular structure for the general kind).
    pub fn validate_at(&self, xi_prime: &[f64]) -> Result<()> {
        let pi = (self.pi)(xi_prime);
        let defect = (&pi * &pi - &pi).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if defect > 1e-10 {
            return Err(Error::NotIdempotent(defect));
        }
        if let Some(g) = &self.general {
            let n: usize = g.ell.iter().sum();
            if pi.shape() != (n, n) {
                return Err(Error::Dimension(format!("Pi must be {n}x{n}")));
            }
            let offs: Vec<usize> = g.ell.iter().scan(0, |acc, &e| { let o = *acc; *acc += e; Some(o) }).collect();
            let s = (g.s)(xi_prime);
            if s.len() != g.ell.len() {
                return Err(Error::Dimension(format!("need {} trace coefficients, got {}", g.ell.len(), s.len())));
            }
            for (j, &oj) in offs.iter().enumerate() {
                for (k, &ok) in offs.iter().enumerate().skip(j + 1) {
                    let blk = pi.view((oj, ok), (g.ell[j], g.ell[k]));
                    if blk.iter().any(|z| z.norm() > 1e-12) {
                        return Err(Error::InvalidArgument(format!("Pi_{j}{k} must vanish (lower-triangular)")));
                    }
                    let sb = s[k].view((oj, 0), (g.ell[j], self.l));
                    if sb.iter().any(|z| z.norm() > 1e-12) {
                        return Err(Error::InvalidArgument(format!("S_{j}{k} must vanish (lower-triangular)")));
                    }
                }
            }
            for m in &s {
                if m.shape() != (n, self.l) {
                    return Err(Error::Dimension(format!("trace coefficient must be {n}x{}", self.l)));
                }
            }
        } else if pi.shape() != (self.l, self.l) {
            return Err(Error::Dimension(format!("pi must be {}x{}", self.l, self.l)));
        }
        Ok(())
    }

    /// Row coefficients `C_l` with `T = sum_l C_l gamma_l`.
    ///
    /// Projection kinds use the sum form `pi gamma_0 + (1 - pi)(gamma_1 + b gamma_0)`
    /// (`L` rows); the general kind uses the stacked rows of `Pi S`.
    pub fn rows(&self, xi_prime: &[f64]) -> Vec<CMat> {
        match &self.general {
            Some(g) => {
                let pi = (g.pi)(xi_prime);
                (g.s)(xi_prime).iter().map(|s| &pi * s).collect()
            }
            None => {
                let pi = (self.pi)(xi_prime);
                let comp = CMat::identity(self.l, self.l) - &pi;
                let b = (self.b)(xi_prime);
                vec![&pi + &comp * b, comp]
            }
        }
    }

    /// Rows of the principal limit condition: only the diagonal blocks survive.
    pub fn limit_rows(&self, xi_dir: &[f64]) -> Vec<CMat> {
        match &self.general {
            Some(g) => {
                let pi = (g.pi)(xi_dir);
                let s = (g.s)(xi_dir);
                let n: usize = g.ell.iter().sum();
                let mut diag_pi = CMat::zeros(n, n);
                let mut off = 0;
                let mut out = Vec::new();
                for (k, &e) in g.ell.iter().enumerate() {
                    diag_pi.view_mut((off, off), (e, e)).copy_from(&pi.view((off, off), (e, e)));
                    let mut sk = CMat::zeros(n, self.l);
                    sk.view_mut((off, 0), (e, self.l)).copy_from(&s[k].view((off, 0), (e, self.l)));
                    out.push(sk);
                    off += e;
                }
                out.iter().map(|sk| &diag_pi * sk).collect()
            }
            None => {
                let pi = (self.pi)(xi_dir);
                vec![pi.clone(), CMat::identity(self.l, self.l) - pi]
            }
        }
    }

    /// Orthonormal basis of `im Pi` for the general kind.
    fn data_space(&self, xi_prime: &[f64]) -> Option<CMat> {
        self.general.as_ref().map(|g| range_basis(&(g.pi)(xi_prime), 1e-10))
    }
}

/// `sum_l C_l (-sigma)^l`.
fn rows_on_mode(rows: &[CMat], mode: &CMat) -> CMat {
    let l = mode.nrows();
    let mut pw = CMat::identity(l, l);
    let mut out = CMat::zeros(rows[0].nrows(), l);
    for r in rows {
        out += r * &pw;
        pw = &pw * mode;
    }
    out
}

/// Reduced boundary matrix: the boundary rows applied to `e^{-sigma t} z`.
pub fn reduced_bc_matrix(model: &LaplaceTypeModel, bc: &ProjectionBC, pt: &ParamPoint) -> Result<CMat> {
    model.check_point(pt)?;
    let sp = spectral_sigma(model, &pt.xi_prime, pt.mu)?;
    Ok(rows_on_mode(&bc.rows(&pt.xi_prime), &(-sp.sigma())))
}

/// Smallest singular value of the reduced matrix as a map `C^L -> data space`.
pub(crate) fn reduced_min_sv(bc: &ProjectionBC, xi_prime: &[f64], reduced: &CMat) -> f64 {
    match bc.data_space(xi_prime) {
        Some(u) => {
            if u.ncols() != reduced.ncols() {
                return 0.0;
            }
            min_singular_value(&(u.adjoint() * reduced))
        }
        None => min_singular_value(reduced),
    }
}

/// Solution of the boundary-symbol problem with its ODE residual.
#[derive(Debug, Clone)]
pub struct BoundarySolve {
    pub u: HalfLineFunction,
    /// Coefficient of the kernel mode `e^{-sigma t} z`.
    pub z: CVec,
    /// `|| u'' - sigma^2 u - f ||_{L^2}` on the span.
    pub residual: f64,
}

/// Solves `(e^{i theta} mu^2 - q(xi') + d_t^2) u = f` with `T u = data`.
pub fn boundary_symbol_solve(
    model: &LaplaceTypeModel,
    bc: &ProjectionBC,
    pt: &ParamPoint,
    f: &HalfLineFunction,
    data: &CVec,
) -> Result<BoundarySolve> {
    model.check_point(pt)?;
    if f.dim() != model.l {
        return Err(Error::Dimension(format!("f has {} components, model has {}", f.dim(), model.l)));
    }
    let sp = spectral_sigma(model, &pt.xi_prime, pt.mu)?;
    if sp.min_re_sigma() <= 0.0 {
        return Err(Error::NoDecayingMode(sp.min_re_sigma()));
    }
    let basis = &f.basis;
    let n = basis.n_modes;
    let u_mat = &sp.vectors;
    // eigen-components: columns of f.coeffs * conj(U)
    let ft = &f.coeffs * u_mat.map(|z| z.conj());
    let mut ut = CMat::zeros(n, model.l);
    let mut big_f = CVec::zeros(model.l);
    let opts = OpPlusOptions::default();
    for (k, &s) in sp.sigmas.iter().enumerate() {
        let col = ft.column(k).into_owned();
        big_f[k] = basis.exp_coefficients(s).dot(&col);
        let s2 = s * s;
        let free = NormalSymbol::bounded(move |xi| -c(1.0) / (c(xi * xi) + s2));
        let t = op_plus_matrix(&free, basis, opts)?;
        ut.set_column(k, &(t * col));
    }
    let big_f = u_mat * big_f;
    let rows = bc.rows(&pt.xi_prime);
    let sigma = sp.sigma();
    let rm = rows_on_mode(&rows, &(-&sigma));
    let inv2s = sp.apply(|s| c(0.5) / s);
    let rhs = data + rows_on_mode(&rows, &sigma) * &inv2s * &big_f;
    if rhs.len() != rm.nrows() {
        return Err(Error::Dimension(format!("boundary data has {} entries, condition has {} rows", data.len(), rm.nrows())));
    }
    let min_sv = reduced_min_sv(bc, &pt.xi_prime, &rm);
    if min_sv < 1e-12 {
        return Err(Error::NotElliptic { xi: pt.xi_prime.clone(), mu: pt.mu, min_sv });
    }
    let z = lstsq(&rm, &CMat::from_column_slice(rhs.len(), 1, rhs.as_slice())).column(0).into_owned();
    let zt = u_mat.adjoint() * &z;
    for (k, &s) in sp.sigmas.iter().enumerate() {
        let mode = basis.exp_coefficients(s) * zt[k];
        let col = ut.column(k) + mode;
        ut.set_column(k, &col);
    }
    let d = basis.derivative_matrix();
    let d2 = &d * &d;
    let mut res2 = 0.0;
    for (k, &s) in sp.sigmas.iter().enumerate() {
        let r = &d2 * ut.column(k) - ut.column(k) * (s * s) - ft.column(k);
        res2 += r.norm_squared();
    }
    let coeffs = ut * u_mat.transpose();
    Ok(BoundarySolve { u: HalfLineFunction::new(basis.clone(), coeffs)?, z, residual: res2.sqrt() })
}

/// Point where a check attains its minimum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub xi: Vec<f64>,
    pub mu: f64,
}

/// Outcome of one ellipticity condition.
#[derive(Debug, Clone, Serialize)]
pub struct EllipticityReport {
    pub condition: String,
    pub pass: bool,
    pub min_sv: f64,
    pub witness: Option<Witness>,
    pub threshold: f64,
    pub n_points: usize,
    pub mean_sv: f64,
    pub details: BTreeMap<String, f64>,
}

impl EllipticityReport {
    fn from_samples(condition: &str, samples: &[(f64, Witness)], threshold: f64) -> Self {
        let (mut min_sv, mut witness) = (f64::INFINITY, None);
        let mut sum = 0.0;
        for (v, w) in samples {
            sum += v;
            if *v < min_sv || witness.is_none() {
                min_sv = *v;
                witness = Some(w.clone());
            }
        }
        let n = samples.len();
        Self {
            condition: condition.into(),
            pass: min_sv >= threshold,
            min_sv,
            witness,
            threshold,
            n_points: n,
            mean_sv: if n > 0 { sum / n as f64 } else { f64::NAN },
            details: BTreeMap::new(),
        }
    }
}

/// All three conditions together.
#[derive(Debug, Clone, Serialize)]
pub struct CombinedReport {
    pub pass: bool,
    pub reports: Vec<EllipticityReport>,
}

/// Sample-grid sizes and the pass threshold.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EllipticityGrids {
    /// Polar angles in `[0, pi/2]` for (E1), endpoints included (`e1_polar + 1` values).
    pub e1_polar: usize,
    pub e1_dirs: usize,
    /// Angles `(pi/2) k / pi2_radial`, `k = 0..pi2_radial`, for (Pi2).
    pub pi2_radial: usize,
    pub pi2_dirs: usize,
    pub pi3_dirs: usize,
    pub threshold: f64,
    /// Laguerre modes and scale of the discretized boundary-symbol operator.
    pub n_modes: usize,
    pub alpha: f64,
}

impl Default for EllipticityGrids {
    fn default() -> Self {
        Self { e1_polar: 40, e1_dirs: 40, pi2_radial: 60, pi2_dirs: 16, pi3_dirs: 16, threshold: 1e-6, n_modes: 64, alpha: 1.0 }
    }
}

/// Deterministic unit vectors in `R^dim`.
pub fn directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        0 => vec![vec![]],
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count).map(|j| {
            let a = 2.0 * PI * j as f64 / count as f64;
            vec![a.cos(), a.sin()]
        }).collect(),
        _ => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed + dim as u64);
            let mut out = Vec::with_capacity(count);
            while out.len() < count {
                let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if r > 0.1 && r <= 1.0 {
                    out.push(v.into_iter().map(|x| x / r).collect());
                }
            }
            out
        }
    }
}

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 < f2 { (x1, f1) } else { (x2, f2) }
}

/// (E1): `sigma_min(e^{i theta} mu^2 - q(xi') - xi_n^2)` over the unit sphere in `(xi, mu)`, `mu >= 0`.
pub fn check_e1(model: &LaplaceTypeModel, grids: &EllipticityGrids) -> Result<EllipticityReport> {
    let dirs = directions(model.n, grids.e1_dirs);
    let step = 0.5 * PI / grids.e1_polar as f64;
    let value = |a: f64, w: &[f64]| -> Result<(f64, Witness)> {
        let (mu, r) = (a.sin(), a.cos());
        let xi: Vec<f64> = w.iter().map(|v| r * v).collect();
        let m = model.interior_symbol(&xi, mu)?;
        Ok((min_singular_value(&m), Witness { xi, mu }))
    };
    let pts: Vec<(f64, usize)> =
        (0..=grids.e1_polar).flat_map(|k| (0..dirs.len()).map(move |j| (k as f64 * step, j))).collect();
    let samples = pts.par_iter().map(|&(a, j)| value(a, &dirs[j])).collect::<Result<Vec<_>>>()?;
    let mut report = EllipticityReport::from_samples("E1", &samples, grids.threshold);
    // refine the polar angle around the grid minimum
    let best = samples.iter().enumerate().min_by(|x, y| x.1 .0.partial_cmp(&y.1 .0).unwrap()).map(|(i, _)| i).unwrap();
    let (a0, j) = pts[best];
    let f = |a: f64| value(a, &dirs[j]).map(|v| v.0).unwrap_or(f64::INFINITY);
    let (a, v) = golden_min(f, (a0 - step).max(0.0), (a0 + step).min(0.5 * PI), 80);
    if v < report.min_sv {
        let (v, w) = value(a, &dirs[j])?;
        report.min_sv = v;
        report.witness = Some(w);
        report.pass = v >= grids.threshold;
    }
    Ok(report)
}

/// Discretized boundary-symbol operator `u -> (u'' - sigma^2 u, T u)` on the
/// Laguerre span, with the domain measured in the norm `||(1 + d^* d) u||`.
pub fn discrete_boundary_operator(model: &LaplaceTypeModel, bc: &ProjectionBC, pt: &ParamPoint, basis: &HalfLineBasis) -> Result<CMat> {
    let sp = spectral_sigma(model, &pt.xi_prime, pt.mu)?;
    let n = basis.n_modes;
    let l = model.l;
    let d = basis.derivative_matrix();
    let sigma2 = sp.apply(|s| s * s);
    let interior = block_diag(&(&d * &d), l) - kron(&sigma2, &CMat::identity(n, n));
    let rows = bc.rows(&pt.xi_prime);
    let rows: Vec<CMat> = match bc.data_space(&pt.xi_prime) {
        Some(u) => rows.iter().map(|r| u.adjoint() * r).collect(),
        None => rows,
    };
    let end = CMat::from_fn(1, n, |_, _| c((2.0 * basis.alpha).sqrt()));
    let mut trace = CMat::zeros(rows[0].nrows(), n * l);
    let mut dl = CMat::identity(n, n);
    for r in &rows {
        trace += kron(r, &(&end * &dl));
        dl = &d * dl;
    }
    let mut a = CMat::zeros(n * l + trace.nrows(), n * l);
    a.view_mut((0, 0), (n * l, n * l)).copy_from(&interior);
    a.view_mut((n * l, 0), (trace.nrows(), n * l)).copy_from(&trace);
    let w = block_diag(&(CMat::identity(n, n) + d.adjoint() * &d), l);
    let winv = w.try_inverse().ok_or_else(|| Error::InvalidArgument("singular norm weight".into()))?;
    Ok(a * winv)
}

/// (Pi2): on the punctured quarter circle `|(xi', mu)| = 1`, `xi' != 0`.
pub fn check_pi2(model: &LaplaceTypeModel, bc: &ProjectionBC, grids: &EllipticityGrids) -> EllipticityReport {
    let dirs = directions(model.n - 1, grids.pi2_dirs);
    let pts: Vec<(f64, usize)> = if model.n == 1 {
        vec![(0.5 * PI, 0)]
    } else {
        (0..grids.pi2_radial)
            .flat_map(|k| (0..dirs.len()).map(move |j| (0.5 * PI * k as f64 / grids.pi2_radial as f64, j)))
            .collect()
    };
    let basis = HalfLineBasis::new(grids.n_modes, grids.alpha).expect("positive mode count and scale");
    let results: Vec<(f64, f64, f64, Witness)> = pts
        .par_iter()
        .map(|&(a, j)| {
            let (mu, r) = (a.sin(), a.cos());
            let xi: Vec<f64> = dirs[j].iter().map(|v| r * v).collect();
            let w = Witness { xi: xi.clone(), mu };
            let pt = match ParamPoint::at_origin(xi.clone(), mu) {
                Ok(p) => p,
                Err(_) => return (0.0, 0.0, f64::NEG_INFINITY, w),
            };
            let sp = match spectral_sigma(model, &xi, mu) {
                Ok(s) => s,
                Err(_) => return (0.0, 0.0, f64::NEG_INFINITY, w),
            };
            let re = sp.min_re_sigma();
            let reduced = rows_on_mode(&bc.rows(&xi), &(-sp.sigma()));
            let red = reduced_min_sv(bc, &xi, &reduced);
            let disc = discrete_boundary_operator(model, bc, &pt, &basis).map(|m| min_singular_value(&m)).unwrap_or(0.0);
            (red, disc, re, w)
        })
        .collect();
    let samples: Vec<(f64, Witness)> = results
        .iter()
        .map(|(red, disc, re, w)| (if *re > 0.0 { red.min(*disc) } else { 0.0 }, w.clone()))
        .collect();
    let mut report = EllipticityReport::from_samples("Pi2", &samples, grids.threshold);
    let fold = |f: &dyn Fn(&(f64, f64, f64, Witness)) -> f64| results.iter().map(f).fold(f64::INFINITY, f64::min);
    report.details.insert("reduced_min_sv".into(), fold(&|r| r.0));
    report.details.insert("discrete_min_sv".into(), fold(&|r| r.1));
    report.details.insert("min_re_sigma".into(), fold(&|r| r.2));
    report
}

/// Decaying roots `rho` of `e^{i theta} - a0d (i rho)^d = 0`, i.e. kernel modes `e^{-rho t}`.
pub fn limit_roots(model: &LaplaceTypeModel) -> Vec<C64> {
    let d = model.d as i32;
    let target = C64::from_polar(1.0, model.theta) / model.a0d;
    let (r, arg) = target.to_polar();
    (0..d)
        .map(|k| -I * C64::from_polar(r.powf(1.0 / d as f64), (arg + 2.0 * PI * k as f64) / d as f64))
        .filter(|rho| rho.re > 1e-12)
        .collect()
}

/// `rho = e^{i (theta - pi) / 2}` for the second-order model.
pub fn rho(theta: f64) -> C64 {
    C64::from_polar(1.0, 0.5 * (theta - PI))
}

/// (Pi3): boundary rows of the limit problem restricted to the kernel
/// `span e^{-rho t}`, per boundary frequency direction.
pub fn check_pi3(model: &LaplaceTypeModel, bc: &ProjectionBC, grids: &EllipticityGrids) -> Result<EllipticityReport> {
    if bc.order() != model.d {
        return Err(Error::Dimension(format!("condition has {} trace orders, model order is {}", bc.order(), model.d)));
    }
    let dirs = directions(model.n - 1, grids.pi3_dirs);
    for w in &dirs {
        bc.validate_at(w)?;
    }
    let roots = limit_roots(model);
    let expected = model.d / 2;
    let samples: Vec<(f64, Witness)> = dirs
        .iter()
        .map(|w| {
            let wit = Witness { xi: w.clone(), mu: 1.0 };
            if roots.len() != expected {
                return (0.0, wit);
            }
            let rows = bc.limit_rows(w);
            let blocks: Vec<CMat> = roots.iter().map(|r| rows_on_mode(&rows, &(CMat::identity(model.l, model.l) * -*r))).collect();
            let nr = blocks[0].nrows();
            let mut m = CMat::zeros(nr, model.l * blocks.len());
            for (i, b) in blocks.iter().enumerate() {
                m.view_mut((0, i * model.l), (nr, model.l)).copy_from(b);
            }
            let m = match bc.data_space(w) {
                Some(u) => u.adjoint() * m,
                None => m,
            };
            let v = if m.nrows() == m.ncols() { min_singular_value(&m) } else { 0.0 };
            (v, wit)
        })
        .collect();
    let mut report = EllipticityReport::from_samples("Pi3", &samples, grids.threshold);
    report.details.insert("decaying_roots".into(), roots.len() as f64);
    if let Ok(basis) = HalfLineBasis::new(grids.n_modes, grids.alpha) {
        if roots.len() == expected {
            let ns = limit_nullspace(model, &basis);
            report.details.insert("nullspace_dimension".into(), ns.dimension as f64);
            report.details.insert("nullspace_misalignment".into(), ns.misalignment);
        }
    }
    Ok(report)
}

/// Runs (E1), (Pi2), (Pi3); overall pass iff all pass.
pub fn assemble_report(model: &LaplaceTypeModel, bc: &ProjectionBC, grids: &EllipticityGrids) -> Result<CombinedReport> {
    let reports = vec![check_e1(model, grids)?, check_pi2(model, bc, grids), check_pi3(model, bc, grids)?];
    Ok(CombinedReport { pass: reports.iter().all(|r| r.pass), reports })
}

/// Numerical kernel of the discretized limit operator `e^{i theta} - a0d D^d`.
#[derive(Debug, Clone, Serialize)]
pub struct LimitNullspace {
    pub dimension: usize,
    /// Sine of the largest principal angle between the numerical kernel and
    /// the span of the exact modes `e^{-rho t} e_l`.
    pub misalignment: f64,
}

/// The last `d/2` rows of every component block are dropped (they carry the
/// truncation), leaving a kernel of dimension `L d / 2`.
pub fn limit_nullspace(model: &LaplaceTypeModel, basis: &HalfLineBasis) -> LimitNullspace {
    let n = basis.n_modes;
    let l = model.l;
    let half = model.d / 2;
    let d = basis.derivative_matrix();
    let mut dd = CMat::identity(n, n);
    for _ in 0..model.d {
        dd = &d * dd;
    }
    // D = -i d/dt
    let dn = (-I).powi(model.d as i32);
    let op = CMat::identity(n, n) * C64::from_polar(1.0, model.theta) - dd * (model.a0d * dn);
    let kept = op.rows(0, n - half).into_owned();
    let full = block_diag(&kept, l);
    let (vals, vecs) = crate::linalg::hermitian_eigen(&(full.adjoint() * &full));
    let top = vals.last().copied().unwrap_or(0.0).max(1e-300);
    let dimension = vals.iter().filter(|&&v| v <= 1e-12 * top).count();
    let kernel = vecs.columns(0, dimension.max(1)).into_owned();
    let roots = limit_roots(model);
    let mut exact = CMat::zeros(n * l, roots.len() * l);
    for (i, r) in roots.iter().enumerate() {
        let e = basis.exp_coefficients(*r);
        for comp in 0..l {
            exact.view_mut((comp * n, i * l + comp), (n, 1)).copy_from(&e);
        }
    }
    let q = range_basis(&exact, 1e-12);
    let resid = &kernel - &q * (q.adjoint() * &kernel);
    let misalignment = crate::linalg::op_norm(&resid);
    LimitNullspace { dimension, misalignment }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::halfline::exp_mode;

    fn pt(xi: f64, mu: f64) -> ParamPoint {
        ParamPoint::at_origin(vec![xi], mu).unwrap()
    }

    #[test]
    fn sigma_examples() {
        let m = LaplaceTypeModel::laplacian(2, 1, PI).unwrap();
        assert!((sigma_root(&m, &pt(0.0, 1.0)).unwrap()[(0, 0)] - c(1.0)).norm() < 1e-15);
        assert!((sigma_root(&m, &pt(1.0, 0.0)).unwrap()[(0, 0)] - c(1.0)).norm() < 1e-15);
        let m = LaplaceTypeModel::laplacian(2, 1, 0.5 * PI).unwrap();
        let s = sigma_root(&m, &pt(0.0, 1.0)).unwrap()[(0, 0)];
        assert!((s - C64::from_polar(1.0, -0.25 * PI)).norm() < 1e-15);
        let m0 = LaplaceTypeModel::negative_control(2, 1, 0.0, scalar_times_identity(1, |x| x[0] * x[0])).unwrap();
        assert!(matches!(sigma_root(&m0, &pt(0.0, 1.0)), Err(Error::BranchCut { .. })));
        assert!(LaplaceTypeModel::laplacian(2, 1, 0.0).is_err());
    }

    #[test]
    fn re_sigma_positive_on_ray() {
        for theta in [0.1, 1.0, PI, 4.0, 6.2] {
            let m = LaplaceTypeModel::laplacian(2, 1, theta).unwrap();
            for k in 0..50 {
                let a = 0.5 * PI * k as f64 / 50.0;
                let s = spectral_sigma(&m, &[a.cos()], a.sin()).unwrap();
                assert!(s.min_re_sigma() > 0.0);
            }
        }
    }

    #[test]
    fn reduced_matrix_examples() {
        let m = LaplaceTypeModel::laplacian(2, 1, PI).unwrap();
        let p = pt(0.6, 0.8);
        assert!((reduced_bc_matrix(&m, &ProjectionBC::dirichlet(1), &p).unwrap()[(0, 0)] - c(1.0)).norm() < 1e-15);
        let s = sigma_root(&m, &p).unwrap()[(0, 0)];
        assert!((reduced_bc_matrix(&m, &ProjectionBC::neumann(1), &p).unwrap()[(0, 0)] + s).norm() < 1e-15);
        let m2 = LaplaceTypeModel::laplacian(2, 2, PI).unwrap();
        let pi = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0), c(0.0)]));
        let bc = ProjectionBC::projection(2, constant(pi), constant(CMat::zeros(2, 2)));
        let r = reduced_bc_matrix(&m2, &bc, &p).unwrap();
        let expect = CMat::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), -s]);
        assert!((r - expect).norm() < 1e-15);
    }

    #[test]
    fn boundary_solve_homogeneous_examples() {
        let b = HalfLineBasis::new(64, 1.0).unwrap();
        let m = LaplaceTypeModel::laplacian(2, 1, 0.5 * PI).unwrap();
        let p = pt(0.3, 1.1);
        let s = sigma_root(&m, &p).unwrap()[(0, 0)];
        let f = HalfLineFunction::zeros(&b, 1);
        let g = CVec::from_element(1, C64::new(0.7, -0.2));
        let expect = exp_mode(&b, s, &g).unwrap().function;
        let u = boundary_symbol_solve(&m, &ProjectionBC::dirichlet(1), &p, &f, &g).unwrap();
        assert!((u.u.coeffs - &expect.coeffs).norm() < 1e-12);
        let u = boundary_symbol_solve(&m, &ProjectionBC::neumann(1), &p, &f, &g).unwrap();
        assert!((u.u.coeffs - &expect.coeffs * (-c(1.0) / s)).norm() < 1e-12);
    }

    // u'' - 4 u = e^{-t}, u(0) = 0: u = (e^{-t} - e^{-2t}) / (1 - 4)
    #[test]
    fn boundary_solve_matches_collocation_oracle() {
        let b = HalfLineBasis::new(128, 1.0).unwrap();
        // theta = pi, xi' = sqrt(3), mu = 1 gives sigma = 2
        let m = LaplaceTypeModel::laplacian(2, 1, PI).unwrap();
        let p = pt(3f64.sqrt(), 1.0);
        let f = exp_mode(&b, c(1.0), &CVec::from_element(1, c(1.0))).unwrap().function;
        let u = boundary_symbol_solve(&m, &ProjectionBC::dirichlet(1), &p, &f, &CVec::zeros(1)).unwrap();
        let colloc = collocation_oracle(2.0, 20.0, 4000);
        for (t, v) in colloc.iter().step_by(200) {
            assert!((u.u.eval(*t)[0] - c(*v)).norm() < 1e-7, "t={t}");
        }
        assert!(u.residual < 1e-8);
    }

    // second-order finite differences with Richardson extrapolation on [0, len]
    fn collocation_oracle(sigma: f64, len: f64, cells: usize) -> Vec<(f64, f64)> {
        let solve = |m: usize| -> Vec<f64> {
            let h = len / m as f64;
            let n = m - 1;
            let (mut a, mut bd, mut cc, mut r) = (vec![1.0 / (h * h); n], vec![-2.0 / (h * h) - sigma * sigma; n], vec![1.0 / (h * h); n], vec![0.0; n]);
            for i in 0..n {
                r[i] = (-((i + 1) as f64 * h)).exp();
            }
            a[0] = 0.0;
            cc[n - 1] = 0.0;
            // Thomas algorithm
            for i in 1..n {
                let w = a[i] / bd[i - 1];
                bd[i] -= w * cc[i - 1];
                r[i] -= w * r[i - 1];
            }
            let mut x = vec![0.0; n];
            x[n - 1] = r[n - 1] / bd[n - 1];
            for i in (0..n - 1).rev() {
                x[i] = (r[i] - cc[i] * x[i + 1]) / bd[i];
            }
            let mut out = vec![0.0];
            out.extend(x);
            out.push(0.0);
            out
        };
        let coarse = solve(cells);
        let fine = solve(2 * cells);
        let h = len / cells as f64;
        (0..=cells).map(|i| (i as f64 * h, (4.0 * fine[2 * i] - coarse[i]) / 3.0)).collect()
    }

    #[test]
    fn e1_examples() {
        let g = EllipticityGrids::default();
        let r = check_e1(&LaplaceTypeModel::laplacian(2, 1, PI).unwrap(), &g).unwrap();
        assert!(r.pass && (r.min_sv - 1.0).abs() < 1e-12);
        let r = check_e1(&LaplaceTypeModel::laplacian(2, 1, 0.5 * PI).unwrap(), &g).unwrap();
        assert!(r.pass && (r.min_sv - 0.5f64.sqrt()).abs() < 1e-9, "{}", r.min_sv);
        let m0 = LaplaceTypeModel::negative_control(2, 1, 0.0, scalar_times_identity(1, |x| x[0] * x[0])).unwrap();
        let r = check_e1(&m0, &g).unwrap();
        assert!(!r.pass);
        let w = r.witness.unwrap();
        let resid = min_singular_value(&m0.interior_symbol(&w.xi, w.mu).unwrap());
        assert!(resid <= 1e-10);
    }

    #[test]
    fn pi2_examples() {
        let g = EllipticityGrids::default();
        let m = LaplaceTypeModel::laplacian(2, 1, PI).unwrap();
        let r = check_pi2(&m, &ProjectionBC::dirichlet(1), &g);
        assert!(r.pass, "{r:?}");
        assert!((r.details["reduced_min_sv"] - 1.0).abs() < 1e-14);
        let r = check_pi2(&m, &ProjectionBC::neumann(1), &g);
        assert!(r.pass, "{r:?}");
        let bad = ProjectionBC::robin(1, scalar_times_identity(1, |x| x.iter().map(|v| v * v).sum::<f64>().sqrt()));
        let r = check_pi2(&m, &bad, &g);
        assert!(!r.pass);
        assert_eq!(r.witness.unwrap().mu, 0.0);
    }

    #[test]
    fn pi3_examples() {
        let g = EllipticityGrids::default();
        let m = LaplaceTypeModel::laplacian(2, 1, PI).unwrap();
        let r = check_pi3(&m, &ProjectionBC::dirichlet(1), &g).unwrap();
        assert!(r.pass && (r.min_sv - 1.0).abs() < 1e-14);
        for theta in [0.3, PI / 2.0, PI, 4.0, 6.0] {
            let m2 = LaplaceTypeModel::laplacian(2, 2, theta).unwrap();
            let pi = CMat::from_row_slice(2, 2, &[c(1.0), c(2.0), c(0.0), c(0.0)]);
            let bc = ProjectionBC::projection(2, constant(pi), constant(CMat::identity(2, 2)));
            assert!(check_pi3(&m2, &bc, &g).unwrap().pass);
        }
        let notproj = ProjectionBC::projection(1, constant(CMat::identity(1, 1) * c(0.5)), constant(CMat::zeros(1, 1)));
        assert!(matches!(check_pi3(&m, &notproj, &g), Err(Error::NotIdempotent(_))));
    }

    #[test]
    fn limit_nullspace_aligns_with_rho_mode() {
        for theta in [PI / 4.0, PI / 2.0, PI, 1.5 * PI] {
            let m = LaplaceTypeModel::laplacian(2, 2, theta).unwrap();
            for n in [64, 128] {
                let ns = limit_nullspace(&m, &HalfLineBasis::new(n, 1.0).unwrap());
                assert_eq!(ns.dimension, 2);
                assert!(ns.misalignment < 1e-6, "theta={theta} n={n}: {}", ns.misalignment);
            }
            let r = limit_roots(&m);
            assert_eq!(r.len(), 1);
            assert!((r[0] - rho(theta)).norm() < 1e-14);
        }
    }

    #[test]
    fn general_condition_reproduces_projection_kind() {
        let m = LaplaceTypeModel::laplacian(2, 1, 0.7 * PI).unwrap();
        // S_0 = gamma_0, S_1 = gamma_1 + 0.5 gamma_0, Pi = diag(0, 1): Neumann-Robin
        let g = GeneralBc {
            ell: vec![1, 1],
            pi: constant(CMat::from_diagonal(&CVec::from_vec(vec![c(0.0), c(1.0)]))),
            s: Arc::new(|_| vec![CMat::from_column_slice(2, 1, &[c(1.0), c(0.5)]), CMat::from_column_slice(2, 1, &[c(0.0), c(1.0)])]),
        };
        let gen = ProjectionBC::general(1, g);
        let robin = ProjectionBC::robin(1, constant(CMat::identity(1, 1) * c(0.5)));
        let grids = EllipticityGrids::default();
        for k in 0..10 {
            let a = 0.15 * k as f64;
            let p = pt(a.cos(), a.sin());
            let rg = reduced_bc_matrix(&m, &gen, &p).unwrap();
            let rr = reduced_bc_matrix(&m, &robin, &p).unwrap();
            assert!((rg[(1, 0)] - rr[(0, 0)]).norm() < 1e-14 && rg[(0, 0)].norm() < 1e-14);
        }
        let a = check_pi2(&m, &gen, &grids);
        let b = check_pi2(&m, &robin, &grids);
        assert_eq!(a.pass, b.pass);
        assert!((a.details["reduced_min_sv"] - b.details["reduced_min_sv"]).abs() < 1e-12);
        assert!(check_pi3(&m, &gen, &grids).unwrap().pass);
    }

    #[test]
    fn general_condition_rejects_upper_blocks() {
        let g = GeneralBc {
            ell: vec![1, 1],
            pi: constant(CMat::from_row_slice(2, 2, &[c(1.0), c(1.0), c(0.0), c(0.0)])),
            s: Arc::new(|_| vec![CMat::from_column_slice(2, 1, &[c(1.0), c(0.0)]), CMat::from_column_slice(2, 1, &[c(0.0), c(1.0)])]),
        };
        assert!(ProjectionBC::general(1, g).validate_at(&[1.0]).is_err());
    }

    #[test]
    fn assembled_reports() {
        let g = EllipticityGrids::default();
        let m = LaplaceTypeModel::laplacian(2, 1, PI).unwrap();
        assert!(assemble_report(&m, &ProjectionBC::dirichlet(1), &g).unwrap().pass);
        let m0 = LaplaceTypeModel::negative_control(2, 1, 0.0, scalar_times_identity(1, |x| x[0] * x[0])).unwrap();
        assert!(!assemble_report(&m0, &ProjectionBC::dirichlet(1), &g).unwrap().pass);
        let bad = ProjectionBC::robin(1, scalar_times_identity(1, |x| x[0].abs()));
        assert!(!assemble_report(&m, &bad, &g).unwrap().pass);
    }
}
