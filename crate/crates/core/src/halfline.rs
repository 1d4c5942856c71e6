//! Functions and operators on the half-line, discretized in Laguerre functions
//! `phi_k(t) = sqrt(2 alpha) L_k(2 alpha t) e^{-alpha t}`.
//!
//! The basis is orthonormal in `L^2(R_+)`. Differentiation, multiplication by
//! `t` and the dilation generator `t d/dt + 1/2` have exact banded
//! representations; dilations themselves are computed by resampling at
//! Gauss-Laguerre nodes and re-projecting.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{c, CMat, CVec, C64};

/// Gauss-Laguerre rule for `int_0^inf f(x) dx` written as `sum w_i f(x_i)`, i.e.
/// the weights already carry the factor `e^{x_i}`.
#[derive(Debug, Clone)]
pub struct LaguerreQuadrature {
    pub nodes: Vec<f64>,
    pub scaled_weights: Vec<f64>,
}

/// Laguerre polynomials `L_k(x)` for `k = 0..n`, as mantissas sharing a
/// running log scale: `L_k = m_k * exp(s_k)`.
fn laguerre_scaled(n: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let mut m = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    if n == 0 {
        return (m, s);
    }
    let mut offset = 0.0;
    let mut prev = 0.0;
    let mut cur = 1.0;
    m.push(cur);
    s.push(offset);
    for k in 0..n - 1 {
        let kf = k as f64;
        let mut next = ((2.0 * kf + 1.0 - x) * cur - kf * prev) / (kf + 1.0);
        let big = next.abs().max(cur.abs());
        if big > 1e150 {
            cur /= big;
            next /= big;
            offset += big.ln();
        }
        prev = cur;
        cur = next;
        m.push(cur);
        s.push(offset);
    }
    (m, s)
}

/// Laguerre functions `L_k(x) e^{-x/2}` for `k = 0..n` at `x`.
pub fn laguerre_functions(n: usize, x: f64) -> Vec<f64> {
    let (m, s) = laguerre_scaled(n, x);
    m.iter().zip(&s).map(|(v, o)| v * (o - 0.5 * x).exp()).collect()
}

impl LaguerreQuadrature {
    /// Golub-Welsch nodes polished by Newton steps; weights from
    /// the Christoffel function `1 / sum_k L_k(x_i)^2`, evaluated in logs.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                2.0 * i as f64 + 1.0
            } else if i + 1 == j || j + 1 == i {
                i.max(j) as f64
            } else {
                0.0
            }
        });
        let mut nodes: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let nf = n as f64;
        for x in nodes.iter_mut() {
            for _ in 0..4 {
                let (m, _) = laguerre_scaled(n + 1, *x);
                // x L_n' = n (L_n - L_{n-1})
                let denom = nf * (m[n] - m[n - 1]);
                if denom == 0.0 {
                    break;
                }
                let step = *x * m[n] / denom;
                if !step.is_finite() {
                    break;
                }
                *x -= step;
            }
        }
        let scaled_weights = nodes
            .iter()
            .map(|&x| {
                // Christoffel function: 1/w = sum_k L_k(x)^2, summed in logs
                let (m, s) = laguerre_scaled(n, x);
                let top = s[n - 1];
                let sum: f64 = m.iter().zip(&s).map(|(v, o)| v * v * (2.0 * (o - top)).exp()).sum();
                (x - sum.ln() - 2.0 * top).exp()
            })
            .collect();
        Self { nodes, scaled_weights }
    }
}

/// Orthonormal Laguerre basis on `R_+` with scale `alpha`.
#[derive(Debug, Clone)]
pub struct HalfLineBasis {
    pub n_modes: usize,
    pub alpha: f64,
    /// Quadrature nodes in `t`.
    pub nodes: Vec<f64>,
    /// Quadrature weights in `t` (for `int f(t) dt`).
    pub weights: Vec<f64>,
    /// `phi_k(t_i)`, rows = nodes, cols = modes.
    pub values: Arc<DMatrix<f64>>,
}

impl PartialEq for HalfLineBasis {
    fn eq(&self, other: &Self) -> bool {
        self.n_modes == other.n_modes && self.alpha == other.alpha && self.nodes.len() == other.nodes.len()
    }
}

pub const DEFAULT_MODES: usize = 128;

impl HalfLineBasis {
    pub fn new(n_modes: usize, alpha: f64) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::InvalidArgument("need at least one mode".into()));
        }
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument("scale alpha must be positive".into()));
        }
        let q = LaguerreQuadrature::new(2 * n_modes);
        let nodes: Vec<f64> = q.nodes.iter().map(|x| x / (2.0 * alpha)).collect();
        let weights: Vec<f64> = q.scaled_weights.iter().map(|w| w / (2.0 * alpha)).collect();
        let norm = (2.0 * alpha).sqrt();
        let mut values = DMatrix::zeros(nodes.len(), n_modes);
        for (i, x) in q.nodes.iter().enumerate() {
            for (k, v) in laguerre_functions(n_modes, *x).into_iter().enumerate() {
                values[(i, k)] = norm * v;
            }
        }
        Ok(Self { n_modes, alpha, nodes, weights, values: Arc::new(values) })
    }

    pub fn default_basis() -> Self {
        Self::new(DEFAULT_MODES, 1.0).expect("valid default basis")
    }

    /// `phi_k(t)` for all modes.
    pub fn eval_modes(&self, t: f64) -> Vec<f64> {
        let norm = (2.0 * self.alpha).sqrt();
        laguerre_functions(self.n_modes, 2.0 * self.alpha * t).into_iter().map(|v| v * norm).collect()
    }

    /// Gram matrix under the quadrature.
    pub fn gram(&self) -> DMatrix<f64> {
        let mut wv = (*self.values).clone();
        for (i, w) in self.weights.iter().enumerate() {
            wv.row_mut(i).scale_mut(*w);
        }
        self.values.transpose() * wv
    }

    /// Projection of samples at the quadrature nodes.
    pub fn project_samples(&self, samples: &CMat) -> CMat {
        let mut ws = samples.clone();
        for (i, w) in self.weights.iter().enumerate() {
            ws.row_mut(i).scale_mut(*w);
        }
        self.values.map(c).transpose() * ws
    }

    /// Projection of `t -> g(t)` (value dimension `dim`).
    pub fn project<F>(&self, dim: usize, g: F) -> CMat
    where
        F: Fn(f64) -> CVec,
    {
        let mut samples = CMat::zeros(self.nodes.len(), dim);
        for (i, &t) in self.nodes.iter().enumerate() {
            let v = g(t);
            for l in 0..dim {
                samples[(i, l)] = v[l];
            }
        }
        self.project_samples(&samples)
    }

    /// Exact matrix of `d/dt` on the span (upper triangular).
    pub fn derivative_matrix(&self) -> CMat {
        let a = self.alpha;
        CMat::from_fn(self.n_modes, self.n_modes, |j, k| {
            if j == k {
                c(-a)
            } else if j < k {
                c(-2.0 * a)
            } else {
                c(0.0)
            }
        })
    }

    /// Matrix of multiplication by `t`, extended to `n_modes + extra` rows
    /// (exact on the span when `extra >= 1`).
    pub fn multiply_t_matrix(&self, extra: usize) -> CMat {
        let n = self.n_modes;
        let s = 1.0 / (2.0 * self.alpha);
        CMat::from_fn(n + extra, n, |j, k| {
            let kf = k as f64;
            if j == k {
                c(s * (2.0 * kf + 1.0))
            } else if j == k + 1 {
                c(-s * (kf + 1.0))
            } else if j + 1 == k {
                c(-s * kf)
            } else {
                c(0.0)
            }
        })
    }

    /// Matrix of `t d/dt + 1/2` (skew-symmetric tridiagonal), `n_modes + extra` rows.
    pub fn dilation_generator(&self, extra: usize) -> CMat {
        let n = self.n_modes;
        CMat::from_fn(n + extra, n, |j, k| {
            let kf = k as f64;
            if j == k + 1 {
                c(0.5 * (kf + 1.0))
            } else if j + 1 == k {
                c(-0.5 * kf)
            } else {
                c(0.0)
            }
        })
    }

    /// `phi_k(0) = sqrt(2 alpha)`.
    pub fn endpoint_values(&self) -> Vec<f64> {
        vec![(2.0 * self.alpha).sqrt(); self.n_modes]
    }

    /// Exact Laguerre coefficients of `e^{-sigma t}`:
    /// `sqrt(2 alpha) (sigma - alpha)^k / (sigma + alpha)^{k+1}`.
    pub fn exp_coefficients(&self, sigma: C64) -> CVec {
        let a = c(self.alpha);
        let ratio = (sigma - a) / (sigma + a);
        let mut coef = c((2.0 * self.alpha).sqrt()) / (sigma + a);
        CVec::from_fn(self.n_modes, |_, _| {
            let v = coef;
            coef *= ratio;
            v
        })
    }
}

/// A `C^L`-valued function on the half-line, stored as Laguerre coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfLineFunction {
    pub basis: HalfLineBasis,
    /// `N x L` coefficient matrix.
    pub coeffs: CMat,
}

impl HalfLineFunction {
    pub fn new(basis: HalfLineBasis, coeffs: CMat) -> Result<Self> {
        if coeffs.nrows() != basis.n_modes {
            return Err(Error::Dimension(format!(
                "{} coefficient rows for {} modes",
                coeffs.nrows(),
                basis.n_modes
            )));
        }
        if coeffs.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coefficients".into()));
        }
        Ok(Self { basis, coeffs })
    }

    pub fn zeros(basis: &HalfLineBasis, dim: usize) -> Self {
        Self { basis: basis.clone(), coeffs: CMat::zeros(basis.n_modes, dim) }
    }

    pub fn from_fn<F>(basis: &HalfLineBasis, dim: usize, g: F) -> Self
    where
        F: Fn(f64) -> CVec,
    {
        Self { basis: basis.clone(), coeffs: basis.project(dim, g) }
    }

    pub fn scalar_fn<F>(basis: &HalfLineBasis, g: F) -> Self
    where
        F: Fn(f64) -> C64,
    {
        Self::from_fn(basis, 1, |t| CVec::from_element(1, g(t)))
    }

    pub fn dim(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn eval(&self, t: f64) -> CVec {
        let phi = self.basis.eval_modes(t);
        CVec::from_fn(self.dim(), |l, _| (0..phi.len()).map(|k| self.coeffs[(k, l)] * phi[k]).sum())
    }

    /// Samples at the basis quadrature nodes (rows = nodes).
    pub fn node_values(&self) -> CMat {
        self.basis.values.map(c) * &self.coeffs
    }

    /// L^2 norm; equals the Euclidean norm of the coefficients.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.norm()
    }

    pub fn map_coeffs(&self, m: &CMat) -> Self {
        let mut out = m * &self.coeffs;
        if out.nrows() > self.basis.n_modes {
            out = out.rows(0, self.basis.n_modes).into_owned();
        }
        Self { basis: self.basis.clone(), coeffs: out }
    }

    pub fn axpy(&self, a: C64, other: &Self) -> Self {
        Self { basis: self.basis.clone(), coeffs: &self.coeffs + &other.coeffs * a }
    }

    /// Vectorization, component-major: index `l * N + k`.
    pub fn to_vec(&self) -> CVec {
        CVec::from_iterator(self.coeffs.len(), self.coeffs.iter().copied())
    }

    pub fn from_vec(basis: &HalfLineBasis, dim: usize, v: &CVec) -> Self {
        Self { basis: basis.clone(), coeffs: CMat::from_column_slice(basis.n_modes, dim, v.as_slice()) }
    }
}

/// Dilation `(kappa_lambda u)(t) = lambda^{1/2} u(lambda t)`, resampled and projected.
pub fn dilation(u: &HalfLineFunction, lambda: f64) -> Result<HalfLineFunction> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("dilation factor must be positive, got {lambda}")));
    }
    if lambda == 1.0 {
        return Ok(u.clone());
    }
    Ok(HalfLineFunction { basis: u.basis.clone(), coeffs: dilation_matrix(&u.basis, lambda) * &u.coeffs })
}

/// Matrix of the projected dilation on the span.
pub fn dilation_matrix(basis: &HalfLineBasis, lambda: f64) -> CMat {
    let n = basis.n_modes;
    let mut samples = CMat::zeros(basis.nodes.len(), n);
    let s = lambda.sqrt();
    for (i, &t) in basis.nodes.iter().enumerate() {
        let phi = basis.eval_modes(lambda * t);
        for k in 0..n {
            samples[(i, k)] = c(s * phi[k]);
        }
    }
    basis.project_samples(&samples)
}

/// `Theta_ell = prod_{k=0}^{ell-1} (t d/dt + 1/2 - k)`.
pub fn theta(u: &HalfLineFunction, ell: usize) -> Result<HalfLineFunction> {
    if ell == 0 {
        return Err(Error::InvalidArgument("ell must be at least 1".into()));
    }
    let n = u.basis.n_modes;
    let big = HalfLineBasis { n_modes: n + ell, ..u.basis.clone() };
    let gen = big.dilation_generator(0);
    let mut v = CMat::zeros(n + ell, u.dim());
    v.rows_mut(0, n).copy_from(&u.coeffs);
    for k in 0..ell {
        v = &gen * &v - &v * c(k as f64);
    }
    Ok(HalfLineFunction { basis: u.basis.clone(), coeffs: v.rows(0, n).into_owned() })
}

/// `gamma_j u = (d/dt)^j u (0)`.
pub fn gamma_trace(u: &HalfLineFunction, j: usize) -> CVec {
    let d = u.basis.derivative_matrix();
    let mut v = u.coeffs.clone();
    for _ in 0..j {
        v = &d * v;
    }
    let e = u.basis.endpoint_values();
    CVec::from_fn(u.dim(), |l, _| (0..e.len()).map(|k| v[(k, l)] * e[k]).sum())
}

/// `d/dt u`.
pub fn derivative_plus(u: &HalfLineFunction) -> HalfLineFunction {
    u.map_coeffs(&u.basis.derivative_matrix())
}

/// `t^j u`, projected to the span.
pub fn multiply_xn(u: &HalfLineFunction, j: usize) -> HalfLineFunction {
    let n = u.basis.n_modes;
    let big = HalfLineBasis { n_modes: n + j, ..u.basis.clone() };
    let m = big.multiply_t_matrix(0);
    let mut v = CMat::zeros(n + j, u.dim());
    v.rows_mut(0, n).copy_from(&u.coeffs);
    for _ in 0..j {
        v = &m * v;
    }
    HalfLineFunction { basis: u.basis.clone(), coeffs: v.rows(0, n).into_owned() }
}

/// Which block of a [`HalfLineOperator`] an index range belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BlockRole {
    Interior,
    Poisson,
    Trace,
    Boundary,
}

/// Discretized operator `C^{N L0} + C^{M0} -> C^{N L1} + C^{M1}`.
///
/// Function parts come first and are component-major, as in
/// [`HalfLineFunction::to_vec`].
#[derive(Debug, Clone)]
pub struct HalfLineOperator {
    pub basis: HalfLineBasis,
    /// `(L0, M0)`.
    pub dims_in: (usize, usize),
    /// `(L1, M1)`.
    pub dims_out: (usize, usize),
    pub matrix: CMat,
}

impl HalfLineOperator {
    pub fn new(basis: HalfLineBasis, dims_in: (usize, usize), dims_out: (usize, usize), matrix: CMat) -> Result<Self> {
        let n = basis.n_modes;
        let shape = (n * dims_out.0 + dims_out.1, n * dims_in.0 + dims_in.1);
        if matrix.shape() != shape {
            return Err(Error::Dimension(format!("operator matrix is {:?}, weight requires {:?}", matrix.shape(), shape)));
        }
        Ok(Self { basis, dims_in, dims_out, matrix })
    }

    pub fn zeros(basis: &HalfLineBasis, dims_in: (usize, usize), dims_out: (usize, usize)) -> Self {
        let n = basis.n_modes;
        let matrix = CMat::zeros(n * dims_out.0 + dims_out.1, n * dims_in.0 + dims_in.1);
        Self { basis: basis.clone(), dims_in, dims_out, matrix }
    }

    /// `(row offset, rows, col offset, cols)` of a block.
    pub fn block_range(&self, role: BlockRole) -> (usize, usize, usize, usize) {
        let n = self.basis.n_modes;
        let (fi, fo) = (n * self.dims_in.0, n * self.dims_out.0);
        match role {
            BlockRole::Interior => (0, fo, 0, fi),
            BlockRole::Poisson => (0, fo, fi, self.dims_in.1),
            BlockRole::Trace => (fo, self.dims_out.1, 0, fi),
            BlockRole::Boundary => (fo, self.dims_out.1, fi, self.dims_in.1),
        }
    }

    pub fn block(&self, role: BlockRole) -> CMat {
        let (r, nr, c0, nc) = self.block_range(role);
        self.matrix.view((r, c0), (nr, nc)).into_owned()
    }

    pub fn set_block(&mut self, role: BlockRole, m: &CMat) -> Result<()> {
        let (r, nr, c0, nc) = self.block_range(role);
        if m.shape() != (nr, nc) {
            return Err(Error::Dimension(format!("{role:?} block is {nr}x{nc}, got {:?}", m.shape())));
        }
        self.matrix.view_mut((r, c0), (nr, nc)).copy_from(m);
        Ok(())
    }

    pub fn apply(&self, u: &HalfLineFunction, v: &CVec) -> Result<(HalfLineFunction, CVec)> {
        if u.dim() != self.dims_in.0 || v.len() != self.dims_in.1 || u.basis != self.basis {
            return Err(Error::Dimension(format!(
                "input ({}, {}) does not match operator weight {:?}",
                u.dim(),
                v.len(),
                self.dims_in
            )));
        }
        let mut x = CVec::zeros(self.matrix.ncols());
        let fu = u.to_vec();
        x.rows_mut(0, fu.len()).copy_from(&fu);
        x.rows_mut(fu.len(), v.len()).copy_from(v);
        let y = &self.matrix * x;
        let nf = self.basis.n_modes * self.dims_out.0;
        let f = HalfLineFunction::from_vec(&self.basis, self.dims_out.0, &y.rows(0, nf).into_owned());
        Ok((f, y.rows(nf, self.dims_out.1).into_owned()))
    }

    pub fn compose(&self, rhs: &Self) -> Result<Self> {
        if self.dims_in != rhs.dims_out || self.basis != rhs.basis {
            return Err(Error::NotComposable(format!("{:?} after {:?}", self.dims_in, rhs.dims_out)));
        }
        Ok(Self { basis: self.basis.clone(), dims_in: rhs.dims_in, dims_out: self.dims_out, matrix: &self.matrix * &rhs.matrix })
    }

    pub fn adjoint(&self) -> Self {
        Self { basis: self.basis.clone(), dims_in: self.dims_out, dims_out: self.dims_in, matrix: self.matrix.adjoint() }
    }
}

/// Block-diagonal copy of a scalar mode matrix over `dim` components.
pub fn block_diag(m: &CMat, dim: usize) -> CMat {
    let (r, c0) = m.shape();
    let mut out = CMat::zeros(r * dim, c0 * dim);
    for l in 0..dim {
        out.view_mut((l * r, l * c0), (r, c0)).copy_from(m);
    }
    out
}

/// Decaying exponential mode with its projection error.
#[derive(Debug, Clone)]
pub struct ExpMode {
    pub function: HalfLineFunction,
    /// `||e^{-sigma t} z - P e^{-sigma t} z|| / ||e^{-sigma t} z||`.
    pub relative_projection_error: f64,
}

/// Projection of `t -> e^{-sigma t} z`.
pub fn exp_mode(basis: &HalfLineBasis, sigma: C64, z: &CVec) -> Result<ExpMode> {
    if !(sigma.re > 0.0) {
        return Err(Error::NoDecayingMode(sigma.re));
    }
    let e = basis.exp_coefficients(sigma);
    let coeffs = &e * z.transpose();
    let exact_sq = z.norm_squared() / (2.0 * sigma.re);
    let proj_sq = coeffs.norm_squared();
    let err = if exact_sq > 0.0 { ((exact_sq - proj_sq).max(0.0) / exact_sq).sqrt() } else { 0.0 };
    Ok(ExpMode { function: HalfLineFunction { basis: basis.clone(), coeffs }, relative_projection_error: err })
}

/// Summary used by reports and CSV exports.
#[derive(Debug, Clone, Serialize)]
pub struct SampledFunction {
    pub t: Vec<f64>,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl HalfLineFunction {
    pub fn sample(&self, t: &[f64]) -> SampledFunction {
        let mut re = Vec::with_capacity(t.len());
        let mut im = Vec::with_capacity(t.len());
        for &x in t {
            let v = self.eval(x);
            re.push(v.iter().map(|z| z.re).collect());
            im.push(v.iter().map(|z| z.im).collect());
        }
        SampledFunction { t: t.to_vec(), re, im }
    }
}
