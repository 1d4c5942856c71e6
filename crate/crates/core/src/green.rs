//! Symbol-kernels of Poisson, trace and singular Green symbols, their
//! twisting, Green blocks at a fixed parameter point, `Tr_+`, the truncated
//! operator `op^+` and the order reductions `lambda^d_-`.
//!
//! Kernels at a fixed point come in three representations. Exponential
//! polynomials `C t^p s^q e^{-a t - b s}` are composed, adjoined and traced in
//! closed form; arbitrary closures are handled by quadrature; anything else is
//! a coefficient matrix on a [`HalfLineBasis`].

use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::halfline::{block_diag, dilation_matrix, HalfLineBasis, HalfLineFunction, HalfLineOperator, LaguerreQuadrature};
use crate::linalg::{c, CMat, CVec, C64, I};
use crate::symbol::ParamPoint;

/// Block sizes `(L0, M0) -> (L1, M1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WeightDatum {
    pub l0: usize,
    pub m0: usize,
    pub l1: usize,
    pub m1: usize,
}

impl WeightDatum {
    pub fn new(l0: usize, m0: usize, l1: usize, m1: usize) -> Self {
        Self { l0, m0, l1, m1 }
    }

    /// `self` can act after `rhs`.
    pub fn composable_with(&self, rhs: &Self) -> bool {
        self.l0 == rhs.l1 && self.m0 == rhs.m1
    }

    pub fn adjoint(&self) -> Self {
        Self { l0: self.l1, m0: self.m1, l1: self.l0, m1: self.m0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KernelKind {
    Poisson,
    Trace,
    Green,
}

/// `coeff t^p s^q e^{-a t - b s}`. Poisson terms have `q = 0, b = 0`, trace
/// terms `p = 0, a = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpTerm {
    pub coeff: CMat,
    pub p: u32,
    pub q: u32,
    pub a: C64,
    pub b: C64,
}

impl ExpTerm {
    pub fn poisson(coeff: CMat, p: u32, a: C64) -> Self {
        Self { coeff, p, q: 0, a, b: c(0.0) }
    }

    pub fn trace(coeff: CMat, q: u32, b: C64) -> Self {
        Self { coeff, p: 0, q, a: c(0.0), b }
    }

    pub fn green(coeff: CMat, p: u32, q: u32, a: C64, b: C64) -> Self {
        Self { coeff, p, q, a, b }
    }

    fn eval(&self, t: f64, s: f64) -> CMat {
        let f = t.powi(self.p as i32) * s.powi(self.q as i32);
        let e = (-self.a * t - self.b * s).exp();
        &self.coeff * (e * f)
    }
}

pub type KernelFn = Arc<dyn Fn(f64, f64) -> CMat + Send + Sync>;

#[derive(Clone)]
pub enum KernelRepr {
    ExpPoly(Vec<ExpTerm>),
    /// `(t, s) -> matrix`; Poisson kernels ignore `s`, trace kernels ignore `t`.
    Function(KernelFn),
    /// Laguerre coefficients, component-major: Green `N rows x N cols`,
    /// Poisson `N rows x cols`, trace `rows x N cols`.
    Discrete { basis: HalfLineBasis, matrix: CMat },
}

impl std::fmt::Debug for KernelRepr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelRepr::ExpPoly(t) => f.debug_tuple("ExpPoly").field(t).finish(),
            KernelRepr::Function(_) => f.write_str("Function(..)"),
            KernelRepr::Discrete { matrix, .. } => write!(f, "Discrete({}x{})", matrix.nrows(), matrix.ncols()),
        }
    }
}

/// A Poisson, trace or Green kernel at a fixed parameter point.
#[derive(Debug, Clone)]
pub struct KernelValue {
    pub kind: KernelKind,
    pub rows: usize,
    pub cols: usize,
    pub twisted: bool,
    pub repr: KernelRepr,
}

impl KernelValue {
    pub fn exp_poly(kind: KernelKind, rows: usize, cols: usize, terms: Vec<ExpTerm>) -> Result<Self> {
        for t in &terms {
            if t.coeff.shape() != (rows, cols) {
                return Err(Error::Dimension(format!("term coefficient {:?}, expected {rows}x{cols}", t.coeff.shape())));
            }
            let ok = match kind {
                KernelKind::Poisson => t.q == 0 && t.b == c(0.0),
                KernelKind::Trace => t.p == 0 && t.a == c(0.0),
                KernelKind::Green => true,
            };
            if !ok {
                return Err(Error::InvalidArgument(format!("{kind:?} term depends on the wrong variable")));
            }
        }
        Ok(Self { kind, rows, cols, twisted: false, repr: KernelRepr::ExpPoly(terms) })
    }

    pub fn function<F>(kind: KernelKind, rows: usize, cols: usize, f: F) -> Self
    where
        F: Fn(f64, f64) -> CMat + Send + Sync + 'static,
    {
        Self { kind, rows, cols, twisted: false, repr: KernelRepr::Function(Arc::new(f)) }
    }

    pub fn zero(kind: KernelKind, rows: usize, cols: usize) -> Self {
        Self { kind, rows, cols, twisted: false, repr: KernelRepr::ExpPoly(Vec::new()) }
    }

    pub fn with_twisted(mut self, twisted: bool) -> Self {
        self.twisted = twisted;
        self
    }

    /// Scalar `e^{-sigma t}` Poisson kernel.
    pub fn exp_poisson(sigma: C64) -> Self {
        Self::exp_poly(KernelKind::Poisson, 1, 1, vec![ExpTerm::poisson(CMat::identity(1, 1), 0, sigma)]).unwrap()
    }

    /// Scalar `e^{-sigma s}` trace kernel.
    pub fn exp_trace(sigma: C64) -> Self {
        Self::exp_poly(KernelKind::Trace, 1, 1, vec![ExpTerm::trace(CMat::identity(1, 1), 0, sigma)]).unwrap()
    }

    /// Scalar `coeff e^{-a t - b s}` Green kernel.
    pub fn exp_green(coeff: C64, a: C64, b: C64) -> Self {
        Self::exp_poly(KernelKind::Green, 1, 1, vec![ExpTerm::green(CMat::from_element(1, 1, coeff), 0, 0, a, b)])
            .unwrap()
    }

    pub fn is_exp_poly(&self) -> bool {
        matches!(self.repr, KernelRepr::ExpPoly(_))
    }

    pub fn eval(&self, t: f64, s: f64) -> CMat {
        match &self.repr {
            KernelRepr::ExpPoly(terms) => {
                let mut out = CMat::zeros(self.rows, self.cols);
                for term in terms {
                    out += term.eval(t, s);
                }
                out
            }
            KernelRepr::Function(f) => f(t, s),
            KernelRepr::Discrete { basis, matrix } => {
                let n = basis.n_modes;
                let pt = CVec::from_vec(basis.eval_modes(t).into_iter().map(c).collect());
                let ps = CVec::from_vec(basis.eval_modes(s).into_iter().map(c).collect());
                CMat::from_fn(self.rows, self.cols, |i, j| match self.kind {
                    KernelKind::Green => {
                        let blk = matrix.view((i * n, j * n), (n, n));
                        (pt.transpose() * blk * &ps)[(0, 0)]
                    }
                    KernelKind::Poisson => (pt.transpose() * matrix.view((i * n, j), (n, 1)))[(0, 0)],
                    KernelKind::Trace => (matrix.view((i, j * n), (1, n)) * &ps)[(0, 0)],
                })
            }
        }
    }

    /// Samples of entry `(i, j)` on a grid, as `(t, s, value)` rows.
    pub fn sample_entry(&self, i: usize, j: usize, ts: &[f64], ss: &[f64]) -> Vec<(f64, f64, C64)> {
        let mut out = Vec::with_capacity(ts.len() * ss.len());
        for &t in ts {
            for &s in ss {
                out.push((t, s, self.eval(t, s)[(i, j)]));
            }
        }
        out
    }

    /// Coefficient matrix on `basis` (shapes as in [`KernelRepr::Discrete`]).
    pub fn discretize(&self, basis: &HalfLineBasis) -> Result<CMat> {
        let n = basis.n_modes;
        let (nr, nc) = match self.kind {
            KernelKind::Green => (n * self.rows, n * self.cols),
            KernelKind::Poisson => (n * self.rows, self.cols),
            KernelKind::Trace => (self.rows, n * self.cols),
        };
        match &self.repr {
            KernelRepr::ExpPoly(terms) => {
                let mut out = CMat::zeros(nr, nc);
                for term in terms {
                    let u = match self.kind {
                        KernelKind::Trace => CVec::from_element(1, c(1.0)),
                        _ => exp_poly_coefficients(basis, term.p, term.a)?,
                    };
                    let v = match self.kind {
                        KernelKind::Poisson => CVec::from_element(1, c(1.0)),
                        _ => exp_poly_coefficients(basis, term.q, term.b)?,
                    };
                    let outer = &u * v.transpose();
                    let (br, bc) = outer.shape();
                    for i in 0..self.rows {
                        for j in 0..self.cols {
                            let cij = term.coeff[(i, j)];
                            if cij != c(0.0) {
                                let mut blk = out.view_mut((i * br, j * bc), (br, bc));
                                blk += &outer * cij;
                            }
                        }
                    }
                }
                Ok(out)
            }
            KernelRepr::Function(f) => {
                let q = basis.nodes.len();
                let phi = basis.values.map(c);
                let mut wphi = phi.clone();
                for (i, w) in basis.weights.iter().enumerate() {
                    wphi.row_mut(i).scale_mut(*w);
                }
                let mut out = CMat::zeros(nr, nc);
                match self.kind {
                    KernelKind::Green => {
                        let samples: Vec<CMat> = (0..q * q)
                            .into_par_iter()
                            .map(|idx| f(basis.nodes[idx / q], basis.nodes[idx % q]))
                            .collect();
                        for i in 0..self.rows {
                            for j in 0..self.cols {
                                let s = CMat::from_fn(q, q, |a, b| samples[a * q + b][(i, j)]);
                                let blk = wphi.transpose() * s * &wphi;
                                out.view_mut((i * n, j * n), (n, n)).copy_from(&blk);
                            }
                        }
                    }
                    KernelKind::Poisson => {
                        let samples: Vec<CMat> = basis.nodes.iter().map(|&t| f(t, 0.0)).collect();
                        for i in 0..self.rows {
                            for j in 0..self.cols {
                                let s = CVec::from_fn(q, |a, _| samples[a][(i, j)]);
                                out.view_mut((i * n, j), (n, 1)).copy_from(&(wphi.transpose() * s));
                            }
                        }
                    }
                    KernelKind::Trace => {
                        let samples: Vec<CMat> = basis.nodes.iter().map(|&s| f(0.0, s)).collect();
                        for i in 0..self.rows {
                            for j in 0..self.cols {
                                let s = CVec::from_fn(q, |a, _| samples[a][(i, j)]);
                                out.view_mut((i, j * n), (1, n)).copy_from(&(s.transpose() * &wphi));
                            }
                        }
                    }
                }
                Ok(out)
            }
            KernelRepr::Discrete { basis: b, matrix } => {
                if b != basis {
                    return Err(Error::Dimension("kernel is discretized on a different basis".into()));
                }
                Ok(matrix.clone())
            }
        }
    }

    /// Checks that `t^m |k(t, t)|` stays bounded for `m <= 8` on a sample grid.
    pub fn verify_decay(&self) -> Result<()> {
        let grid: Vec<f64> = (0..=400).map(|i| 0.25 * i as f64).collect();
        let mut worst = 0.0f64;
        for m in 0..=8 {
            let vals: Vec<f64> = grid
                .iter()
                .map(|&t| t.powi(m) * self.eval(t, t).iter().map(|z| z.norm()).fold(0.0, f64::max))
                .collect();
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonDecay(f64::INFINITY));
            }
            let peak = vals.iter().copied().fold(0.0, f64::max);
            let end = *vals.last().unwrap();
            if peak > 0.0 {
                worst = worst.max(end / peak);
            }
        }
        if worst > 1e-3 {
            return Err(Error::NonDecay(worst));
        }
        Ok(())
    }
}

/// Laguerre coefficients of `t^p e^{-a t}`.
pub fn exp_poly_coefficients(basis: &HalfLineBasis, p: u32, a: C64) -> Result<CVec> {
    if !(a.re > 0.0) {
        return Err(Error::NonDecay(a.re));
    }
    let n = basis.n_modes;
    let p = p as usize;
    let big = HalfLineBasis { n_modes: n + p, ..basis.clone() };
    let mut v = big.exp_coefficients(a);
    if p > 0 {
        let m = big.multiply_t_matrix(0);
        for _ in 0..p {
            v = &m * v;
        }
    }
    Ok(v.rows(0, n).into_owned())
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `int_0^inf r^n e^{-z r} dr`.
fn gamma_moment(n: u32, z: C64) -> Result<C64> {
    if !(z.re > 0.0) {
        return Err(Error::NonDecay(z.re));
    }
    Ok(c(factorial(n)) / z.powu(n + 1))
}

/// Integrates the `s`-variable of `left` against the `t`-variable of `right`.
fn contract(left: &ExpTerm, right: &ExpTerm) -> Result<ExpTerm> {
    let m = gamma_moment(left.q + right.p, left.b + right.a)?;
    Ok(ExpTerm { coeff: &left.coeff * &right.coeff * m, p: left.p, q: right.q, a: left.a, b: right.b })
}

fn outer(left: &ExpTerm, right: &ExpTerm) -> ExpTerm {
    ExpTerm { coeff: &left.coeff * &right.coeff, p: left.p, q: right.q, a: left.a, b: right.b }
}

fn terms(k: &KernelValue) -> Option<&Vec<ExpTerm>> {
    match &k.repr {
        KernelRepr::ExpPoly(t) => Some(t),
        _ => None,
    }
}

/// Symbol-level kernel: a map from parameter points to kernel values.
#[derive(Clone)]
pub struct SymbolKernel {
    pub kind: KernelKind,
    pub order: f64,
    pub regularity: f64,
    pub rows: usize,
    pub cols: usize,
    pub twisted: bool,
    pub eval: Arc<dyn Fn(&ParamPoint) -> KernelValue + Send + Sync>,
}

impl SymbolKernel {
    pub fn new<F>(kind: KernelKind, order: f64, regularity: f64, dims: (usize, usize), twisted: bool, f: F) -> Self
    where
        F: Fn(&ParamPoint) -> KernelValue + Send + Sync + 'static,
    {
        Self { kind, order, regularity, rows: dims.0, cols: dims.1, twisted, eval: Arc::new(f) }
    }

    pub fn at(&self, pt: &ParamPoint) -> Result<KernelValue> {
        let v = (self.eval)(pt);
        if v.kind != self.kind || (v.rows, v.cols) != (self.rows, self.cols) {
            return Err(Error::Dimension(format!(
                "kernel value {:?} {}x{} does not match declared {:?} {}x{}",
                v.kind, v.rows, v.cols, self.kind, self.rows, self.cols
            )));
        }
        Ok(v.with_twisted(self.twisted))
    }
}

fn twist_factor(kind: KernelKind, bracket: f64) -> f64 {
    match kind {
        KernelKind::Green => bracket,
        _ => bracket.sqrt(),
    }
}

fn rescale(k: &KernelValue, lambda: f64) -> Result<KernelRepr> {
    // k(t, s) -> f(lambda) k(lambda t, lambda s)
    let f = twist_factor(k.kind, lambda);
    Ok(match &k.repr {
        KernelRepr::ExpPoly(terms) => KernelRepr::ExpPoly(
            terms
                .iter()
                .map(|t| ExpTerm {
                    coeff: &t.coeff * c(f * lambda.powi((t.p + t.q) as i32)),
                    p: t.p,
                    q: t.q,
                    a: t.a * lambda,
                    b: t.b * lambda,
                })
                .collect(),
        ),
        KernelRepr::Function(g) => {
            let g = g.clone();
            KernelRepr::Function(Arc::new(move |t, s| g(lambda * t, lambda * s) * c(f)))
        }
        KernelRepr::Discrete { basis, matrix } => {
            let fwd = dilation_matrix(basis, lambda);
            let back = dilation_matrix(basis, 1.0 / lambda);
            let m = match k.kind {
                KernelKind::Green => block_diag(&fwd, k.rows) * matrix * block_diag(&back, k.cols),
                KernelKind::Poisson => block_diag(&fwd, k.rows) * matrix,
                KernelKind::Trace => matrix * block_diag(&back, k.cols),
            };
            KernelRepr::Discrete { basis: basis.clone(), matrix: m }
        }
    })
}

/// Twisted form `k = [xi',mu]^{1/2} k'([xi',mu] t)` (Poisson, trace) or
/// `g = [xi',mu] g'([xi',mu] t, [xi',mu] s)` (Green).
pub fn twist(k: &KernelValue, pt: &ParamPoint) -> Result<KernelValue> {
    if k.twisted {
        return Err(Error::InvalidArgument("kernel is already twisted".into()));
    }
    Ok(KernelValue { repr: rescale(k, pt.bracket())?, twisted: true, ..k.clone() })
}

pub fn untwist(k: &KernelValue, pt: &ParamPoint) -> Result<KernelValue> {
    if !k.twisted {
        return Err(Error::InvalidArgument("kernel is not twisted".into()));
    }
    Ok(KernelValue { repr: rescale(k, 1.0 / pt.bracket())?, twisted: false, ..k.clone() })
}

pub type BoundarySymbolFn = Arc<dyn Fn(&ParamPoint) -> CMat + Send + Sync>;

/// Singular Green block `[[g, k], [t, q]]` with type-`r` lists
/// `g = sum_j g_j d^j`, `t = sum_j t_j d^j`.
#[derive(Clone)]
pub struct GreenBlock {
    pub weight: WeightDatum,
    pub order: f64,
    pub type_r: usize,
    pub regularity: f64,
    pub g: Vec<SymbolKernel>,
    pub k: Option<SymbolKernel>,
    pub t: Vec<SymbolKernel>,
    pub q: Option<BoundarySymbolFn>,
}

impl GreenBlock {
    pub fn new(
        weight: WeightDatum,
        order: f64,
        regularity: f64,
        g: Vec<SymbolKernel>,
        k: Option<SymbolKernel>,
        t: Vec<SymbolKernel>,
        q: Option<BoundarySymbolFn>,
    ) -> Result<Self> {
        let type_r = g.len().max(t.len()).saturating_sub(1);
        let check = |s: &SymbolKernel, kind: KernelKind, dims: (usize, usize)| {
            if s.kind != kind || (s.rows, s.cols) != dims {
                Err(Error::Dimension(format!("{kind:?} kernel must be {dims:?}, got {:?}", (s.rows, s.cols))))
            } else {
                Ok(())
            }
        };
        for s in &g {
            check(s, KernelKind::Green, (weight.l1, weight.l0))?;
        }
        if let Some(s) = &k {
            check(s, KernelKind::Poisson, (weight.l1, weight.m0))?;
        }
        for s in &t {
            check(s, KernelKind::Trace, (weight.m1, weight.l0))?;
        }
        Ok(Self { weight, order, type_r, regularity, g, k, t, q })
    }

    pub fn at(&self, pt: &ParamPoint) -> Result<BlockValue> {
        let g = self.g.iter().map(|s| s.at(pt)).collect::<Result<Vec<_>>>()?;
        let t = self.t.iter().map(|s| s.at(pt)).collect::<Result<Vec<_>>>()?;
        let k = self.k.as_ref().map(|s| s.at(pt)).transpose()?;
        let q = match &self.q {
            Some(f) => {
                let m = f(pt);
                if m.shape() != (self.weight.m1, self.weight.m0) {
                    return Err(Error::Dimension(format!("boundary symbol has shape {:?}", m.shape())));
                }
                m
            }
            None => CMat::zeros(self.weight.m1, self.weight.m0),
        };
        BlockValue::new(self.weight, g, k, t, q)
    }
}

/// A Green block at a fixed parameter point.
#[derive(Debug, Clone)]
pub struct BlockValue {
    pub weight: WeightDatum,
    pub type_r: usize,
    pub g: Vec<KernelValue>,
    pub k: Option<KernelValue>,
    pub t: Vec<KernelValue>,
    pub q: CMat,
}

impl BlockValue {
    pub fn new(weight: WeightDatum, g: Vec<KernelValue>, k: Option<KernelValue>, t: Vec<KernelValue>, q: CMat) -> Result<Self> {
        let dims = |v: &KernelValue, kind: KernelKind, d: (usize, usize)| {
            if v.kind != kind || (v.rows, v.cols) != d {
                Err(Error::Dimension(format!("{kind:?} kernel must be {d:?}, got {:?} {:?}", v.kind, (v.rows, v.cols))))
            } else {
                Ok(())
            }
        };
        for v in &g {
            dims(v, KernelKind::Green, (weight.l1, weight.l0))?;
        }
        if let Some(v) = &k {
            dims(v, KernelKind::Poisson, (weight.l1, weight.m0))?;
        }
        for v in &t {
            dims(v, KernelKind::Trace, (weight.m1, weight.l0))?;
        }
        if q.shape() != (weight.m1, weight.m0) {
            return Err(Error::Dimension(format!("boundary block must be {:?}", (weight.m1, weight.m0))));
        }
        let type_r = g.len().max(t.len()).saturating_sub(1);
        Ok(Self { weight, type_r, g, k, t, q })
    }

    fn all_exp_poly(&self) -> bool {
        self.g.iter().chain(self.t.iter()).chain(self.k.iter()).all(|k| k.is_exp_poly())
    }

    /// Discretized block operator on `basis`.
    pub fn discretize(&self, basis: &HalfLineBasis) -> Result<HalfLineOperator> {
        let w = self.weight;
        let mut op = HalfLineOperator::zeros(basis, (w.l0, w.m0), (w.l1, w.m1));
        let d = basis.derivative_matrix();
        let mut dj = CMat::identity(basis.n_modes, basis.n_modes);
        let mut interior = op.block(crate::halfline::BlockRole::Interior);
        let mut trace = op.block(crate::halfline::BlockRole::Trace);
        for j in 0..=self.type_r {
            let dl = block_diag(&dj, w.l0);
            if let Some(g) = self.g.get(j) {
                interior += g.discretize(basis)? * &dl;
            }
            if let Some(t) = self.t.get(j) {
                trace += t.discretize(basis)? * &dl;
            }
            dj = &d * dj;
        }
        op.set_block(crate::halfline::BlockRole::Interior, &interior)?;
        op.set_block(crate::halfline::BlockRole::Trace, &trace)?;
        if let Some(k) = &self.k {
            op.set_block(crate::halfline::BlockRole::Poisson, &k.discretize(basis)?)?;
        }
        op.set_block(crate::halfline::BlockRole::Boundary, &self.q)?;
        Ok(op)
    }

    fn from_operator(op: &HalfLineOperator, weight: WeightDatum, type_r: usize) -> Result<Self> {
        use crate::halfline::BlockRole;
        let basis = op.basis.clone();
        let disc = |kind, rows, cols, role| KernelValue {
            kind,
            rows,
            cols,
            twisted: false,
            repr: KernelRepr::Discrete { basis: basis.clone(), matrix: op.block(role) },
        };
        let mut out = Self::new(
            weight,
            vec![disc(KernelKind::Green, weight.l1, weight.l0, BlockRole::Interior)],
            Some(disc(KernelKind::Poisson, weight.l1, weight.m0, BlockRole::Poisson)),
            vec![disc(KernelKind::Trace, weight.m1, weight.l0, BlockRole::Trace)],
            op.block(BlockRole::Boundary),
        )?;
        out.type_r = type_r;
        Ok(out)
    }
}

/// Applies a block to `(u, c)`.
pub fn apply_block(b: &BlockValue, u: &HalfLineFunction, v: &CVec) -> Result<(HalfLineFunction, CVec)> {
    if u.dim() != b.weight.l0 || v.len() != b.weight.m0 {
        return Err(Error::Dimension(format!(
            "input ({}, {}) does not match weight ({}, {})",
            u.dim(),
            v.len(),
            b.weight.l0,
            b.weight.m0
        )));
    }
    b.discretize(&u.basis)?.apply(u, v)
}

/// `b1 b0`. Closed form when every kernel is an exponential polynomial and
/// both blocks have type 0; otherwise the product of discretized blocks.
pub fn compose_blocks(b1: &BlockValue, b0: &BlockValue, basis: &HalfLineBasis) -> Result<BlockValue> {
    if !b1.weight.composable_with(&b0.weight) {
        return Err(Error::NotComposable(format!(
            "left block expects ({}, {}), right block produces ({}, {})",
            b1.weight.l0, b1.weight.m0, b0.weight.l1, b0.weight.m1
        )));
    }
    let weight = WeightDatum::new(b0.weight.l0, b0.weight.m0, b1.weight.l1, b1.weight.m1);
    if b1.type_r == 0 && b0.type_r == 0 && b1.all_exp_poly() && b0.all_exp_poly() {
        return compose_closed(b1, b0, weight);
    }
    let op = b1.discretize(basis)?.compose(&b0.discretize(basis)?)?;
    BlockValue::from_operator(&op, weight, b0.type_r)
}

fn compose_closed(b1: &BlockValue, b0: &BlockValue, weight: WeightDatum) -> Result<BlockValue> {
    let empty = Vec::new();
    let ts = |v: Option<&KernelValue>| v.and_then(terms).unwrap_or(&empty).clone();
    let (g1, k1, t1) = (ts(b1.g.first()), ts(b1.k.as_ref()), ts(b1.t.first()));
    let (g0, k0, t0) = (ts(b0.g.first()), ts(b0.k.as_ref()), ts(b0.t.first()));
    let contract_all = |l: &[ExpTerm], r: &[ExpTerm], out: &mut Vec<ExpTerm>| -> Result<()> {
        for a in l {
            for b in r {
                out.push(contract(a, b)?);
            }
        }
        Ok(())
    };
    let scale_right = |l: &[ExpTerm], m: &CMat| l.iter().map(|t| ExpTerm { coeff: &t.coeff * m, ..t.clone() }).collect::<Vec<_>>();
    let scale_left = |m: &CMat, r: &[ExpTerm]| r.iter().map(|t| ExpTerm { coeff: m * &t.coeff, ..t.clone() }).collect::<Vec<_>>();

    let mut g = Vec::new();
    contract_all(&g1, &g0, &mut g)?;
    for a in &k1 {
        for b in &t0 {
            g.push(outer(a, b));
        }
    }
    let mut k = Vec::new();
    contract_all(&g1, &k0, &mut k)?;
    k.extend(scale_right(&k1, &b0.q));
    let mut t = Vec::new();
    contract_all(&t1, &g0, &mut t)?;
    t.extend(scale_left(&b1.q, &t0));
    let mut q = &b1.q * &b0.q;
    let mut tk = Vec::new();
    contract_all(&t1, &k0, &mut tk)?;
    for term in tk {
        q += term.coeff;
    }
    BlockValue::new(
        weight,
        vec![KernelValue::exp_poly(KernelKind::Green, weight.l1, weight.l0, merge_terms(g))?],
        Some(KernelValue::exp_poly(KernelKind::Poisson, weight.l1, weight.m0, merge_terms(k))?),
        vec![KernelValue::exp_poly(KernelKind::Trace, weight.m1, weight.l0, merge_terms(t))?],
        q,
    )
}

fn merge_terms(terms: Vec<ExpTerm>) -> Vec<ExpTerm> {
    let mut out: Vec<ExpTerm> = Vec::new();
    for t in terms {
        match out.iter_mut().find(|o| o.p == t.p && o.q == t.q && o.a == t.a && o.b == t.b) {
            Some(o) => o.coeff += t.coeff,
            None => out.push(t),
        }
    }
    out
}

fn adjoint_kernel(k: &KernelValue, kind: KernelKind) -> KernelValue {
    let repr = match &k.repr {
        KernelRepr::ExpPoly(terms) => KernelRepr::ExpPoly(
            terms
                .iter()
                .map(|t| ExpTerm { coeff: t.coeff.adjoint(), p: t.q, q: t.p, a: t.b.conj(), b: t.a.conj() })
                .collect(),
        ),
        KernelRepr::Function(f) => {
            let f = f.clone();
            KernelRepr::Function(Arc::new(move |t, s| f(s, t).adjoint()))
        }
        KernelRepr::Discrete { basis, matrix } => KernelRepr::Discrete { basis: basis.clone(), matrix: matrix.adjoint() },
    };
    KernelValue { kind, rows: k.cols, cols: k.rows, twisted: k.twisted, repr }
}

/// Formal adjoint with respect to the `L^2 + C^M` pairing; type 0 only.
pub fn adjoint_block(b: &BlockValue) -> Result<BlockValue> {
    if b.type_r > 0 {
        return Err(Error::AdjointType(b.type_r));
    }
    let w = b.weight.adjoint();
    let g = b.g.iter().map(|g| adjoint_kernel(g, KernelKind::Green)).collect();
    let k = b.t.first().map(|t| adjoint_kernel(t, KernelKind::Poisson));
    let t = b.k.iter().map(|k| adjoint_kernel(k, KernelKind::Trace)).collect();
    BlockValue::new(w, g, k, t, b.q.adjoint())
}

/// `Tr_+ g = int_0^inf tr g(t, t) dt`.
pub fn tr_plus(g: &KernelValue) -> Result<C64> {
    if g.kind != KernelKind::Green || g.rows != g.cols {
        return Err(Error::InvalidArgument("Tr_+ needs a square Green kernel".into()));
    }
    match &g.repr {
        KernelRepr::ExpPoly(terms) => {
            let mut acc = c(0.0);
            for t in terms {
                acc += t.coeff.trace() * gamma_moment(t.p + t.q, t.a + t.b)?;
            }
            Ok(acc)
        }
        KernelRepr::Function(f) => integrate_half_line(|t| f(t, t).trace()),
        KernelRepr::Discrete { matrix, .. } => Ok(matrix.trace()),
    }
}

fn laguerre_rule(n: usize) -> &'static LaguerreQuadrature {
    static R64: OnceLock<LaguerreQuadrature> = OnceLock::new();
    static R128: OnceLock<LaguerreQuadrature> = OnceLock::new();
    match n {
        64 => R64.get_or_init(|| LaguerreQuadrature::new(64)),
        _ => R128.get_or_init(|| LaguerreQuadrature::new(128)),
    }
}

/// `int_0^inf f`, Gauss-Laguerre at a few scales; errors if no scale gives a
/// converged value with a negligible tail.
pub fn integrate_half_line<F: Fn(f64) -> C64>(f: F) -> Result<C64> {
    let rule = |q: &LaguerreQuadrature, beta: f64| -> (C64, f64) {
        let n = q.nodes.len();
        let mut total = c(0.0);
        let mut tail = 0.0;
        for (i, (x, w)) in q.nodes.iter().zip(&q.scaled_weights).enumerate() {
            let v = f(beta * x) * (w * beta);
            total += v;
            if i >= 3 * n / 4 {
                tail += v.norm();
            }
        }
        (total, tail)
    };
    let mut best_tail = f64::INFINITY;
    for beta in [1.0, 0.25, 4.0, 0.0625, 16.0] {
        let (fine, tail) = rule(laguerre_rule(128), beta);
        let (coarse, _) = rule(laguerre_rule(64), beta);
        if !fine.re.is_finite() || !fine.im.is_finite() {
            continue;
        }
        let scale = fine.norm().max(1e-300);
        best_tail = best_tail.min(tail / scale);
        if tail <= 1e-10 * scale && (fine - coarse).norm() <= 1e-9 * scale.max(1e-12) {
            return Ok(fine);
        }
    }
    Err(Error::NonDecay(best_tail))
}

/// A symbol in `xi_n` at a fixed point: `sum_m poly[m] (i xi_n)^m + bounded(xi_n)`.
///
/// The bounded part must be smooth on the compactified line (same expansion at
/// `+inf` and `-inf`), which is what the transmission property provides.
#[derive(Clone)]
pub struct NormalSymbol {
    pub poly: Vec<C64>,
    pub bounded: Option<Arc<dyn Fn(f64) -> C64 + Send + Sync>>,
}

impl NormalSymbol {
    pub fn bounded<F: Fn(f64) -> C64 + Send + Sync + 'static>(f: F) -> Self {
        Self { poly: Vec::new(), bounded: Some(Arc::new(f)) }
    }

    pub fn polynomial(poly: Vec<C64>) -> Self {
        Self { poly, bounded: None }
    }

    pub fn eval(&self, xi: f64) -> C64 {
        let mut acc = c(0.0);
        let mut pw = c(1.0);
        for a in &self.poly {
            acc += a * pw;
            pw *= I * xi;
        }
        if let Some(b) = &self.bounded {
            acc += b(xi);
        }
        acc
    }
}

/// Sampling controls for [`op_plus`].
#[derive(Debug, Clone, Copy)]
pub struct OpPlusOptions {
    pub initial_samples: usize,
    pub max_samples: usize,
    /// Accepted aliasing estimate, relative to the largest coefficient.
    pub tol: f64,
}

impl Default for OpPlusOptions {
    fn default() -> Self {
        Self { initial_samples: 4096, max_samples: 1 << 18, tol: 1e-10 }
    }
}

/// Fourier coefficients `c_m`, `|m| < n`, of `f(alpha cot(phi / 2))` on the
/// circle; index `n - 1 + m`.
pub fn circle_coefficients<F>(f: &F, alpha: f64, n: usize, opts: OpPlusOptions) -> Result<Vec<C64>>
where
    F: Fn(f64) -> C64 + Sync + ?Sized,
{
    let mut m = opts.initial_samples.max(8 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    loop {
        let mut buf: Vec<C64> = (0..m)
            .into_par_iter()
            .map(|j| {
                let phi = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / m as f64;
                f(alpha / (0.5 * phi).tan())
            })
            .collect();
        planner.plan_fft_forward(m).process(&mut buf);
        let coef = |k: i64| -> C64 {
            let idx = k.rem_euclid(m as i64) as usize;
            buf[idx] * C64::from_polar(1.0 / m as f64, -std::f64::consts::PI * k as f64 / m as f64)
        };
        let peak = buf.iter().map(|z| z.norm()).fold(0.0, f64::max) / m as f64;
        let lo = (m / 4) as i64;
        let hi = (m / 2) as i64;
        let tail = (lo..hi).flat_map(|k| [coef(k).norm(), coef(-k).norm()]).fold(0.0, f64::max);
        let estimate = tail / peak.max(1.0);
        if estimate <= opts.tol {
            let nn = n as i64;
            return Ok((-(nn - 1)..nn).map(coef).collect());
        }
        if 2 * m > opts.max_samples {
            return Err(Error::Aliasing { estimate, suggested: 2 * m });
        }
        m *= 2;
    }
}

/// Matrix of `r^+ op(a) e^+` on the span of `basis`.
///
/// The bounded part acts as the Toeplitz matrix of its circle coefficients,
/// `<phi_j, op^+(a) phi_k> = c_{j-k}`; `(i xi_n)^m` acts as `d^m`.
pub fn op_plus_matrix(a: &NormalSymbol, basis: &HalfLineBasis, opts: OpPlusOptions) -> Result<CMat> {
    let n = basis.n_modes;
    let mut out = CMat::zeros(n, n);
    if let Some(b) = &a.bounded {
        let cs = circle_coefficients(b.as_ref(), basis.alpha, n, opts)?;
        out = CMat::from_fn(n, n, |j, k| cs[n - 1 + j - k]);
    }
    let d = basis.derivative_matrix();
    let mut dm = CMat::identity(n, n);
    for coef in &a.poly {
        if *coef != c(0.0) {
            out += &dm * *coef;
        }
        dm = &d * dm;
    }
    Ok(out)
}

/// `r^+ op(a) e^+ f`, applied to every component of `f`.
pub fn op_plus(a: &NormalSymbol, f: &HalfLineFunction) -> Result<HalfLineFunction> {
    let m = op_plus_matrix(a, &f.basis, OpPlusOptions::default())?;
    Ok(f.map_coeffs(&m))
}

const PSI_NODES: usize = 512;
const PSI_CUTOFF: f64 = 1000.0;

struct PsiTable {
    tau: Vec<f64>,
    beta: Vec<f64>,
    c: f64,
}

fn psi_table() -> &'static PsiTable {
    static T: OnceLock<PsiTable> = OnceLock::new();
    T.get_or_init(|| {
        let tau: Vec<f64> = (1..PSI_NODES).map(|i| 1.0 + i as f64 / PSI_NODES as f64).collect();
        let mut beta: Vec<f64> = tau.iter().map(|t| (-1.0 / ((t - 1.0) * (2.0 - t))).exp()).collect();
        let total: f64 = beta.iter().sum();
        beta.iter_mut().for_each(|b| *b /= total);
        let mut tbl = PsiTable { tau, beta, c: 0.0 };
        let sup = (0..=4000).map(|i| -50.0 + 0.025 * i as f64).map(|s| psi_eval(&tbl, s).1.norm()).fold(0.0, f64::max);
        tbl.c = 2.1 * sup;
        tbl
    })
}

fn psi_eval(tbl: &PsiTable, s: f64) -> (C64, C64) {
    if s.abs() > PSI_CUTOFF {
        return (c(0.0), c(0.0));
    }
    let step = C64::from_polar(1.0, s / PSI_NODES as f64);
    let mut e = C64::from_polar(1.0, s * tbl.tau[0]);
    let (mut v, mut dv) = (c(0.0), c(0.0));
    for (i, (t, b)) in tbl.tau.iter().zip(&tbl.beta).enumerate() {
        if i % 64 == 0 {
            e = C64::from_polar(1.0, s * t);
        }
        v += e * *b;
        dv += e * (b * t);
        e *= step;
    }
    (v, dv * I)
}

/// `psi(s) = int_1^2 e^{i s tau} beta(tau) d tau` with `beta` the normalized
/// bump `exp(-1 / ((tau - 1)(2 - tau)))`.
pub fn psi(s: f64) -> C64 {
    psi_eval(psi_table(), s).0
}

pub fn psi_derivative(s: f64) -> C64 {
    psi_eval(psi_table(), s).1
}

/// `c = 2.1 sup |psi'|`.
pub fn reduction_constant() -> f64 {
    psi_table().c
}

/// `[xi',mu] psi(xi_n / (c [xi',mu])) - i xi_n`.
fn reduction_base(xi_n: f64, bracket: f64) -> C64 {
    psi(xi_n / (reduction_constant() * bracket)) * bracket - I * xi_n
}

/// `lambda^d_-(xi', xi_n, mu)`.
pub fn order_reduction_symbol(d: i32, xi_n: f64, pt: &ParamPoint) -> C64 {
    if d == 0 {
        return c(1.0);
    }
    reduction_base(xi_n, pt.bracket()).powi(d)
}

/// `lambda^d_-` at `pt`, split into its polynomial and bounded parts.
pub fn order_reduction(d: i32, pt: &ParamPoint) -> NormalSymbol {
    let b = pt.bracket();
    if d == 0 {
        return NormalSymbol::polynomial(vec![c(1.0)]);
    }
    if d < 0 {
        return NormalSymbol::bounded(move |xi| reduction_base(xi, b).powi(d));
    }
    let du = d as usize;
    let mut poly = vec![c(0.0); du + 1];
    poly[du] = c(if du % 2 == 0 { 1.0 } else { -1.0 });
    let binom: Vec<f64> = (0..=du).map(|m| binomial(du, m)).collect();
    NormalSymbol {
        poly,
        bounded: Some(Arc::new(move |xi| {
            let p = psi(xi / (reduction_constant() * b)) * b;
            let mut acc = c(0.0);
            for m in 0..du {
                acc += p.powi((du - m) as i32) * (-I * xi).powi(m as i32) * binom[m];
            }
            acc
        })),
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::halfline::{derivative_plus, dilation, exp_mode};

    fn basis() -> HalfLineBasis {
        HalfLineBasis::new(64, 1.0).unwrap()
    }

    fn pt_with_bracket(b: f64) -> ParamPoint {
        ParamPoint::at_origin(vec![0.0], b).unwrap()
    }

    fn one() -> CMat {
        CMat::identity(1, 1)
    }

    fn scalar_block(g: Option<KernelValue>, k: Option<KernelValue>, t: Option<KernelValue>, q: C64) -> BlockValue {
        BlockValue::new(
            WeightDatum::new(1, 1, 1, 1),
            g.into_iter().collect(),
            k,
            t.into_iter().collect(),
            CMat::from_element(1, 1, q),
        )
        .unwrap()
    }

    #[test]
    fn twist_examples() {
        let k = KernelValue::exp_poisson(c(1.0));
        let tk = twist(&k, &pt_with_bracket(4.0)).unwrap();
        for t in [0.0, 0.2, 1.0] {
            assert!((tk.eval(t, 0.0)[(0, 0)] - c(2.0 * (-4.0 * t).exp())).norm() < 1e-14);
        }
        let g = KernelValue::exp_green(c(1.0), c(1.0), c(1.0));
        let tg = twist(&g, &pt_with_bracket(3.0)).unwrap();
        for (t, s) in [(0.0, 0.0), (0.3, 0.7), (1.0, 2.0)] {
            assert!((tg.eval(t, s)[(0, 0)] - c(3.0 * (-3.0 * (t + s)).exp())).norm() < 1e-14);
        }
        let id = twist(&g, &pt_with_bracket(1.0)).unwrap();
        assert_eq!(id.eval(0.4, 0.9), g.eval(0.4, 0.9));
        assert!(twist(&tg, &pt_with_bracket(3.0)).is_err());
    }

    #[test]
    fn untwist_examples() {
        let k = KernelValue::exp_poly(KernelKind::Poisson, 1, 1, vec![ExpTerm::poisson(one() * c(2.0), 0, c(4.0))])
            .unwrap()
            .with_twisted(true);
        let u = untwist(&k, &pt_with_bracket(4.0)).unwrap();
        for t in [0.0, 0.5, 2.0] {
            assert!((u.eval(t, 0.0)[(0, 0)] - c((-t).exp())).norm() < 1e-14);
        }
        let f = KernelValue::function(KernelKind::Green, 1, 1, |t, s| {
            CMat::from_element(1, 1, C64::new((1.0 + t * s) * (-t - 2.0 * s).exp(), t))
        });
        let pt = pt_with_bracket(2.7);
        let back = untwist(&twist(&f, &pt).unwrap(), &pt).unwrap();
        for (t, s) in [(0.1, 0.2), (1.5, 0.3), (4.0, 4.0)] {
            assert!((back.eval(t, s) - f.eval(t, s)).norm() < 1e-12);
        }
    }

    #[test]
    fn twisting_is_conjugation_by_dilation() {
        let b = HalfLineBasis::new(96, 1.0).unwrap();
        let pt = pt_with_bracket(2.0);
        let gp = KernelValue::exp_poly(
            KernelKind::Green,
            1,
            1,
            vec![ExpTerm::green(one(), 1, 0, c(1.0), c(1.5)), ExpTerm::green(one() * c(0.5), 0, 0, c(2.0), c(1.0))],
        )
        .unwrap();
        let g = twist(&gp, &pt).unwrap();
        let lam = pt.bracket();
        let conj = dilation_matrix(&b, 1.0 / lam) * g.discretize(&b).unwrap() * dilation_matrix(&b, lam);
        let err = (conj - gp.discretize(&b).unwrap()).norm();
        assert!(err < 1e-6, "{err:e}");
    }

    #[test]
    fn apply_block_examples() {
        let b = basis();
        let one_vec = CVec::from_element(1, c(1.0));
        let e = exp_mode(&b, c(1.0), &one_vec).unwrap().function;
        let zero = CVec::zeros(1);

        let tb = scalar_block(None, None, Some(KernelValue::exp_trace(c(1.0))), c(0.0));
        let (_, v) = apply_block(&tb, &e, &zero).unwrap();
        assert!((v[0] - c(0.5)).norm() < 1e-13);

        let kb = scalar_block(None, Some(KernelValue::exp_poisson(c(1.0))), None, c(0.0));
        let z = HalfLineFunction::zeros(&b, 1);
        let (f, _) = apply_block(&kb, &z, &one_vec).unwrap();
        assert!((f.coeffs - &e.coeffs).norm() < 1e-13);

        let gb = scalar_block(Some(KernelValue::exp_green(c(1.0), c(1.0), c(2.0))), None, None, c(0.0));
        let (f, _) = apply_block(&gb, &e, &zero).unwrap();
        assert!((f.coeffs - &e.coeffs * c(1.0 / 3.0)).norm() < 1e-13);

        assert!(apply_block(&gb, &e, &CVec::zeros(2)).is_err());
    }

    #[test]
    fn function_kernels_match_closed_forms() {
        let b = basis();
        let closed = KernelValue::exp_green(c(0.7), C64::new(1.2, 0.3), c(0.8));
        let f = KernelValue::function(KernelKind::Green, 1, 1, |t, s| {
            CMat::from_element(1, 1, C64::new(0.7, 0.0) * (-C64::new(1.2, 0.3) * t - 0.8 * s).exp())
        });
        let err = (closed.discretize(&b).unwrap() - f.discretize(&b).unwrap()).norm();
        assert!(err < 1e-11, "{err:e}");
    }

    #[test]
    fn composition_examples() {
        let b = basis();
        let kb = scalar_block(None, Some(KernelValue::exp_poisson(c(1.0))), None, c(0.0));
        let tb = scalar_block(None, None, Some(KernelValue::exp_trace(c(1.0))), c(0.0));
        let tk = compose_blocks(&tb, &kb, &b).unwrap();
        assert!((tk.q[(0, 0)] - c(0.5)).norm() < 1e-14);

        let gb = scalar_block(Some(KernelValue::exp_green(c(1.0), c(1.0), c(1.0))), None, None, c(0.0));
        let gg = compose_blocks(&gb, &gb, &b).unwrap();
        for (t, s) in [(0.0, 0.0), (0.5, 1.5)] {
            assert!((gg.g[0].eval(t, s)[(0, 0)] - c(0.5 * (-t - s).exp())).norm() < 1e-14);
        }

        let bad = BlockValue::new(WeightDatum::new(2, 0, 2, 0), vec![], None, vec![], CMat::zeros(0, 0)).unwrap();
        assert!(matches!(compose_blocks(&bad, &gb, &b), Err(Error::NotComposable(_))));
    }

    #[test]
    fn adjoint_examples() {
        let kb = scalar_block(None, Some(KernelValue::exp_poisson(C64::new(1.0, 0.5))), None, c(0.0));
        let adj = adjoint_block(&kb).unwrap();
        let t = &adj.t[0];
        assert_eq!(t.kind, KernelKind::Trace);
        for s in [0.0, 0.7, 2.0] {
            assert!((t.eval(0.0, s)[(0, 0)] - (-C64::new(1.0, -0.5) * s).exp()).norm() < 1e-14);
        }
        let gb = BlockValue::new(
            WeightDatum::new(1, 0, 1, 0),
            vec![KernelValue::exp_green(c(1.0), c(1.0), c(1.0)), KernelValue::exp_green(c(1.0), c(1.0), c(1.0))],
            None,
            vec![],
            CMat::zeros(0, 0),
        )
        .unwrap();
        assert!(matches!(adjoint_block(&gb), Err(Error::AdjointType(1))));
    }

    #[test]
    fn adjoint_is_an_involution() {
        let g = KernelValue::exp_poly(
            KernelKind::Green,
            2,
            2,
            vec![ExpTerm::green(
                CMat::from_row_slice(2, 2, &[c(1.0), I, c(0.3), C64::new(0.1, -2.0)]),
                2,
                1,
                C64::new(1.0, 0.4),
                C64::new(2.0, -0.3),
            )],
        )
        .unwrap();
        let k = KernelValue::exp_poly(KernelKind::Poisson, 2, 1, vec![ExpTerm::poisson(CMat::from_element(2, 1, I), 1, c(1.5))])
            .unwrap();
        let blk = BlockValue::new(WeightDatum::new(2, 1, 2, 0), vec![g], Some(k), vec![], CMat::zeros(0, 1)).unwrap();
        let twice = adjoint_block(&adjoint_block(&blk).unwrap()).unwrap();
        assert_eq!(terms(&twice.g[0]), terms(&blk.g[0]));
        assert_eq!(terms(twice.k.as_ref().unwrap()), terms(blk.k.as_ref().unwrap()));
        assert_eq!(twice.q, blk.q);
    }

    #[test]
    fn discretized_adjoint_matches_matrix_adjoint() {
        let b = basis();
        let g = KernelValue::exp_green(C64::new(0.4, 1.0), C64::new(1.0, 0.7), c(2.0));
        let blk = scalar_block(Some(g), Some(KernelValue::exp_poisson(c(1.3))), Some(KernelValue::exp_trace(c(0.9))), I);
        let lhs = adjoint_block(&blk).unwrap().discretize(&b).unwrap().matrix;
        let rhs = blk.discretize(&b).unwrap().matrix.adjoint();
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn tr_plus_examples() {
        let s = C64::new(1.3, 0.4);
        assert!((tr_plus(&KernelValue::exp_green(c(1.0), s, s)).unwrap() - c(0.5) / s).norm() < 1e-14);
        assert!((tr_plus(&KernelValue::exp_green(c(1.0), c(1.0), c(2.0))).unwrap() - c(1.0 / 3.0)).norm() < 1e-14);
        let dir = KernelValue::exp_green(c(0.5) / s, s, s);
        let exact = c(0.25) / (s * s);
        assert!((tr_plus(&dir).unwrap() - exact).norm() < 1e-14);
        let f = KernelValue::function(KernelKind::Green, 1, 1, move |t, u| CMat::from_element(1, 1, (-s * (t + u)).exp() * 0.5 / s));
        assert!((tr_plus(&f).unwrap() - exact).norm() < 1e-10);
        let grow = KernelValue::exp_green(c(1.0), c(-0.5), c(0.2));
        assert!(matches!(tr_plus(&grow), Err(Error::NonDecay(_))));
        let flat = KernelValue::function(KernelKind::Green, 1, 1, |_, _| CMat::identity(1, 1));
        assert!(matches!(tr_plus(&flat), Err(Error::NonDecay(_))));
    }

    #[test]
    fn tr_plus_is_conjugation_invariant() {
        let g = KernelValue::exp_poly(
            KernelKind::Green,
            1,
            1,
            vec![ExpTerm::green(one(), 1, 2, c(1.0), c(0.5)), ExpTerm::green(one() * I, 0, 0, c(3.0), c(0.2))],
        )
        .unwrap()
        .with_twisted(true);
        for b in [0.5, 2.0, 7.0] {
            let pt = pt_with_bracket(b);
            let u = untwist(&g, &pt).unwrap();
            assert!((tr_plus(&u).unwrap() - tr_plus(&g).unwrap()).norm() < 1e-13);
        }
        let disc = KernelValue { repr: KernelRepr::Discrete { basis: basis(), matrix: g.discretize(&basis()).unwrap() }, ..g.clone() };
        assert!((tr_plus(&disc).unwrap() - tr_plus(&g).unwrap()).norm() < 1e-10);
    }

    #[test]
    fn twisted_homogeneity_of_degree_zero_kernel() {
        let b = HalfLineBasis::new(96, 1.0).unwrap();
        let kernel = |pt: &ParamPoint| {
            let br = pt.bracket();
            KernelValue::exp_green(c(br), c(br), c(br))
        };
        for (xi, mu, lam) in [(0.6, 0.8, 2.0), (1.0, 1.0, 1.5), (0.3, 1.2, 3.0)] {
            let pt = ParamPoint::at_origin(vec![xi], mu).unwrap();
            let lhs = kernel(&pt.scaled(lam)).discretize(&b).unwrap();
            let rhs = dilation_matrix(&b, lam) * kernel(&pt).discretize(&b).unwrap() * dilation_matrix(&b, 1.0 / lam);
            assert!((lhs - rhs).norm() < 1e-6);
        }
    }

    #[test]
    fn twisted_homogeneity_of_degree_one_kernel() {
        let b = HalfLineBasis::new(96, 1.0).unwrap();
        let kernel = |pt: &ParamPoint| {
            let br = pt.bracket();
            KernelValue::exp_green(c(br * br), c(br), c(br))
        };
        for (xi, mu, lam) in [(0.6, 0.8, 2.0), (1.0, 1.0, 1.5)] {
            let pt = ParamPoint::at_origin(vec![xi], mu).unwrap();
            let lhs = kernel(&pt.scaled(lam)).discretize(&b).unwrap();
            let rhs = dilation_matrix(&b, lam) * kernel(&pt).discretize(&b).unwrap() * dilation_matrix(&b, 1.0 / lam) * c(lam);
            assert!((lhs - rhs).norm() < 1e-6);
        }
    }

    #[test]
    fn principal_parts_compose_multiplicatively() {
        use rand::{Rng, SeedableRng};
        let b = basis();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let pt = ParamPoint::at_origin(vec![rng.gen_range(-2.0..2.0)], rng.gen_range(0.5..2.0)).unwrap();
            let br = pt.bracket();
            let s = C64::new(br, rng.gen_range(-0.5..0.5));
            let b1 = scalar_block(
                Some(KernelValue::exp_green(c(br), s, s.conj())),
                Some(KernelValue::exp_poisson(s)),
                Some(KernelValue::exp_trace(s)),
                c(br),
            );
            let b0 = scalar_block(
                Some(KernelValue::exp_green(I, c(br), s)),
                Some(KernelValue::exp_poisson(s.conj())),
                Some(KernelValue::exp_trace(c(br))),
                c(1.0),
            );
            let closed = compose_blocks(&b1, &b0, &b).unwrap().discretize(&b).unwrap().matrix;
            let product = b1.discretize(&b).unwrap().matrix * b0.discretize(&b).unwrap().matrix;
            assert!((closed - product).norm() < 1e-8);
        }
    }

    #[test]
    fn type_one_block_uses_derivative() {
        let b = basis();
        let g0 = KernelValue::zero(KernelKind::Green, 1, 1);
        let g1 = KernelValue::exp_green(c(1.0), c(1.0), c(2.0));
        let blk = BlockValue::new(WeightDatum::new(1, 0, 1, 0), vec![g0, g1.clone()], None, vec![], CMat::zeros(0, 0)).unwrap();
        let u = exp_mode(&b, c(0.5), &CVec::from_element(1, c(1.0))).unwrap().function;
        let (out, _) = apply_block(&blk, &u, &CVec::zeros(0)).unwrap();
        let direct = scalar_block(Some(g1), None, None, c(0.0));
        let du = derivative_plus(&u);
        let blk0 = BlockValue { weight: WeightDatum::new(1, 0, 1, 0), q: CMat::zeros(0, 0), k: None, t: vec![], ..direct };
        let (expect, _) = apply_block(&blk0, &du, &CVec::zeros(0)).unwrap();
        assert!((out.coeffs - expect.coeffs).norm() < 1e-13);
    }

    #[test]
    fn verify_decay_flags_growth() {
        assert!(KernelValue::exp_poisson(c(1.0)).verify_decay().is_ok());
        let slow = KernelValue::function(KernelKind::Poisson, 1, 1, |t, _| CMat::from_element(1, 1, c(1.0 / (1.0 + t * t))));
        assert!(slow.verify_decay().is_err());
    }

    #[test]
    fn psi_properties() {
        assert!((psi(0.0) - c(1.0)).norm() < 1e-14);
        assert!(psi(400.0).norm() < 1e-12);
        assert!(psi(-400.0).norm() < 1e-12);
        let cc = reduction_constant();
        assert!((cc - 2.1 * 1.5).abs() < 1e-9, "{cc}");
        // psi' against a central difference
        let h = 1e-5;
        for s in [-3.0, 0.4, 7.0] {
            let fd = (psi(s + h) - psi(s - h)) / (2.0 * h);
            assert!((fd - psi_derivative(s)).norm() < 1e-8);
        }
    }

    #[test]
    fn order_reduction_examples() {
        let pt = ParamPoint::at_origin(vec![0.5], 1.0).unwrap();
        assert_eq!(order_reduction_symbol(0, 3.0, &pt), c(1.0));
        let r = order_reduction_symbol(1, 1e4, &pt) / (-I * 1e4);
        assert!((r - c(1.0)).norm() < 1e-12);
        for xi in [-50.0, -1.0, 0.0, 0.3, 2.0, 40.0] {
            assert!(order_reduction_symbol(-1, xi, &pt).norm().is_finite());
            for d in [-2, -1, 1, 2] {
                let split = order_reduction(d, &pt).eval(xi);
                assert!((split - order_reduction_symbol(d, xi, &pt)).norm() < 1e-10 * split.norm().max(1.0));
            }
        }
    }

    #[test]
    fn op_plus_identity_and_derivative() {
        let b = basis();
        let f = HalfLineFunction::scalar_fn(&b, |t| c(t * t * (-t).exp()));
        let id = op_plus(&NormalSymbol::bounded(|_| c(1.0)), &f).unwrap();
        assert!((id.coeffs - &f.coeffs).norm() < 1e-10);
        let d = op_plus(&NormalSymbol::polynomial(vec![c(0.0), c(1.0)]), &f).unwrap();
        for t in [0.5f64, 1.0, 3.0, 6.0] {
            let exact = (2.0 * t - t * t) * (-t).exp();
            assert!((d.eval(t)[0] - c(exact)).norm() < 1e-6);
        }
    }

    #[test]
    fn op_plus_matches_convolution() {
        let b = HalfLineBasis::new(96, 1.0).unwrap();
        let f = exp_mode(&b, c(1.0), &CVec::from_element(1, c(1.0))).unwrap().function;
        let f = crate::halfline::multiply_xn(&f, 1);
        let g = op_plus(&NormalSymbol::bounded(|xi| c(1.0 / (1.0 + xi * xi))), &f).unwrap();
        for t in [0.0, 0.5, 1.0, 2.0, 5.0] {
            let oracle = convolution_oracle(t);
            assert!((g.eval(t)[0] - c(oracle)).norm() < 1e-5);
        }
    }

    // int_0^inf e^{-|t-s|}/2 * s e^{-s} ds by composite Simpson on [0, 60]
    fn convolution_oracle(t: f64) -> f64 {
        let f = |s: f64| 0.5 * (-(t - s).abs()).exp() * s * (-s).exp();
        let simpson = |a: f64, b: f64, n: usize| {
            let h = (b - a) / n as f64;
            let mut acc = f(a) + f(b);
            for i in 1..n {
                acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            acc * h / 3.0
        };
        simpson(0.0, t, 2000) + simpson(t, 60.0, 20000)
    }

    #[test]
    fn op_plus_rejects_jump_symbols() {
        let b = HalfLineBasis::new(16, 1.0).unwrap();
        let sign = NormalSymbol::bounded(|xi| c(xi.signum()));
        let opts = OpPlusOptions { max_samples: 1 << 14, ..OpPlusOptions::default() };
        assert!(matches!(op_plus_matrix(&sign, &b, opts), Err(Error::Aliasing { .. })));
    }

    #[test]
    fn order_reductions_compose_to_identity() {
        let b = basis();
        let pt = ParamPoint::at_origin(vec![0.7], 1.1).unwrap();
        let up = op_plus_matrix(&order_reduction(1, &pt), &b, OpPlusOptions::default()).unwrap();
        let down = op_plus_matrix(&order_reduction(-1, &pt), &b, OpPlusOptions::default()).unwrap();
        let f = HalfLineFunction::scalar_fn(&b, |t| c(t * (-t).exp()));
        let back = f.map_coeffs(&(up * down));
        for t in [0.0, 0.5, 1.0, 3.0] {
            assert!((back.eval(t)[0] - f.eval(t)[0]).norm() < 1e-4);
        }
    }

    #[test]
    fn minus_symbols_are_upper_triangular() {
        let b = HalfLineBasis::new(24, 1.0).unwrap();
        let pt = ParamPoint::at_origin(vec![0.2], 1.0).unwrap();
        let m = op_plus_matrix(&order_reduction(-1, &pt), &b, OpPlusOptions::default()).unwrap();
        let lower = (0..24).flat_map(|j| (0..j).map(move |k| (j, k))).map(|(j, k)| m[(j, k)].norm()).fold(0.0, f64::max);
        assert!(lower < 1e-8, "{lower:e}");
    }

    #[test]
    fn dilation_is_consistent_with_twist() {
        let b = HalfLineBasis::new(64, 1.0).unwrap();
        let k = KernelValue::exp_poisson(c(1.0));
        let pt = pt_with_bracket(1.7);
        let tk = twist(&k, &pt).unwrap();
        let f = HalfLineFunction::from_vec(&b, 1, &CVec::from_column_slice(k.discretize(&b).unwrap().as_slice()));
        let g = dilation(&f, 1.7).unwrap();
        let direct = tk.discretize(&b).unwrap();
        assert!((g.coeffs - direct).norm() < 1e-8);
    }
}
