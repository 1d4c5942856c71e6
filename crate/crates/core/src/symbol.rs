//! Scalar and matrix symbols in `(x', xi', mu)`.
//!
//! Symbols are stored as finite ladders of homogeneous components. Evaluation
//! uses a radial excision function so that the ladder is smooth at the origin of
//! `(xi', mu)`. Limit and angular symbols are recovered numerically from samples.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{c, CMat, C64};

/// A point `(x', xi', mu)` of the parameter-dependent cotangent space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamPoint {
    pub x_prime: Vec<f64>,
    pub xi_prime: Vec<f64>,
    pub mu: f64,
}

impl ParamPoint {
    pub fn new(x_prime: Vec<f64>, xi_prime: Vec<f64>, mu: f64) -> Result<Self> {
        if !(mu >= 0.0) {
            return Err(Error::InvalidArgument(format!("mu must be >= 0, got {mu}")));
        }
        if !x_prime.is_empty() && x_prime.len() != xi_prime.len() {
            return Err(Error::Dimension(format!(
                "x' has length {} but xi' has length {}",
                x_prime.len(),
                xi_prime.len()
            )));
        }
        Ok(Self { x_prime, xi_prime, mu })
    }

    /// Point with `x' = 0`.
    pub fn at_origin(xi_prime: Vec<f64>, mu: f64) -> Result<Self> {
        let x = vec![0.0; xi_prime.len()];
        Self::new(x, xi_prime, mu)
    }

    /// Euclidean length of `(xi', mu)`.
    pub fn radius(&self) -> f64 {
        (self.xi_prime.iter().map(|v| v * v).sum::<f64>() + self.mu * self.mu).sqrt()
    }

    /// Smoothed norm `[xi', mu]`.
    pub fn bracket(&self) -> f64 {
        smoothed_norm_radius(self.radius())
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            x_prime: self.x_prime.clone(),
            xi_prime: self.xi_prime.iter().map(|v| v * lambda).collect(),
            mu: self.mu * lambda,
        }
    }
}

fn flat(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        (-1.0 / s).exp()
    }
}

/// Transition profile: 0 on `[0, 1/2]`, 1 on `[1, inf)`, smooth and increasing in between.
pub fn blend(r: f64) -> f64 {
    if r <= 0.5 {
        0.0
    } else if r >= 1.0 {
        1.0
    } else {
        let a = flat(r - 0.5);
        let b = flat(1.0 - r);
        a / (a + b)
    }
}

/// `[y]` as a function of `|y|`.
pub fn smoothed_norm_radius(r: f64) -> f64 {
    let phi = blend(r);
    phi * r + (1.0 - phi)
}

/// Smoothed norm: equals `|y|` for `|y| >= 1`, positive everywhere, `[0] = 1`.
pub fn smoothed_norm(y: &[f64]) -> f64 {
    smoothed_norm_radius(y.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Radial excision: 0 for `r <= radius`, 1 for `r >= 2 radius`.
pub fn excision(r: f64, radius: f64) -> f64 {
    blend(0.5 + 0.5 * (r - radius) / radius)
}

/// Evaluator of a homogeneous component on the unit sphere: `(x', xi', mu) -> matrix`
/// with `|(xi', mu)| = 1`.
pub type SphereFn = Arc<dyn Fn(&[f64], &[f64], f64) -> CMat + Send + Sync>;

/// Evaluator of a general symbol: `(x', xi', mu) -> matrix`.
pub type SymbolFn = Arc<dyn Fn(&[f64], &[f64], f64) -> CMat + Send + Sync>;

/// A component homogeneous of degree `degree` in `(xi', mu)`.
#[derive(Clone)]
pub struct HomogeneousComponent {
    pub degree: f64,
    pub regularity: Option<f64>,
    pub dims: (usize, usize),
    eval: SphereFn,
}

impl fmt::Debug for HomogeneousComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HomogeneousComponent")
            .field("degree", &self.degree)
            .field("regularity", &self.regularity)
            .field("dims", &self.dims)
            .finish()
    }
}

impl HomogeneousComponent {
    /// Component defined by its restriction to the unit sphere.
    pub fn from_sphere(degree: f64, dims: (usize, usize), eval: SphereFn) -> Self {
        Self { degree, regularity: None, dims, eval }
    }

    /// Component defined by any function that is already homogeneous; only its
    /// sphere values are used.
    pub fn from_homogeneous<F>(degree: f64, dims: (usize, usize), f: F) -> Self
    where
        F: Fn(&[f64], &[f64], f64) -> CMat + Send + Sync + 'static,
    {
        Self::from_sphere(degree, dims, Arc::new(f))
    }

    /// Scalar component.
    pub fn scalar<F>(degree: f64, f: F) -> Self
    where
        F: Fn(&[f64], f64) -> C64 + Send + Sync + 'static,
    {
        Self::from_sphere(
            degree,
            (1, 1),
            Arc::new(move |_x: &[f64], xi: &[f64], mu: f64| CMat::from_element(1, 1, f(xi, mu))),
        )
    }

    pub fn with_regularity(mut self, nu: f64) -> Self {
        self.regularity = Some(nu);
        self
    }

    /// Value at an arbitrary `(xi', mu) != 0`, extended by homogeneity.
    pub fn eval(&self, x: &[f64], xi: &[f64], mu: f64) -> Result<CMat> {
        let r = (xi.iter().map(|v| v * v).sum::<f64>() + mu * mu).sqrt();
        if r == 0.0 {
            return Err(Error::Domain);
        }
        let unit: Vec<f64> = xi.iter().map(|v| v / r).collect();
        Ok((self.eval)(x, &unit, mu / r) * c(r.powf(self.degree)))
    }

    pub fn eval_point(&self, pt: &ParamPoint) -> Result<CMat> {
        self.eval(&pt.x_prime, &pt.xi_prime, pt.mu)
    }
}

/// A poly-homogeneous symbol truncated to a finite ladder of components.
#[derive(Debug, Clone)]
pub struct PolyHomSymbol {
    pub order: f64,
    pub regularity: f64,
    pub components: Vec<HomogeneousComponent>,
    pub excision_radius: f64,
}

impl PolyHomSymbol {
    /// Component `k` must have degree `order - k`.
    pub fn new(order: f64, regularity: f64, components: Vec<HomogeneousComponent>) -> Result<Self> {
        for (k, comp) in components.iter().enumerate() {
            if (comp.degree - (order - k as f64)).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "component {k} has degree {} but {} was expected",
                    comp.degree,
                    order - k as f64
                )));
            }
            if comp.dims != components[0].dims {
                return Err(Error::Dimension("components disagree in value shape".into()));
            }
        }
        Ok(Self { order, regularity, components, excision_radius: 1.0 })
    }

    pub fn with_excision_radius(mut self, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument("excision radius must be positive".into()));
        }
        self.excision_radius = radius;
        Ok(self)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.components.first().map(|c| c.dims).unwrap_or((1, 1))
    }
}

/// `sum_{j < n_terms} chi(pt) p^{(d-j)}(pt)`.
pub fn eval_polyhom(p: &PolyHomSymbol, pt: &ParamPoint, n_terms: usize) -> Result<CMat> {
    if n_terms > p.components.len() {
        return Err(Error::InvalidArgument(format!(
            "requested {n_terms} terms but only {} are stored",
            p.components.len()
        )));
    }
    let (r, cdim) = p.dims();
    let chi = excision(pt.radius(), p.excision_radius);
    let mut acc = CMat::zeros(r, cdim);
    if chi == 0.0 {
        return Ok(acc);
    }
    for comp in &p.components[..n_terms] {
        acc += comp.eval_point(pt)? * c(chi);
    }
    Ok(acc)
}

/// Outcome of a numerical limit extraction.
#[derive(Debug, Clone, Serialize)]
pub struct LimitReport {
    #[serde(skip)]
    pub value: CMat,
    /// Raw samples' successive differences (Frobenius norm), in ladder order.
    pub differences: Vec<f64>,
    pub converged: bool,
    /// Last raw sample before extrapolation.
    #[serde(skip)]
    pub last_sample: CMat,
}

/// Default geometric ladder `mu_k = 10 * 2^k`, `k = 0..=10`.
pub fn default_mu_ladder() -> Vec<f64> {
    (0..=10).map(|k| 10.0 * 2f64.powi(k)).collect()
}

/// Ladder `r_k = 2^{-k-2}` used for angular limits.
pub fn default_r_ladder() -> Vec<f64> {
    (0..10).map(|k| 2f64.powi(-(k as i32) - 2)).collect()
}

/// Polynomial extrapolation of `(h_k, v_k)` to `h = 0` (Neville).
fn extrapolate_to_zero(h: &[f64], v: &[CMat]) -> CMat {
    let n = v.len();
    let mut table: Vec<CMat> = v.to_vec();
    for m in 1..n {
        for i in 0..n - m {
            let (hi, hj) = (h[i], h[i + m]);
            table[i] = (&table[i + 1] * c(hi) - &table[i] * c(hj)) * c(1.0 / (hi - hj));
        }
    }
    table[0].clone()
}

fn decay_ok(diffs: &[f64], scale: f64) -> bool {
    let floor = 1e-10 * scale.max(1.0);
    let tail: Vec<f64> = diffs.iter().rev().take(4).rev().copied().collect();
    tail.windows(2).all(|w| w[1] <= floor || w[0] <= floor || w[0] / w[1] >= 1.5)
}

/// Numerical `lim_{mu -> inf} [xi', mu]^{nu - d} p(x', xi', mu)`.
///
/// Declares convergence when successive sample differences decay by a factor
/// of at least 1.5 over the tail of the ladder; the returned value is a
/// polynomial extrapolation in `1/mu` over the last four samples.
pub fn principal_limit_symbol<F>(
    p: F,
    d: f64,
    nu: f64,
    x_prime: &[f64],
    xi_prime: &[f64],
    mu_ladder: &[f64],
) -> Result<LimitReport>
where
    F: Fn(&ParamPoint) -> CMat,
{
    if mu_ladder.len() < 3 {
        return Err(Error::InvalidArgument("mu ladder needs at least 3 entries".into()));
    }
    if mu_ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("mu ladder must be strictly increasing".into()));
    }
    if *mu_ladder.last().unwrap() < 1e3 {
        return Err(Error::InvalidArgument("last ladder entry must be >= 1e3".into()));
    }
    let mut samples = Vec::with_capacity(mu_ladder.len());
    for &mu in mu_ladder {
        let pt = ParamPoint::new(x_prime.to_vec(), xi_prime.to_vec(), mu)?;
        let b = pt.bracket();
        samples.push(p(&pt) * c(b.powf(nu - d)));
    }
    let differences: Vec<f64> =
        samples.windows(2).map(|w| crate::linalg::frobenius(&(&w[1] - &w[0]))).collect();
    let scale = crate::linalg::frobenius(samples.last().unwrap());
    let converged = decay_ok(&differences, scale);
    if !converged {
        return Err(Error::NonConvergent(format!("differences {differences:?} do not decay")));
    }
    let k = samples.len().min(4);
    let tail = samples.len() - k;
    let h: Vec<f64> = mu_ladder[tail..].iter().map(|m| 1.0 / m).collect();
    let value = extrapolate_to_zero(&h, &samples[tail..]);
    Ok(LimitReport { value, differences, converged, last_sample: samples.last().unwrap().clone() })
}

/// Numerical principal angular symbol:
/// `lim_{r -> 0+} |xi'|^nu r^{-nu} h(x', r xi'/|xi'|, sqrt(1 - r^2))`.
pub fn principal_angular_symbol(
    h: &HomogeneousComponent,
    x_prime: &[f64],
    xi_prime: &[f64],
    r_ladder: &[f64],
) -> Result<LimitReport> {
    let xi_abs = xi_prime.iter().map(|v| v * v).sum::<f64>().sqrt();
    if xi_abs == 0.0 {
        return Err(Error::InvalidArgument("xi' must be nonzero".into()));
    }
    if r_ladder.len() < 3 || r_ladder.windows(2).any(|w| w[1] >= w[0]) || r_ladder[0] >= 1.0 {
        return Err(Error::InvalidArgument("r ladder must decrease inside (0, 1)".into()));
    }
    let nu = h.regularity.unwrap_or(0.0);
    let omega: Vec<f64> = xi_prime.iter().map(|v| v / xi_abs).collect();
    let mut samples = Vec::with_capacity(r_ladder.len());
    for &r in r_ladder {
        let xi: Vec<f64> = omega.iter().map(|v| v * r).collect();
        let val = h.eval(x_prime, &xi, (1.0 - r * r).sqrt())?;
        samples.push(val * c(xi_abs.powf(nu) * r.powf(-nu)));
    }
    let norms: Vec<f64> = samples.iter().map(crate::linalg::frobenius).collect();
    let growing = norms.windows(2).rev().take(3).all(|w| w[1] > 1.5 * w[0]);
    if growing && norms.last().unwrap() > &(1e3 * norms[0].max(1e-300)) {
        return Err(Error::RegularityOverstated(format!("norms {norms:?}")));
    }
    let differences: Vec<f64> =
        samples.windows(2).map(|w| crate::linalg::frobenius(&(&w[1] - &w[0]))).collect();
    let scale = *norms.last().unwrap();
    let converged = decay_ok(&differences, scale);
    if !converged {
        return Err(Error::RegularityOverstated(format!("differences {differences:?} do not decay")));
    }
    let k = samples.len().min(5);
    let tail = samples.len() - k;
    let value = extrapolate_to_zero(&r_ladder[tail..], &samples[tail..]);
    Ok(LimitReport { value, differences, converged, last_sample: samples.last().unwrap().clone() })
}

/// Coefficients of the expansion of a symbol as `mu -> inf`, recovered at a
/// fixed `(x', xi')` by successive limit extraction.
#[derive(Debug, Clone)]
pub struct LimitExpansion {
    pub anchor_order: (f64, f64),
    pub coefficients: Vec<CMat>,
}

impl LimitExpansion {
    /// Extract the first `n_coeffs` coefficients
    /// `p ~ sum_j [xi', mu]^{d - nu - j} p_j(x', xi')`.
    pub fn extract<F>(
        p: F,
        d: f64,
        nu: f64,
        x_prime: &[f64],
        xi_prime: &[f64],
        n_coeffs: usize,
        mu_ladder: &[f64],
    ) -> Result<Self>
    where
        F: Fn(&ParamPoint) -> CMat,
    {
        let mut coefficients: Vec<CMat> = Vec::with_capacity(n_coeffs);
        for j in 0..n_coeffs {
            let prev = coefficients.clone();
            let residual = |pt: &ParamPoint| {
                let b = pt.bracket();
                let mut v = p(pt);
                for (k, ck) in prev.iter().enumerate() {
                    v -= ck * c(b.powf(d - nu - k as f64));
                }
                v
            };
            let rep = principal_limit_symbol(residual, d, nu + j as f64, x_prime, xi_prime, mu_ladder)?;
            coefficients.push(rep.value);
        }
        Ok(Self { anchor_order: (d, nu), coefficients })
    }
}

/// Symbol on the full space, `(x', x_n, xi', xi_n, mu) -> matrix`, used for the
/// transmission check.
pub type FullSymbolFn = Arc<dyn Fn(&[f64], f64, &[f64], f64, f64) -> CMat + Send + Sync>;

/// Homogeneous components `a^{(d - l)}` of a symbol on `R^n`.
#[derive(Clone)]
pub struct FullSymbol {
    pub order: i32,
    pub dim_boundary: usize,
    pub components: Vec<FullSymbolFn>,
}

impl fmt::Debug for FullSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FullSymbol")
            .field("order", &self.order)
            .field("dim_boundary", &self.dim_boundary)
            .field("n_components", &self.components.len())
            .finish()
    }
}

impl FullSymbol {
    pub fn scalar<F>(order: i32, dim_boundary: usize, f: F) -> Self
    where
        F: Fn(&[f64], f64, &[f64], f64, f64) -> C64 + Send + Sync + 'static,
    {
        let g: FullSymbolFn =
            Arc::new(move |x, xn, xi, xin, mu| CMat::from_element(1, 1, f(x, xn, xi, xin, mu)));
        Self { order, dim_boundary, components: vec![g] }
    }
}

/// Bounds on the derivative orders tested by [`check_transmission`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TransmissionDepth {
    pub k: usize,
    pub alpha: usize,
    pub j: usize,
    pub ell: usize,
}

impl Default for TransmissionDepth {
    fn default() -> Self {
        Self { k: 1, alpha: 1, j: 1, ell: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TransmissionEntry {
    pub k: usize,
    pub alpha: Vec<usize>,
    pub j: usize,
    pub ell: usize,
    pub plus: f64,
    pub minus_times_sign: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransmissionReport {
    pub pass: bool,
    pub entries: Vec<TransmissionEntry>,
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn multi_indices(dim: usize, max_total: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..dim {
        let mut next = Vec::new();
        for idx in &out {
            let used: usize = idx.iter().sum();
            for a in 0..=(max_total - used) {
                let mut v = idx.clone();
                v.push(a);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// Mixed central difference of `f` at `x0` with orders `orders` and step `h`.
fn mixed_difference(f: &dyn Fn(&[f64]) -> CMat, x0: &[f64], orders: &[usize], h: f64) -> CMat {
    // stencil per variable: sum_k (-1)^k C(m,k) f(x + (m/2 - k) h) / h^m
    let mut stencil: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), 1.0)];
    for (var, &m) in orders.iter().enumerate() {
        if m == 0 {
            continue;
        }
        let mut next = Vec::new();
        for (pt, w) in &stencil {
            for k in 0..=m {
                let mut p = pt.clone();
                p[var] += (m as f64 / 2.0 - k as f64) * h;
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                next.push((p, w * sign * binom(m, k) / h.powi(m as i32)));
            }
        }
        stencil = next;
    }
    let mut acc: Option<CMat> = None;
    for (p, w) in stencil {
        let v = f(&p) * c(w);
        acc = Some(match acc {
            Some(a) => a + v,
            None => v,
        });
    }
    acc.unwrap()
}

/// Parity check at `(x', 0, xi' = 0, xi_n = +-1, mu = 0)` for all derivative
/// orders within `depth`, by central finite differences.
pub fn check_transmission(a: &FullSymbol, depth: TransmissionDepth, x_prime: &[f64]) -> TransmissionReport {
    let m = a.dim_boundary;
    let mut entries = Vec::new();
    for (ell, comp) in a.components.iter().enumerate().take(depth.ell + 1) {
        for k in 0..=depth.k {
            for alpha in multi_indices(m, depth.alpha) {
                for j in 0..=depth.j {
                    let total = k + alpha.iter().sum::<usize>() + j;
                    let h = if total <= 1 { 1e-5 } else { f64::EPSILON.powf(1.0 / (total as f64 + 2.0)) };
                    // variables: [x_n, xi'_1..xi'_m, mu]
                    let mut orders = vec![k];
                    orders.extend(alpha.iter().copied());
                    orders.push(j);
                    let eval_at = |xin: f64| {
                        let comp = comp.clone();
                        let xp = x_prime.to_vec();
                        move |v: &[f64]| comp(&xp, v[0], &v[1..=m], xin, v[m + 1])
                    };
                    let x0 = vec![0.0; m + 2];
                    let plus = mixed_difference(&eval_at(1.0), &x0, &orders, h);
                    let minus = mixed_difference(&eval_at(-1.0), &x0, &orders, h);
                    let exponent = a.order - ell as i32 - alpha.iter().sum::<usize>() as i32 - j as i32;
                    let sign = if exponent.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                    let rhs = &minus * c(sign);
                    let diff = crate::linalg::frobenius(&(&plus - &rhs));
                    let scale = crate::linalg::frobenius(&plus).max(crate::linalg::frobenius(&rhs)).max(1.0);
                    let ok = diff <= 1e-4 * scale;
                    entries.push(TransmissionEntry {
                        k,
                        alpha: alpha.clone(),
                        j,
                        ell,
                        plus: crate::linalg::frobenius(&plus),
                        minus_times_sign: crate::linalg::frobenius(&rhs),
                        ok,
                    });
                }
            }
        }
    }
    TransmissionReport { pass: entries.iter().all(|e| e.ok), entries }
}
