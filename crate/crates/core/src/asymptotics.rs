//! Two-ladder large-`mu` expansions of trace densities, and interior coefficients
//! `a_j = int a^{(d-j)}(xi, 1) dxi / (2 pi)^n`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{c, CMat, C64};
use crate::resolvent::gauss_legendre;

/// Exponents `{d - j + n - 1}` and `{d - nu - j}`, the second ladder with optional
/// `mu^p log mu` companions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionModel {
    pub ladder_a: Vec<f64>,
    pub ladder_b: Vec<(f64, bool)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Ladder {
    A,
    B,
}

/// One basis function `mu^p` or `mu^p log mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BasisTerm {
    pub ladder: Ladder,
    pub exponent: f64,
    pub log: bool,
}

impl BasisTerm {
    fn eval(&self, mu: f64) -> f64 {
        let p = mu.powf(self.exponent);
        if self.log { p * mu.ln() } else { p }
    }
}

impl ExpansionModel {
    pub fn new(ladder_a: Vec<f64>, ladder_b: Vec<(f64, bool)>) -> Result<Self> {
        let dec = |v: &[f64]| v.windows(2).all(|w| w[0] > w[1]);
        if !dec(&ladder_a) || !dec(&ladder_b.iter().map(|x| x.0).collect::<Vec<_>>()) {
            return Err(Error::InvalidArgument("exponents must decrease strictly within a ladder".into()));
        }
        Ok(Self { ladder_a, ladder_b })
    }

    /// Ladders from the metadata `(d, nu, n)` with `terms_a`, `terms_b` entries.
    pub fn from_orders(d: f64, nu: f64, n: usize, terms_a: usize, terms_b: usize, logs: bool) -> Result<Self> {
        let a = (0..terms_a).map(|j| d - j as f64 + n as f64 - 1.0).collect();
        let b = (0..terms_b).map(|j| (d - nu - j as f64, logs)).collect();
        Self::new(a, b)
    }

    pub fn basis(&self) -> Vec<BasisTerm> {
        let mut out: Vec<BasisTerm> = self.ladder_a.iter().map(|&p| BasisTerm { ladder: Ladder::A, exponent: p, log: false }).collect();
        for &(p, log) in &self.ladder_b {
            if log {
                out.push(BasisTerm { ladder: Ladder::B, exponent: p, log: true });
            }
            out.push(BasisTerm { ladder: Ladder::B, exponent: p, log: false });
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitTerm {
    pub term: BasisTerm,
    pub re: f64,
    pub im: f64,
}

impl FitTerm {
    pub fn coefficient(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub terms: Vec<FitTerm>,
    /// `||t - fit|| / ||t||`.
    pub residual: f64,
    /// Condition number of the column-normalized design matrix.
    pub condition: f64,
}

impl FitResult {
    pub fn coefficient(&self, exponent: f64, log: bool) -> Option<C64> {
        self.terms.iter().find(|t| t.term.exponent == exponent && t.term.log == log).map(|t| t.coefficient())
    }
}

/// 24 log-spaced values in `[2, 128]`.
pub fn default_mu_grid() -> Vec<f64> {
    (0..24).map(|k| 2.0 * 64f64.powf(k as f64 / 23.0)).collect()
}

/// Least squares on the basis `{mu^p, mu^p log mu}` with unit-norm columns.
pub fn fit_expansion(samples: &[(f64, C64)], model: &ExpansionModel) -> Result<FitResult> {
    fit_terms(samples, &model.basis())
}

fn fit_terms(samples: &[(f64, C64)], basis: &[BasisTerm]) -> Result<FitResult> {
    let (m, k) = (samples.len(), basis.len());
    if k == 0 || m < 2 * k {
        return Err(Error::InvalidArgument(format!("{m} samples for {k} basis functions; need at least twice as many")));
    }
    if samples.iter().any(|s| !(s.0 >= 2.0)) {
        return Err(Error::InvalidArgument("samples need mu >= 2".into()));
    }
    let mut a = DMatrix::from_fn(m, k, |i, j| basis[j].eval(samples[i].0));
    let scales: Vec<f64> = (0..k).map(|j| a.column(j).norm()).collect();
    for (j, s) in scales.iter().enumerate() {
        a.column_mut(j).unscale_mut(*s);
    }
    let ac = a.map(c);
    let sv = crate::linalg::singular_values(&ac);
    let (smax, smin) = (sv[0], sv[sv.len() - 1]);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if condition > 1e12 {
        return Err(Error::IllPosedFit(condition));
    }
    let rhs = CMat::from_iterator(m, 1, samples.iter().map(|s| s.1));
    let x = crate::linalg::lstsq(&ac, &rhs);
    let xr = DVector::from_iterator(k, x.iter().map(|z| z.re));
    let xi = DVector::from_iterator(k, x.iter().map(|z| z.im));
    let re = DVector::from_iterator(m, samples.iter().map(|s| s.1.re));
    let im = DVector::from_iterator(m, samples.iter().map(|s| s.1.im));
    let rr = &re - &a * &xr;
    let ri = &im - &a * &xi;
    let norm = (re.norm_squared() + im.norm_squared()).sqrt();
    let residual = (rr.norm_squared() + ri.norm_squared()).sqrt() / norm.max(1e-300);
    let terms = basis
        .iter()
        .enumerate()
        .map(|(j, t)| FitTerm { term: *t, re: xr[j] / scales[j], im: xi[j] / scales[j] })
        .collect();
    Ok(FitResult { terms, residual, condition })
}

#[derive(Debug, Clone, Serialize)]
pub struct LogPresence {
    pub present: bool,
    /// Residual without the log term over the residual with it.
    pub improvement: f64,
    /// `|c'| / max |c|` in the fit with the log term.
    pub relative_coefficient: f64,
}

/// Nested fits with and without `mu^p log mu` on top of `base`.
///
/// A log term is reported only when it improves the residual by a factor of 10,
/// its coefficient exceeds `1e-6` of the largest, and the fit without it is not
/// already exact to `1e-10`.
pub fn log_presence_test(samples: &[(f64, C64)], base: &ExpansionModel, p: f64) -> Result<LogPresence> {
    let without: Vec<BasisTerm> = base.basis().into_iter().filter(|t| !(t.log && t.exponent == p)).collect();
    let mut with = without.clone();
    with.push(BasisTerm { ladder: Ladder::B, exponent: p, log: true });
    let f0 = fit_terms(samples, &without)?;
    let f1 = fit_terms(samples, &with)?;
    let improvement = f0.residual / f1.residual.max(1e-300);
    let largest = f1.terms.iter().map(|t| t.coefficient().norm()).fold(0.0, f64::max);
    let relative_coefficient = f1.terms.last().unwrap().coefficient().norm() / largest.max(1e-300);
    let present = f0.residual > 1e-10 && improvement >= 10.0 && relative_coefficient > 1e-6;
    Ok(LogPresence { present, improvement, relative_coefficient })
}

/// Slope of `log |t|` against `log mu`.
pub fn leading_exponent(samples: &[(f64, C64)]) -> f64 {
    let pts: Vec<(f64, f64)> = samples.iter().map(|(m, t)| (m.ln(), t.norm().ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// `int_R f(x) dx` by Gauss-Legendre on `x = tan(phi)` over each half-line,
/// doubling until two rules agree to `1e-12`.
fn integrate_line(f: &dyn Fn(f64) -> C64) -> Result<C64> {
    let rule = |n: usize| -> C64 {
        let (x, w) = gauss_legendre(n);
        let mut acc = c(0.0);
        for sign in [-1.0, 1.0] {
            for (xi, wi) in x.iter().zip(&w) {
                let phi = 0.25 * PI * (xi + 1.0);
                let sec = 1.0 / phi.cos();
                acc += f(sign * phi.tan()) * (wi * 0.25 * PI * sec * sec);
            }
        }
        acc
    };
    let mut n = 32;
    let mut prev = rule(n);
    while n < 4096 {
        n *= 2;
        let cur = rule(n);
        if (cur - prev).norm() <= 1e-12 * cur.norm().max(1e-300) {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::NonConvergent("quadrature over R did not settle at 4096 nodes per half-line".into()))
}

/// `a_j(x) = int_{R^n} a^{(d-j)}(x, xi, 1) dxi / (2 pi)^n` for `n <= 3`.
///
/// `order` is the homogeneity `d - j` of the component; it must be below `-n`.
/// Decay is also checked numerically along a few rays.
pub fn interior_coefficient<F>(a: F, n: usize, order: f64) -> Result<C64>
where
    F: Fn(&[f64]) -> C64,
{
    if order >= -(n as f64) {
        return Err(Error::Order(format!("order {order} is not below -n = -{n}; the integral diverges")));
    }
    if n == 0 || n > 3 {
        return Err(Error::Order(format!("interior coefficients are implemented for 1 <= n <= 3, got {n}")));
    }
    // radial decay of the component must beat r^{-n}
    for dir in [[1.0, 0.0, 0.0], [-0.6, 0.8, 0.0], [0.6, 0.0, -0.8]] {
        let dir: Vec<f64> = dir[..n].to_vec();
        let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if len < 0.5 {
            continue;
        }
        let at = |r: f64| a(&dir.iter().map(|v| v * r / len).collect::<Vec<_>>()).norm();
        let (a1, a2) = (at(1e3), at(1e4));
        if a1 > 0.0 && a2 > 0.0 && (a2 / a1).log10() >= -(n as f64) {
            return Err(Error::Order(format!("component decays like r^{:.3}, not integrable in dimension {n}", (a2 / a1).log10())));
        }
    }
    let norm = (2.0 * PI).powi(n as i32);
    let v = match n {
        1 => integrate_line(&|x| a(&[x]))?,
        2 => {
            // polar: r in (0, inf) via the even extension in r
            let m = 64;
            let mut acc = c(0.0);
            for k in 0..m {
                let t = 2.0 * PI * k as f64 / m as f64;
                let (s, co) = t.sin_cos();
                acc += integrate_line(&|r| a(&[co * r, s * r]) * (0.5 * r.abs()))? * (2.0 * PI / m as f64);
            }
            acc
        }
        _ => {
            let m = 48;
            let (z, wz) = gauss_legendre(24);
            let mut acc = c(0.0);
            for (zc, wc) in z.iter().zip(&wz) {
                let sz = (1.0 - zc * zc).sqrt();
                for k in 0..m {
                    let t = 2.0 * PI * k as f64 / m as f64;
                    let dir = [sz * t.cos(), sz * t.sin(), *zc];
                    acc += integrate_line(&|r| a(&[dir[0] * r, dir[1] * r, dir[2] * r]) * (0.5 * r * r))? * (wc * 2.0 * PI / m as f64);
                }
            }
            acc
        }
    };
    Ok(v / norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(f: impl Fn(f64) -> C64) -> Vec<(f64, C64)> {
        default_mu_grid().into_iter().map(|m| (m, f(m))).collect()
    }

    #[test]
    fn recovers_constructed_coefficients() {
        let s = samples(|m| c(3.0 / m + 5.0 / (m * m)));
        let model = ExpansionModel::new(vec![-1.0, -2.0], vec![]).unwrap();
        let fit = fit_expansion(&s, &model).unwrap();
        assert!((fit.coefficient(-1.0, false).unwrap() - c(3.0)).norm() < 1e-10);
        assert!((fit.coefficient(-2.0, false).unwrap() - c(5.0)).norm() < 1e-10);
        assert!(fit.residual <= 1e-10);

        let s = samples(|m| c(2.0 * m.ln() / (m * m)));
        let model = ExpansionModel::new(vec![-1.0], vec![(-2.0, true)]).unwrap();
        let fit = fit_expansion(&s, &model).unwrap();
        assert!((fit.coefficient(-2.0, true).unwrap() - c(2.0)).norm() < 1e-9);
        assert!(fit.coefficient(-2.0, false).unwrap().norm() < 1e-9);
    }

    #[test]
    fn fit_preconditions() {
        let s = samples(|m| c(1.0 / m));
        let dup = ExpansionModel::new(vec![-1.0], vec![(-1.0, false)]).unwrap();
        assert!(matches!(fit_expansion(&s, &dup), Err(Error::IllPosedFit(_))));
        let few: Vec<_> = s.iter().take(3).cloned().collect();
        assert!(fit_expansion(&few, &ExpansionModel::new(vec![-1.0, -2.0], vec![]).unwrap()).is_err());
        assert!(ExpansionModel::new(vec![-2.0, -1.0], vec![]).is_err());
        let m = ExpansionModel::from_orders(-2.0, 0.5, 2, 3, 2, true).unwrap();
        assert_eq!(m.ladder_a, vec![-1.0, -2.0, -3.0]);
        assert_eq!(m.ladder_b, vec![(-2.5, true), (-3.5, true)]);
    }

    #[test]
    fn log_detection() {
        let base = ExpansionModel::new(vec![-1.0, -2.0, -3.0], vec![]).unwrap();
        let pure = samples(|m| c(1.0 / m - 0.3 / (m * m)));
        assert!(!log_presence_test(&pure, &base, -2.0).unwrap().present);
        let logged = samples(|m| c(1.0 / m + m.ln() / (m * m)));
        assert!(log_presence_test(&logged, &base, -2.0).unwrap().present);
    }

    #[test]
    fn interior_coefficient_examples() {
        let v = interior_coefficient(|x| c(1.0) / c(x[0] * x[0] + 1.0), 1, -2.0).unwrap();
        assert!((v - c(0.5)).norm() < 1e-12);
        assert_eq!(interior_coefficient(|_| c(0.0), 1, -2.0).unwrap(), c(0.0));
        let e = C64::from_polar(1.0, 0.5 * PI);
        let v = interior_coefficient(|x| c(1.0) / (c(x[0] * x[0]) - e), 1, -2.0).unwrap();
        assert!((v - C64::from_polar(0.5, 0.25 * PI)).norm() < 1e-12);
        // (|xi|^2 + 1)^{-2} in R^2: pi / (2 pi)^2
        let v = interior_coefficient(|x| c(1.0 / (x[0] * x[0] + x[1] * x[1] + 1.0).powi(2)), 2, -4.0).unwrap();
        assert!((v - c(0.25 / PI)).norm() < 1e-10);
        // (|xi|^2 + 1)^{-2} in R^3: pi^2 / (2 pi)^3
        let v = interior_coefficient(|x| c(1.0 / (x.iter().map(|y| y * y).sum::<f64>() + 1.0).powi(2)), 3, -4.0).unwrap();
        assert!((v - c(1.0 / (8.0 * PI))).norm() < 1e-10);
        assert!(matches!(interior_coefficient(|x| c(1.0) / c(x[0].abs() + 1.0), 1, -1.0), Err(Error::Order(_))));
        assert!(matches!(interior_coefficient(|x| c(1.0) / c(x[0].abs() + 1.0), 1, -2.0), Err(Error::Order(_))));
    }
}
