//! Small dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use ndarray_linalg::SVD;
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Thin SVD `m = U diag(s) V*` by LAPACK, singular values descending.
///
/// nalgebra's own SVD returns wrong factors on some exactly rank-deficient
/// matrices, which is the common case for projections.
pub fn svd(m: &CMat) -> (CMat, Vec<f64>, CMat) {
    let (r, cols) = m.shape();
    let k = r.min(cols);
    if k == 0 {
        return (CMat::zeros(r, 0), Vec::new(), CMat::zeros(cols, 0));
    }
    let a = Array2::from_shape_fn((r, cols), |(i, j)| m[(i, j)]);
    let (u, s, vt) = a.svd(true, true).expect("LAPACK gesvd failed");
    let (u, vt) = (u.unwrap(), vt.unwrap());
    let uu = CMat::from_fn(r, k, |i, j| u[(i, j)]);
    let v = CMat::from_fn(cols, k, |i, j| vt[(j, i)].conj());
    (uu, s.to_vec(), v)
}

pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let a = Array2::from_shape_fn(m.shape(), |(i, j)| m[(i, j)]);
    let (_, s, _) = a.svd(false, false).expect("LAPACK gesvd failed");
    s.to_vec()
}

/// Smallest singular value of the map `C^ncols -> C^nrows`; zero if the map cannot be injective.
pub fn min_singular_value(m: &CMat) -> f64 {
    if m.ncols() == 0 {
        return f64::INFINITY;
    }
    if m.nrows() < m.ncols() {
        return 0.0;
    }
    singular_values(m).last().copied().unwrap_or(0.0)
}

pub fn op_norm(m: &CMat) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn inverse(m: &CMat) -> Option<CMat> {
    m.clone().try_inverse()
}

/// Unitary eigendecomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    let herm = (m + m.adjoint()) * c(0.5);
    let eig = herm.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMat::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// Orthonormal basis of the column range, using the relative threshold `rel_tol * sigma_max`.
pub fn range_basis(m: &CMat, rel_tol: f64) -> CMat {
    let (u, s, _) = svd(m);
    let smax = s.first().copied().unwrap_or(0.0);
    let k = s.iter().filter(|&&v| smax > 0.0 && v > rel_tol * smax).count();
    u.columns(0, k).into_owned()
}

/// Numerical rank with threshold `rel_tol * sigma_max`.
pub fn numerical_rank(m: &CMat, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    let smax = sv.first().copied().unwrap_or(0.0);
    sv.iter().filter(|&&s| smax > 0.0 && s > rel_tol * smax).count()
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    CMat::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Least-squares solve via SVD (minimum norm), dropping singular values below
/// `1e-14 sigma_max`.
pub fn lstsq(a: &CMat, b: &CMat) -> CMat {
    let (u, s, v) = svd(a);
    let smax = s.first().copied().unwrap_or(0.0);
    let mut x = u.adjoint() * b;
    for (k, sk) in s.iter().enumerate() {
        let f = if *sk > 1e-14 * smax && *sk > 0.0 { 1.0 / sk } else { 0.0 };
        x.row_mut(k).scale_mut(f);
    }
    v * x
}

/// Largest singular value by power iteration on `A* A`; `None` if not converged.
pub fn power_norm(apply: impl Fn(&CVec) -> CVec, apply_adj: impl Fn(&CVec) -> CVec, dim: usize, max_iter: usize, tol: f64) -> Option<(f64, usize)> {
    let mut v = CVec::from_fn(dim, |i, _| C64::new(1.0 + (i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()));
    let n0 = v.norm();
    v /= c(n0);
    let mut prev = 0.0;
    for it in 0..max_iter {
        let w = apply_adj(&apply(&v));
        // Rayleigh quotient of the Hermitian A*A
        let lam = v.dotc(&w).re;
        let wn = w.norm();
        if wn == 0.0 {
            return Some((0.0, it));
        }
        v = w / c(wn);
        if it > 2 && (lam - prev).abs() <= tol * lam {
            return Some((lam.sqrt(), it));
        }
        prev = lam;
    }
    None
}
