//! Finite-dimensional Toeplitz-type inversion: `a` maps `im pi0` to `im pi1`,
//! and `b` with `ab = pi1`, `ba = pi0` is built from the gap operator
//! `a0 = a* a + (1 - pi0)* (1 - pi0)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{c, inverse, lstsq, min_singular_value, numerical_rank, op_norm, range_basis, singular_values, CMat, C64};

/// Singular values below `RANK_TOL * sigma_max` count as zero.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ProjectionTriple {
    pub pi0: CMat,
    pub pi1: CMat,
    pub a: CMat,
}

fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

impl ProjectionTriple {
    pub fn new(pi0: CMat, pi1: CMat, a: CMat) -> Result<Self> {
        if !pi0.is_square() || !pi1.is_square() || a.shape() != (pi1.nrows(), pi0.nrows()) {
            return Err(Error::Dimension(format!(
                "pi0 {:?}, pi1 {:?}, a {:?}",
                pi0.shape(),
                pi1.shape(),
                a.shape()
            )));
        }
        for p in [&pi0, &pi1] {
            let d = max_abs(&(p * p - p));
            if d > 1e-10 * p.norm().max(1.0) {
                return Err(Error::NotIdempotent(d));
            }
        }
        let i0 = CMat::identity(pi0.nrows(), pi0.nrows());
        let i1 = CMat::identity(pi1.nrows(), pi1.nrows());
        let scale = a.norm().max(1.0) * pi0.norm().max(pi1.norm()).max(1.0);
        let d0 = max_abs(&(&a * (&i0 - &pi0)));
        let d1 = max_abs(&((&i1 - &pi1) * &a));
        if d0 > 1e-10 * scale || d1 > 1e-10 * scale {
            return Err(Error::InvalidArgument(format!("a(1 - pi0) = {d0:.2e}, (1 - pi1)a = {d1:.2e}; both must vanish")));
        }
        Ok(Self { pi0, pi1, a })
    }

    /// `(pi1*, pi0*, a*)`.
    pub fn adjoint(&self) -> Self {
        Self { pi0: self.pi1.adjoint(), pi1: self.pi0.adjoint(), a: self.a.adjoint() }
    }
}

/// `a0 = a* a + (1 - pi0)* (1 - pi0)`.
pub fn gap_operator(t: &ProjectionTriple) -> CMat {
    let n = t.pi0.nrows();
    let comp = CMat::identity(n, n) - &t.pi0;
    t.a.adjoint() * &t.a + comp.adjoint() * comp
}

/// `[a; 1 - pi0]`, so that `a0 = M* M`.
fn stacked(t: &ProjectionTriple) -> CMat {
    let (n0, n1) = (t.pi0.nrows(), t.pi1.nrows());
    let mut m = CMat::zeros(n1 + n0, n0);
    m.view_mut((0, 0), (n1, n0)).copy_from(&t.a);
    m.view_mut((n1, 0), (n0, n0)).copy_from(&(CMat::identity(n0, n0) - &t.pi0));
    m
}

/// Whether `a0` is numerically invertible, with the relative smallest singular
/// value of `a0`.
pub fn gap_invertible(t: &ProjectionTriple) -> (bool, f64) {
    let sv = singular_values(&stacked(t));
    let rel = sv.last().copied().unwrap_or(0.0) / sv.first().copied().unwrap_or(1.0).max(1e-300);
    (rel > RANK_TOL, rel * rel)
}

/// `b_L = pi0 a0^{-1} a* pi1`.
///
/// `a0^{-1} a*` is applied as the pseudo-inverse of `[a; 1 - pi0]` on `[1; 0]`,
/// which avoids squaring the condition number.
pub fn left_parametrix(t: &ProjectionTriple) -> Result<CMat> {
    let (ok, rel) = gap_invertible(t);
    if !ok {
        return Err(Error::NotElliptic { xi: vec![], mu: 0.0, min_sv: rel * op_norm(&gap_operator(t)) });
    }
    let (n0, n1) = (t.pi0.nrows(), t.pi1.nrows());
    let mut rhs = CMat::zeros(n1 + n0, n1);
    rhs.view_mut((0, 0), (n1, n1)).copy_from(&t.pi1);
    Ok(&t.pi0 * lstsq(&stacked(t), &rhs))
}

/// Adjoint of the left parametrix of the adjoint triple.
pub fn right_parametrix(t: &ProjectionTriple) -> Result<CMat> {
    Ok(left_parametrix(&t.adjoint())?.adjoint())
}

/// `b = iota0 a_hat^{-1} pi1_hat`, with `a_hat` the restriction `im pi0 -> im pi1` in
/// orthonormal range bases.
pub fn toeplitz_invert(t: &ProjectionTriple) -> Result<CMat> {
    let q0 = range_basis(&t.pi0, RANK_TOL);
    let q1 = range_basis(&t.pi1, RANK_TOL);
    let (r0, r1) = (q0.ncols(), q1.ncols());
    let a_hat = q1.adjoint() * &t.a * &q0;
    let rank = if a_hat.is_empty() { 0 } else { numerical_rank(&a_hat, RANK_TOL) };
    if r0 != r1 || rank != r0 {
        return Err(Error::RankDeficient { rank, expected: r0.max(r1) });
    }
    if r0 == 0 {
        return Ok(CMat::zeros(t.pi0.nrows(), t.pi1.nrows()));
    }
    let inv = inverse(&a_hat).ok_or(Error::RankDeficient { rank, expected: r0 })?;
    Ok(q0 * inv * q1.adjoint() * &t.pi1)
}

fn random_matrix<R: Rng>(rng: &mut R, r: usize, c_: usize) -> CMat {
    CMat::from_fn(r, c_, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

/// `P = X (Y X)^{-1} Y` with random `X` (`n x r`) and `Y` (`r x n`); returns `(P, X, (YX)^{-1} Y)`.
pub fn random_idempotent<R: Rng>(rng: &mut R, n: usize, r: usize) -> (CMat, CMat, CMat) {
    loop {
        let x = random_matrix(rng, n, r);
        let y = random_matrix(rng, r, n);
        if r == 0 {
            return (CMat::zeros(n, n), x, y);
        }
        if let Some(inv) = inverse(&(&y * &x)) {
            if min_singular_value(&(&y * &x)) > 1e-2 {
                let left = inv * y;
                return (&x * &left, x, left);
            }
        }
    }
}

/// Random triple whose restriction `im pi0 -> im pi1` has rank `restriction_rank`
/// (bijective when it equals `r`).
pub fn random_triple<R: Rng>(rng: &mut R, n0: usize, n1: usize, r: usize, restriction_rank: usize) -> ProjectionTriple {
    let (pi0, _, left0) = random_idempotent(rng, n0, r);
    let (pi1, x1, _) = random_idempotent(rng, n1, r);
    let k = if restriction_rank >= r {
        loop {
            let k = random_matrix(rng, r, r);
            if min_singular_value(&k) > 0.05 {
                break k;
            }
        }
    } else {
        random_matrix(rng, r, restriction_rank) * random_matrix(rng, restriction_rank, r)
    };
    let a = x1 * k * left0;
    ProjectionTriple::new(pi0, pi1, a).expect("constructed triple satisfies the identities")
}

/// `V a U` with `U`, `V` invertible and commuting with `pi0`, `pi1`.
pub fn random_similarity<R: Rng>(rng: &mut R, t: &ProjectionTriple) -> ProjectionTriple {
    let commuting = |rng: &mut R, p: &CMat| -> CMat {
        let n = p.nrows();
        let id = CMat::identity(n, n);
        let q = &id - p;
        let a = &id + random_matrix(rng, n, n) * c(0.2 / n as f64);
        let b = &id + random_matrix(rng, n, n) * c(0.2 / n as f64);
        p * a * p + &q * b * &q
    };
    let u = commuting(rng, &t.pi0);
    let v = commuting(rng, &t.pi1);
    ProjectionTriple { pi0: t.pi0.clone(), pi1: t.pi1.clone(), a: v * &t.a * u }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_zero_cases() {
        let id = CMat::identity(4, 4);
        let t = ProjectionTriple::new(id.clone(), id.clone(), id.clone()).unwrap();
        assert_eq!(gap_operator(&t), id);
        assert!((left_parametrix(&t).unwrap() - &id).norm() < 1e-15);
        assert!((toeplitz_invert(&t).unwrap() - &id).norm() < 1e-14);
        let z = CMat::zeros(4, 4);
        let t = ProjectionTriple::new(z.clone(), z.clone(), z.clone()).unwrap();
        assert_eq!(gap_operator(&t), id);
    }

    #[test]
    fn rank_one_case() {
        let mut e = CMat::zeros(3, 3);
        e[(0, 0)] = c(1.0);
        let t = ProjectionTriple::new(e.clone(), e.clone(), e.clone()).unwrap();
        assert!((left_parametrix(&t).unwrap() - &e).norm() < 1e-15);
    }

    #[test]
    fn rejects_bad_triples() {
        let half = CMat::identity(2, 2) * c(0.5);
        assert!(matches!(ProjectionTriple::new(half.clone(), half.clone(), half), Err(Error::NotIdempotent(_))));
        let mut e = CMat::zeros(2, 2);
        e[(0, 0)] = c(1.0);
        assert!(ProjectionTriple::new(e.clone(), e, CMat::identity(2, 2)).is_err());
    }

    #[test]
    fn random_instance_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = random_triple(&mut rng, 12, 12, 5, 5);
        let a0 = gap_operator(&t);
        let inv = inverse(&a0).unwrap();
        assert!((&a0 * inv - CMat::identity(12, 12)).norm() <= 1e-9);
        let bl = left_parametrix(&t).unwrap();
        assert!(op_norm(&(&bl * &t.a - &t.pi0)) <= 1e-9);
        let b = toeplitz_invert(&t).unwrap();
        assert!(op_norm(&(&t.a * &b - &t.pi1)) <= 1e-9);
        assert!(op_norm(&(&b * &t.a - &t.pi0)) <= 1e-9);
        assert!(op_norm(&(t.a.adjoint() * b.adjoint() - t.pi0.adjoint())) <= 1e-9);
        assert!(op_norm(&(b.adjoint() * t.a.adjoint() - t.pi1.adjoint())) <= 1e-9);
        assert!(op_norm(&(&bl - right_parametrix(&t).unwrap())) <= 1e-8);
    }

    #[test]
    fn rank_deficient_restriction_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = random_triple(&mut rng, 10, 10, 4, 3);
        assert!(!gap_invertible(&t).0);
        assert!(matches!(toeplitz_invert(&t), Err(Error::RankDeficient { rank: 3, expected: 4 })));
        assert!(left_parametrix(&t).is_err());
    }
}
