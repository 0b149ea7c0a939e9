//! Small dense linear-algebra helpers shared by the filters and the prior.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Condition number estimate from a Cholesky factor: (max L_ii / min L_ii)^2.
fn cholesky_condition(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    let n = l.nrows();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for i in 0..n {
        let d = l[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if lo == 0.0 || !lo.is_finite() {
        f64::INFINITY
    } else {
        (hi / lo).powi(2)
    }
}

pub(crate) const MAX_CONDITION: f64 = 1e14;

/// Cholesky factorization with a single jitter retry.
///
/// On failure (or a condition estimate above 1e14) the diagonal is loaded with
/// `1e-12 * trace / n` once. Returns the factor and the last condition
/// estimate; `None` if both attempts fail.
pub(crate) fn robust_cholesky(m: &DMatrix<f64>) -> std::result::Result<Cholesky<f64, Dyn>, f64> {
    let n = m.nrows();
    let mut condition = f64::INFINITY;
    if let Some(chol) = m.clone().cholesky() {
        condition = cholesky_condition(&chol);
        if condition <= MAX_CONDITION {
            return Ok(chol);
        }
    }
    let jitter = 1e-12 * m.trace().abs() / n.max(1) as f64;
    let mut loaded = m.clone();
    for i in 0..n {
        loaded[(i, i)] += jitter;
    }
    if let Some(chol) = loaded.cholesky() {
        condition = cholesky_condition(&chol);
        if condition <= MAX_CONDITION {
            return Ok(chol);
        }
    }
    Err(condition)
}

pub(crate) fn log_det_from_cholesky(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows()).map(|i| 2.0 * l[(i, i)].ln()).sum()
}

/// log N(x; mean, cov) given a Cholesky factor of `cov`.
pub(crate) fn gaussian_log_density(residual: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let n = residual.len() as f64;
    let solved = chol.solve(residual);
    let quad = residual.dot(&solved);
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + log_det_from_cholesky(chol) + quad)
}

/// Symmetric eigendecomposition with the eigenvalue range checked.
pub(crate) fn eigen_checked(m: &DMatrix<f64>, rel_floor: f64) -> Result<SymmetricEigen<f64, Dyn>> {
    let eig = symmetrize(m).symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || min < rel_floor * max {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: min,
            max_eigenvalue: max,
        });
    }
    Ok(eig)
}

/// A factor F with F·Fᵀ = cov for a PSD matrix; negative eigenvalues from
/// round-off are clamped to zero so degenerate covariances can be sampled.
pub fn psd_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(cov).symmetric_eigen();
    let mut f = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        f.column_mut(j).scale_mut(s);
    }
    f
}

pub fn standard_normal_vector(rng: &mut Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Largest absolute entry, used to scale relative comparisons.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_rescues_semidefinite_matrix() {
        let rank_one = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(robust_cholesky(&rank_one).is_ok());
        assert!(robust_cholesky(&DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn psd_factor_reconstructs() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let f = psd_factor(&m);
        assert!((&f * f.transpose() - &m).norm() < 1e-12);
    }

    #[test]
    fn log_density_matches_closed_form() {
        let cov = DMatrix::from_diagonal_element(2, 2, 2.0);
        let chol = cov.cholesky().unwrap();
        let r = DVector::from_vec(vec![0.0, 0.0]);
        let expected = -(2.0 * std::f64::consts::PI * 2.0).ln();
        assert!((gaussian_log_density(&r, &chol) - expected).abs() < 1e-14);
    }
}
