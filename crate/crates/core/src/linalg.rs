//! Small dense linear-algebra helpers shared by the GP and score code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{MarsError, Result};

/// Diagonal jitter tried in order when a Cholesky factorization fails.
pub const JITTER_LADDER: [f64; 5] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4];

/// Cholesky factorization of a symmetric matrix, escalating diagonal jitter
/// along [`JITTER_LADDER`]. Returns the factor and the jitter that was used.
pub fn cholesky_with_jitter(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if a.nrows() != a.ncols() {
        return Err(MarsError::invalid("cholesky of a non-square matrix"));
    }
    for &jitter in JITTER_LADDER.iter() {
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok((chol, jitter));
        }
    }
    Err(MarsError::numeric(format!(
        "matrix of size {} is not positive definite even with jitter {:e}",
        a.nrows(),
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

/// Lower-triangular factor `L` with `L Lᵀ ≈ A` for a symmetric positive
/// semi-definite `A`. Pivots that are numerically zero (or slightly negative)
/// produce a zero column instead of failing, so a zero matrix factors to zero.
pub fn psd_cholesky(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let tol = scale * 1e-12;
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= tol {
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    l
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Row `i` of a matrix as an owned vector.
pub fn row_vec(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

/// Stack rows `a` on top of rows `b`. Column counts must agree.
pub fn vstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols());
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

pub fn concat_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_cholesky_of_zero_is_zero() {
        let l = psd_cholesky(&DMatrix::zeros(3, 3));
        assert!(l.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn psd_cholesky_matches_reconstruction() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.4, 2.0, 3.0, 0.1, 0.4, 0.1, 1.0]);
        let l = psd_cholesky(&a);
        assert!((&l * l.transpose() - &a).abs().max() < 1e-12);
    }

    #[test]
    fn rank_deficient_matrix_factors() {
        // rank one: v vᵀ
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let a = &v * v.transpose();
        let l = psd_cholesky(&a);
        assert!((&l * l.transpose() - &a).abs().max() < 1e-10);
    }

    #[test]
    fn jitter_ladder_rescues_singular_matrix() {
        let a = DMatrix::from_element(2, 2, 1.0);
        let (_, jitter) = cholesky_with_jitter(&a).unwrap();
        assert!(jitter > 0.0);
    }
}
