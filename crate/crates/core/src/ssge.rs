//! Spectral Stein gradient estimator.
//!
//! Nonparametric score estimates from samples: the leading eigenvectors of the
//! RBF Gram matrix give Nyström approximations of kernel eigenfunctions, and
//! the score is expanded in that basis with coefficients fixed by Stein's
//! identity.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{MarsError, Result};
use crate::linalg::squared_distance;

pub const DEFAULT_LENGTHSCALE: f64 = 0.2;
/// Fraction of the Gram spectrum kept when the number of eigenpairs is not
/// given.
pub const SPECTRAL_MASS: f64 = 0.99;

#[derive(Clone, Debug)]
pub struct SsgeModel {
    samples: DMatrix<f64>,
    lengthscale: f64,
    /// Descending, length J.
    eigenvalues: DVector<f64>,
    /// `n × J`, column j pairs with `eigenvalues[j]`.
    eigenvectors: DMatrix<f64>,
    /// `J × k`, row j is `β_j`.
    beta: DMatrix<f64>,
}

fn rbf(a: &[f64], b: &[f64], lengthscale: f64) -> f64 {
    (-squared_distance(a, b) / (2.0 * lengthscale * lengthscale)).exp()
}

/// RBF Gram matrix of the sample rows.
pub fn gram(samples: &DMatrix<f64>, lengthscale: f64) -> DMatrix<f64> {
    let n = samples.nrows();
    let rows: Vec<Vec<f64>> = samples.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        g[(i, i)] = 1.0;
        for j in 0..i {
            let v = rbf(&rows[i], &rows[j], lengthscale);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue.
pub fn sorted_eigen(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Median pairwise Euclidean distance between sample rows.
pub fn median_heuristic(samples: &DMatrix<f64>) -> f64 {
    let rows: Vec<Vec<f64>> = samples.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in 0..i {
            d.push(squared_distance(&rows[i], &rows[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    if d.len() % 2 == 1 {
        d[mid]
    } else {
        0.5 * (d[mid - 1] + d[mid])
    }
}

impl SsgeModel {
    /// `num_eigen = None` keeps the eigenpairs covering [`SPECTRAL_MASS`] of
    /// the spectrum, at most `n − 1`.
    pub fn fit(samples: &DMatrix<f64>, lengthscale: f64, num_eigen: Option<usize>) -> Result<Self> {
        let n = samples.nrows();
        if n < 2 {
            return Err(MarsError::invalid("the estimator needs at least two samples"));
        }
        if !(lengthscale > 0.0) || !lengthscale.is_finite() {
            return Err(MarsError::invalid("lengthscale must be positive"));
        }
        if let Some(j) = num_eigen {
            if j == 0 || j > n {
                return Err(MarsError::invalid(format!("need 1 ≤ J ≤ {n}, got {j}")));
            }
        }
        let g = gram(samples, lengthscale);
        let (values, vectors) = sorted_eigen(g.clone());
        let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
        if !(values[1].abs() > 1e-12 * values[0].abs()) {
            return Err(MarsError::numeric("degenerate Gram matrix: samples are identical"));
        }
        let j = match num_eigen {
            Some(j) => j,
            None => {
                let mut acc = 0.0;
                let mut j = 0;
                while j < n && acc < SPECTRAL_MASS * total {
                    acc += values[j].max(0.0);
                    j += 1;
                }
                j.clamp(1, n - 1)
            }
        };
        if values[j - 1] <= 0.0 {
            return Err(MarsError::numeric("retained Gram eigenvalue is not positive"));
        }
        let eigenvalues = values.rows(0, j).into_owned();
        let eigenvectors = vectors.columns(0, j).into_owned();

        // β_j = −(1/n) Σ_i ∇ψ_j(x_i), ∇_x k(x, x_m) = −(x − x_m) k(x, x_m) / ℓ²
        let k = samples.ncols();
        let l2 = lengthscale * lengthscale;
        let rows: Vec<Vec<f64>> = samples.row_iter().map(|r| r.iter().copied().collect()).collect();
        let sqrt_n = (n as f64).sqrt();
        let mut beta = DMatrix::zeros(j, k);
        for i in 0..n {
            for m in 0..n {
                let kv = g[(i, m)];
                if kv == 0.0 {
                    continue;
                }
                for jj in 0..j {
                    let c = sqrt_n / eigenvalues[jj] * eigenvectors[(m, jj)] * kv / l2;
                    for d in 0..k {
                        beta[(jj, d)] += c * (rows[i][d] - rows[m][d]);
                    }
                }
            }
        }
        beta /= n as f64;
        Ok(SsgeModel {
            samples: samples.clone(),
            lengthscale,
            eigenvalues,
            eigenvectors,
            beta,
        })
    }

    pub fn num_eigen(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    /// Nyström eigenfunctions `ψ_j(x)`, length J.
    pub fn eigenfunctions(&self, x: &[f64]) -> DVector<f64> {
        let n = self.samples.nrows();
        let kx = DVector::from_fn(n, |m, _| {
            let row: Vec<f64> = self.samples.row(m).iter().copied().collect();
            rbf(x, &row, self.lengthscale)
        });
        let sqrt_n = (n as f64).sqrt();
        let proj = self.eigenvectors.transpose() * kx;
        DVector::from_fn(self.num_eigen(), |j, _| sqrt_n / self.eigenvalues[j] * proj[j])
    }

    /// `ŝ(x) = Σ_j β_j ψ_j(x)`.
    pub fn score(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.samples.ncols() {
            return Err(MarsError::invalid(format!(
                "query has {} entries, samples have {}",
                x.len(),
                self.samples.ncols()
            )));
        }
        let psi = self.eigenfunctions(x.as_slice());
        Ok(self.beta.transpose() * psi)
    }

    /// Scores of every query row.
    pub fn score_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for (r, row) in x.row_iter().enumerate() {
            let s = self.score(&row.transpose())?;
            out.row_mut(r).copy_from(&s.transpose());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Cyclic Jacobi rotations; slow but independent of the library solver.
    fn jacobi_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
        let n = a.nrows();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|(i, j)| i != j)
                .map(|(i, j)| a[(i, j)].powi(2))
                .sum();
            if off < 1e-26 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[(k, p)], a[(k, q)]);
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut v: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    fn normal_samples(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::seeded(seed);
        DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut r))
    }

    #[test]
    fn eigenvalues_match_jacobi_oracle() {
        let s = normal_samples(12, 3, 1);
        let g = gram(&s, 1.3);
        let (vals, vecs) = sorted_eigen(g.clone());
        let oracle = jacobi_eigenvalues(g.clone());
        for (a, b) in vals.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            assert!(*a >= -1e-8);
        }
        for j in 0..12 {
            let v = vecs.column(j);
            assert!((&g * v - v * vals[j]).norm() < 1e-8);
        }
    }

    #[test]
    fn minimal_and_degenerate_inputs() {
        let two = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let m = SsgeModel::fit(&two, 1.0, Some(1)).unwrap();
        assert!(m.score(&DVector::from_element(1, 0.3)).unwrap()[0].is_finite());
        let same = DMatrix::from_element(4, 2, 0.7);
        assert!(matches!(SsgeModel::fit(&same, 1.0, None), Err(MarsError::Numeric(_))));
        assert!(SsgeModel::fit(&two, 1.0, Some(3)).is_err());
        assert!(SsgeModel::fit(&two, 0.0, None).is_err());
    }

    #[test]
    fn recovers_standard_normal_score() {
        // Averaged over independent sample sets; a single set of 1000 draws
        // moves the estimate at the origin by up to ~0.2.
        let (mut at0, mut at1) = (0.0, 0.0);
        for seed in 0..4 {
            let m = SsgeModel::fit(&normal_samples(1000, 1, seed), 1.0, Some(6)).unwrap();
            at0 += m.score(&DVector::from_element(1, 0.0)).unwrap()[0] / 4.0;
            at1 += m.score(&DVector::from_element(1, 1.0)).unwrap()[0] / 4.0;
        }
        assert!(at0.abs() < 0.1, "{at0}");
        assert!((at1 + 1.0).abs() < 0.25, "{at1}");
    }

    #[test]
    fn symmetric_samples_give_zero_at_origin() {
        let half = normal_samples(20, 1, 3);
        let s = DMatrix::from_fn(40, 1, |i, _| if i < 20 { half[(i, 0)] } else { -half[(i - 20, 0)] });
        let m = SsgeModel::fit(&s, 0.8, Some(5)).unwrap();
        assert!(m.score(&DVector::from_element(1, 0.0)).unwrap()[0].abs() < 1e-8);
    }

    #[test]
    fn row_permutation_does_not_change_estimates() {
        let s = normal_samples(30, 2, 4);
        let p = DMatrix::from_fn(30, 2, |i, j| s[((i * 7) % 30, j)]);
        let a = SsgeModel::fit(&s, 1.0, Some(4)).unwrap();
        let b = SsgeModel::fit(&p, 1.0, Some(4)).unwrap();
        let q = DMatrix::from_row_slice(3, 2, &[0.1, -0.4, 1.2, 0.3, -2.0, 0.5]);
        assert!((a.score_rows(&q).unwrap() - b.score_rows(&q).unwrap()).norm() < 1e-9);
    }

    #[test]
    fn duplicate_sample_changes_little() {
        let s = normal_samples(40, 1, 5);
        let mut d = DMatrix::zeros(41, 1);
        d.rows_mut(0, 40).copy_from(&s);
        d[(40, 0)] = s[(0, 0)];
        let a = SsgeModel::fit(&s, 1.0, Some(5)).unwrap();
        let b = SsgeModel::fit(&d, 1.0, Some(5)).unwrap();
        let q = DVector::from_element(1, 0.5);
        let (sa, sb) = (a.score(&q).unwrap()[0], b.score(&q).unwrap()[0]);
        assert!(sb.is_finite() && (sa - sb).abs() < 0.5);
    }

    #[test]
    fn spectral_mass_selection() {
        let s = normal_samples(50, 2, 6);
        let m = SsgeModel::fit(&s, 1.0, None).unwrap();
        let (vals, _) = sorted_eigen(gram(&s, 1.0));
        let total: f64 = vals.iter().sum();
        let kept: f64 = m.eigenvalues().iter().sum();
        assert!(kept >= SPECTRAL_MASS * total - 1e-9);
        let without_last = kept - m.eigenvalues()[m.num_eigen() - 1];
        assert!(without_last < SPECTRAL_MASS * total);
        assert!(m.num_eigen() <= 49);
    }

    #[test]
    fn median_heuristic_value() {
        let s = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 3.0]);
        assert_eq!(median_heuristic(&s), 2.0);
    }
}
