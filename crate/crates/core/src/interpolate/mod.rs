//! Per-task Bayesian interpolators: they turn a handful of noisy observations
//! into a distribution over function values at any measurement set.

mod gp;
mod mcdropout;

pub use gp::{cv_select_lengthscale, default_lengthscale_grid, CvSelection, GpHyper, MaternGp};
pub use mcdropout::{McDropoutConfig, McDropoutNet};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{psd_cholesky, squared_distance};
use crate::rng::Rng;

/// Stationary covariance functions on `ℝ^d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// Matérn with smoothness 5/2.
    Matern52 { lengthscale: f64, signal_variance: f64 },
    /// Squared exponential, `σ² exp(−r²/(2ℓ²))`.
    Rbf { lengthscale: f64, signal_variance: f64 },
}

/// `σ²(1 + √5 r/ℓ + 5r²/(3ℓ²)) exp(−√5 r/ℓ)` with `r = ‖x − x′‖₂`.
pub fn matern52_kernel(x: &[f64], x2: &[f64], lengthscale: f64, signal_variance: f64) -> f64 {
    debug_assert!(lengthscale > 0.0);
    let r = squared_distance(x, x2).sqrt();
    let s = 5f64.sqrt() * r / lengthscale;
    signal_variance * (1.0 + s + s * s / 3.0) * (-s).exp()
}

impl Kernel {
    pub fn eval(&self, x: &[f64], x2: &[f64]) -> f64 {
        match *self {
            Kernel::Matern52 {
                lengthscale,
                signal_variance,
            } => matern52_kernel(x, x2, lengthscale, signal_variance),
            Kernel::Rbf {
                lengthscale,
                signal_variance,
            } => signal_variance * (-squared_distance(x, x2) / (2.0 * lengthscale * lengthscale)).exp(),
        }
    }

    /// Cross-covariance between the rows of `a` and the rows of `b`.
    pub fn gram(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let ra: Vec<Vec<f64>> = a.row_iter().map(|r| r.iter().copied().collect()).collect();
        let rb: Vec<Vec<f64>> = b.row_iter().map(|r| r.iter().copied().collect()).collect();
        DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| self.eval(&ra[i], &rb[j]))
    }
}

/// Joint Gaussian over function values at a measurement set.
#[derive(Clone, Debug, PartialEq)]
pub struct GpPosteriorMarginal {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GpPosteriorMarginal {
    /// One joint draw `mean + L z` with `L Lᵀ = cov`. A zero covariance gives
    /// back the mean exactly.
    pub fn sample(&self, rng: &mut Rng) -> DVector<f64> {
        let l = psd_cholesky(&self.cov);
        self.sample_with_factor(&l, rng)
    }

    pub fn sample_with_factor(&self, l: &DMatrix<f64>, rng: &mut Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| StandardNormal.sample(rng));
        &self.mean + l * z
    }
}

/// A fitted per-task model that can produce function values at arbitrary
/// inputs.
pub trait Interpolator: Send + Sync {
    fn input_dim(&self) -> usize;

    /// A random draw of function values at the rows of `x`.
    fn sample(&self, x: &DMatrix<f64>, rng: &mut Rng) -> DVector<f64>;

    /// The posterior mean at the rows of `x`.
    fn mean(&self, x: &DMatrix<f64>) -> DVector<f64>;
}
