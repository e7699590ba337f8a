use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{GpPosteriorMarginal, Interpolator, Kernel};
use crate::envs::{Dataset, TaskCollection};
use crate::error::{MarsError, Result};
use crate::linalg::{cholesky_with_jitter, symmetrize};
use crate::rng::Rng;

/// Hyperparameters of a zero-mean Matérn-5/2 GP.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl Default for GpHyper {
    fn default() -> Self {
        GpHyper {
            lengthscale: 1.0,
            signal_variance: 1.0,
            noise_variance: 0.01,
        }
    }
}

impl GpHyper {
    pub fn kernel(&self) -> Kernel {
        Kernel::Matern52 {
            lengthscale: self.lengthscale,
            signal_variance: self.signal_variance,
        }
    }
}

/// Zero-mean GP regression with a Matérn-5/2 kernel, conditioned on one task.
#[derive(Clone, Debug)]
pub struct MaternGp {
    hyper: GpHyper,
    train_x: DMatrix<f64>,
    train_y: DVector<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl MaternGp {
    pub fn fit(data: &Dataset, hyper: GpHyper) -> Result<Self> {
        Self::fit_raw(data.inputs().clone(), data.targets().clone(), hyper)
    }

    /// The unconditioned prior over `d`-dimensional inputs.
    pub fn prior(input_dim: usize, hyper: GpHyper) -> Result<Self> {
        Self::fit_raw(DMatrix::zeros(0, input_dim), DVector::zeros(0), hyper)
    }

    fn fit_raw(train_x: DMatrix<f64>, train_y: DVector<f64>, hyper: GpHyper) -> Result<Self> {
        if !(hyper.lengthscale > 0.0 && hyper.signal_variance > 0.0 && hyper.noise_variance >= 0.0) {
            return Err(MarsError::invalid(format!("bad GP hyperparameters {hyper:?}")));
        }
        if train_x.nrows() == 0 {
            return Ok(MaternGp {
                hyper,
                train_x,
                train_y,
                chol: None,
                alpha: DVector::zeros(0),
                jitter: 0.0,
            });
        }
        let mut k = hyper.kernel().gram(&train_x, &train_x);
        for i in 0..k.nrows() {
            k[(i, i)] += hyper.noise_variance;
        }
        let (chol, jitter) = cholesky_with_jitter(&k)?;
        let alpha = chol.solve(&train_y);
        Ok(MaternGp {
            hyper,
            train_x,
            train_y,
            chol: Some(chol),
            alpha,
            jitter,
        })
    }

    pub fn hyper(&self) -> GpHyper {
        self.hyper
    }

    /// Diagonal jitter that was needed on top of the noise variance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn num_train(&self) -> usize {
        self.train_y.len()
    }

    /// Lower Cholesky factor of `K + σ_n² I` (plus jitter), if there is data.
    pub fn factor(&self) -> Option<DMatrix<f64>> {
        self.chol.as_ref().map(|c| c.l())
    }

    /// `−½ yᵀ(K+σ_n²I)⁻¹y − ½ log det(K+σ_n²I) − (m/2) log 2π`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let Some(chol) = self.chol.as_ref() else {
            return 0.0;
        };
        let m = self.train_y.len() as f64;
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        -0.5 * self.train_y.dot(&self.alpha) - 0.5 * log_det - 0.5 * m * (2.0 * std::f64::consts::PI).ln()
    }

    /// Joint posterior over the latent function at the rows of `x`.
    pub fn posterior_marginal(&self, x: &DMatrix<f64>) -> GpPosteriorMarginal {
        let kern = self.hyper.kernel();
        let mut cov = kern.gram(x, x);
        let Some(chol) = self.chol.as_ref() else {
            return GpPosteriorMarginal {
                mean: DVector::zeros(x.nrows()),
                cov,
            };
        };
        let k_star = kern.gram(&self.train_x, x);
        let mean = k_star.transpose() * &self.alpha;
        let mut v = k_star;
        chol.l_dirty().solve_lower_triangular_mut(&mut v);
        cov -= v.transpose() * v;
        symmetrize(&mut cov);
        GpPosteriorMarginal { mean, cov }
    }

    /// Log density of held-out observations under the noisy posterior predictive.
    fn heldout_log_density(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
        let mut pred = self.posterior_marginal(x);
        for i in 0..pred.cov.nrows() {
            pred.cov[(i, i)] += self.hyper.noise_variance;
        }
        let (chol, _) = cholesky_with_jitter(&pred.cov)?;
        let r = y - &pred.mean;
        let quad = r.dot(&chol.solve(&r));
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(-0.5 * quad - 0.5 * log_det - 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln())
    }
}

impl Interpolator for MaternGp {
    fn input_dim(&self) -> usize {
        self.train_x.ncols()
    }

    fn sample(&self, x: &DMatrix<f64>, rng: &mut Rng) -> DVector<f64> {
        self.posterior_marginal(x).sample(rng)
    }

    fn mean(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.posterior_marginal(x).mean
    }
}

/// 10 log-uniformly spaced lengthscales in `[0.001, 10]`.
pub fn default_lengthscale_grid() -> Vec<f64> {
    (0..10).map(|i| 10f64.powf(-3.0 + 4.0 * i as f64 / 9.0)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSelection {
    pub lengthscale: f64,
    pub candidates: Vec<f64>,
    /// Mean held-out log likelihood per candidate.
    pub scores: Vec<f64>,
}

/// Fold index of every row: a seeded shuffle cut into 4 contiguous blocks
/// of size ⌊m/4⌋ or ⌈m/4⌉.
fn four_folds(m: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(rng);
    let mut folds = Vec::with_capacity(4);
    let mut start = 0;
    for f in 0..4 {
        let size = m / 4 + usize::from(f < m % 4);
        folds.push(idx[start..start + size].to_vec());
        start += size;
    }
    folds
}

/// Pick the Matérn lengthscale maximizing the 4-fold cross-validated
/// held-out log likelihood, averaged over folds and tasks. Ties go to the
/// earlier candidate. Signal and noise variance stay fixed at `base`.
pub fn cv_select_lengthscale(
    tasks: &TaskCollection,
    candidates: &[f64],
    base: GpHyper,
    rng: &mut Rng,
) -> Result<CvSelection> {
    if candidates.is_empty() {
        return Err(MarsError::invalid("no lengthscale candidates"));
    }
    if let Some((i, t)) = tasks.tasks().iter().enumerate().find(|(_, t)| t.len() < 4) {
        return Err(MarsError::invalid(format!(
            "task {i} has {} points; 4-fold cross-validation needs at least 4",
            t.len()
        )));
    }
    let folds: Vec<Vec<Vec<usize>>> = tasks.tasks().iter().map(|t| four_folds(t.len(), rng)).collect();

    let mut scores = Vec::with_capacity(candidates.len());
    for &ls in candidates {
        let hyper = GpHyper {
            lengthscale: ls,
            ..base
        };
        let mut total = 0.0;
        let mut count = 0usize;
        for (task, task_folds) in tasks.tasks().iter().zip(&folds) {
            for held in task_folds {
                let train: Vec<usize> = task_folds
                    .iter()
                    .filter(|f| !std::ptr::eq(*f, held))
                    .flatten()
                    .copied()
                    .collect();
                let gp = MaternGp::fit(&task.select(&train)?, hyper)?;
                let val = task.select(held)?;
                total += gp.heldout_log_density(val.inputs(), val.targets())?;
                count += 1;
            }
        }
        scores.push(total / count as f64);
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(CvSelection {
        lengthscale: candidates[best],
        candidates: candidates.to_vec(),
        scores,
    })
}
