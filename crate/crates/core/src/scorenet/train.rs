use nalgebra::DMatrix;
use rand::seq::index;

use super::network::{ScoreNetConfig, ScoreNetworkParams, TokenLayout};
use super::stack_regression_tokens;
use crate::envs::{MeasurementDistribution, TaskCollection};
use crate::error::{MarsError, Result};
use crate::interpolate::Interpolator;
use crate::optim::{clip_global_norm, Adam, AdamConfig};
use crate::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct MetaTrainOptions {
    /// Measurement-set size.
    pub k: usize,
    /// Feed interpolator posterior means instead of posterior samples.
    pub use_posterior_mean: bool,
}

impl Default for MetaTrainOptions {
    fn default() -> Self {
        MetaTrainOptions {
            k: 8,
            use_posterior_mean: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ScoreNetworkParams,
    /// Loss at every iteration, before that iteration's update.
    pub losses: Vec<f64>,
}

/// Fits the score network to function values drawn from every task's
/// interpolator at fresh measurement sets.
pub fn meta_train(
    tasks: &TaskCollection,
    interpolators: &[&dyn Interpolator],
    nu: &MeasurementDistribution,
    cfg: &ScoreNetConfig,
    opts: &MetaTrainOptions,
    rng: &mut Rng,
) -> Result<TrainOutcome> {
    if interpolators.len() != tasks.len() {
        return Err(MarsError::invalid(format!(
            "{} tasks but {} interpolators",
            tasks.len(),
            interpolators.len()
        )));
    }
    if nu.dim() != tasks.input_dim() || interpolators.iter().any(|i| i.input_dim() != nu.dim()) {
        return Err(MarsError::invalid(
            "input dimensions of tasks, interpolators and hypercube disagree",
        ));
    }
    let layout = TokenLayout::Regression {
        input_dim: tasks.input_dim(),
    };
    let params = ScoreNetworkParams::init(cfg.clone(), layout, rng)?;
    optimize(
        params,
        cfg,
        |rng| {
            let x = nu.sample(opts.k, rng)?;
            let fs: Vec<_> = interpolators
                .iter()
                .map(|interp| {
                    if opts.use_posterior_mean {
                        interp.mean(&x)
                    } else {
                        interp.sample(&x, rng)
                    }
                })
                .collect();
            Ok((stack_regression_tokens(layout, &x, &fs)?, opts.k))
        },
        rng,
    )
}

/// Fits a distribution-mode network to i.i.d. samples, one row each. Every
/// iteration uses `sets_per_iter` random subsets of size `k`.
pub fn train_distribution(
    samples: &DMatrix<f64>,
    cfg: &ScoreNetConfig,
    k: usize,
    sets_per_iter: usize,
    rng: &mut Rng,
) -> Result<TrainOutcome> {
    let n = samples.nrows();
    if k == 0 || k > n || sets_per_iter == 0 {
        return Err(MarsError::invalid(format!("cannot draw sets of {k} from {n} samples")));
    }
    let layout = TokenLayout::Distribution { dim: samples.ncols() };
    let params = ScoreNetworkParams::init(cfg.clone(), layout, rng)?;
    optimize(
        params,
        cfg,
        |rng| {
            let mut tokens = DMatrix::zeros(k * sets_per_iter, samples.ncols());
            for s in 0..sets_per_iter {
                for (r, i) in index::sample(rng, n, k).into_iter().enumerate() {
                    tokens.row_mut(s * k + r).copy_from(&samples.row(i));
                }
            }
            Ok((tokens, k))
        },
        rng,
    )
}

/// One Adam step per call on the score-matching loss, with clipping and the
/// spectral projection of every changed layer.
pub struct ScoreTrainer {
    params: ScoreNetworkParams,
    adam: Adam,
    theta: Vec<f64>,
    iteration: usize,
}

impl ScoreTrainer {
    pub fn new(params: ScoreNetworkParams) -> Self {
        let adam = Adam::new(AdamConfig::new(params.config.learning_rate), params.num_params());
        let theta = params.to_flat();
        ScoreTrainer {
            params,
            adam,
            theta,
            iteration: 0,
        }
    }

    pub fn params(&self) -> &ScoreNetworkParams {
        &self.params
    }

    pub fn into_params(self) -> ScoreNetworkParams {
        self.params
    }

    /// Returns the loss before the update.
    pub fn step(&mut self, tokens: &DMatrix<f64>, set: usize) -> Result<f64> {
        let (loss, mut grad) = self.params.loss_and_gradient_sets(tokens, set)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(MarsError::numeric(format!(
                "non-finite score-matching loss at iteration {}",
                self.iteration
            )));
        }
        clip_global_norm(&mut grad, self.params.config.grad_clip);
        self.adam.step(&mut self.theta, &grad);
        let before = self.params.clone();
        self.params.set_flat(&self.theta);
        if self.params.config.spectral_norm_enabled {
            self.params.renormalize_changed(&before);
            self.theta = self.params.to_flat();
        }
        self.iteration += 1;
        Ok(loss)
    }
}

fn optimize(
    params: ScoreNetworkParams,
    cfg: &ScoreNetConfig,
    mut batch: impl FnMut(&mut Rng) -> Result<(DMatrix<f64>, usize)>,
    rng: &mut Rng,
) -> Result<TrainOutcome> {
    let mut trainer = ScoreTrainer::new(params);
    let mut losses = Vec::with_capacity(cfg.train_iters);
    for _ in 0..cfg.train_iters {
        let (tokens, set) = batch(rng)?;
        losses.push(trainer.step(&tokens, set)?);
    }
    Ok(TrainOutcome {
        params: trainer.into_params(),
        losses,
    })
}
