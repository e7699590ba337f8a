//! Meta-learning the score of a data-generating stochastic process.
//!
//! Stage one fits a Bayesian interpolator to every meta-training dataset and
//! trains a permutation-equivariant attention network with score matching on
//! function values sampled from those interpolators at random measurement
//! sets. Stage two plugs the learned marginal score into functional Stein
//! variational gradient descent over an ensemble of neural-network particles.
//!
//! The crate also ships the baselines and metrics needed to evaluate this:
//! analytic Gaussian-process prior scores, the spectral Stein gradient
//! estimator, RMSE and regression calibration error.

// Validators write `!(x > 0.0)` so that NaN is rejected with the other bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod envs;
pub mod error;
pub mod eval;
pub mod fsvgd;
pub mod interpolate;
pub mod linalg;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod scorenet;
pub mod ssge;

pub use envs::{Dataset, MeasurementDistribution, SinusoidParams, Standardizer, TaskCollection};
pub use error::{MarsError, Result};

pub use fsvgd::{BnnArchitecture, InferenceConfig, ParticleEnsemble, PriorScore};
pub use interpolate::{GpPosteriorMarginal, Interpolator, Kernel, MaternGp, McDropoutNet};
pub use rng::Rng;
pub use scorenet::{ScoreNetConfig, ScoreNetworkParams, TokenLayout};
pub use ssge::SsgeModel;

pub use nalgebra::{DMatrix, DVector};
