//! Fixtures shared by the benchmarks. Sizes follow the desk-scale sinusoid
//! configuration: 20 tasks of 8 points, measurement sets of 8.

use mars_core::envs::{sinusoid_tasks, SinusoidEnvConfig};
use mars_core::interpolate::GpHyper;
use mars_core::{rng, DMatrix, Dataset, MaternGp, MeasurementDistribution, ScoreNetConfig, TaskCollection};

pub const SET: usize = 8;

pub fn tasks(seed: u64) -> TaskCollection {
    sinusoid_tasks(&SinusoidEnvConfig::default(), &mut rng::seeded(seed)).expect("valid sinusoid config")
}

pub fn interpolators(tasks: &TaskCollection) -> Vec<MaternGp> {
    let hyper = GpHyper {
        lengthscale: 0.5,
        ..GpHyper::default()
    };
    tasks
        .tasks()
        .iter()
        .map(|t| MaternGp::fit(t, hyper).expect("fit"))
        .collect()
}

pub fn domain() -> MeasurementDistribution {
    MeasurementDistribution::new(vec![-5.0], vec![5.0]).expect("valid box")
}

/// The attention width used by the desk configs.
pub fn desk_network() -> ScoreNetConfig {
    ScoreNetConfig {
        embed_dim: 32,
        num_heads: 4,
        key_size: 8,
        ffn_hidden: 32,
        ..ScoreNetConfig::default()
    }
}

/// `(x, f)` token rows for one measurement set per task, stacked.
pub fn tokens(tasks: &TaskCollection, interps: &[MaternGp], seed: u64) -> DMatrix<f64> {
    let mut r = rng::seeded(seed);
    let x = domain().sample(SET, &mut r).expect("k > 0");
    let mut out = DMatrix::zeros(SET * tasks.len(), 2);
    for (i, gp) in interps.iter().enumerate() {
        let f = mars_core::Interpolator::sample(gp, &x, &mut r);
        for j in 0..SET {
            out[(i * SET + j, 0)] = x[(j, 0)];
            out[(i * SET + j, 1)] = f[j];
        }
    }
    out
}

pub fn context(tasks: &TaskCollection) -> Dataset {
    tasks.tasks()[0].clone()
}
