use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Interpolator;
use crate::envs::Dataset;
use crate::error::{MarsError, Result};
use crate::nn::Mlp;
use crate::optim::{Adam, AdamConfig};
use crate::rng::Rng;

pub const HIDDEN: [usize; 3] = [32, 32, 32];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McDropoutConfig {
    pub dropout: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for McDropoutConfig {
    fn default() -> Self {
        McDropoutConfig {
            dropout: 0.1,
            epochs: 100,
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            batch_size: 8,
        }
    }
}

/// Leaky-ReLU network (3×32) trained with dropout on hidden activations.
/// Sampling is one forward pass with fresh dropout masks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McDropoutNet {
    pub mlp: Mlp,
    pub params: Vec<f64>,
    pub dropout: f64,
}

impl McDropoutNet {
    /// Truncated-normal weights (±2 std, std 1/√fan_in) and zero biases.
    pub fn init(input_dim: usize, dropout: f64, rng: &mut Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(MarsError::invalid(format!(
                "dropout probability {dropout} not in [0, 1)"
            )));
        }
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(&HIDDEN);
        sizes.push(1);
        let mlp = Mlp::new(sizes);
        let mut params = vec![0.0; mlp.num_params()];
        for l in 0..mlp.num_layers() {
            let (w, b) = mlp.layer_offsets(l);
            let std = 1.0 / (mlp.sizes()[l] as f64).sqrt();
            for p in params[w..b].iter_mut() {
                let z: f64 = loop {
                    let z: f64 = StandardNormal.sample(rng);
                    if z.abs() <= 2.0 {
                        break z;
                    }
                };
                *p = z * std;
            }
        }
        Ok(McDropoutNet { mlp, params, dropout })
    }

    /// Inverted-dropout masks: kept units are scaled by 1/(1−p).
    fn masks(&self, rows: usize, rng: &mut Rng) -> Vec<DMatrix<f64>> {
        let keep = 1.0 - self.dropout;
        self.mlp
            .hidden_widths()
            .iter()
            .map(|&w| {
                DMatrix::from_fn(rows, w, |_, _| {
                    if self.dropout == 0.0 || rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
            })
            .collect()
    }

    /// Deterministic pass without dropout.
    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.mlp.forward(&self.params, x)
    }

    /// One stochastic pass; the dropout mask is shared by all rows of `x`,
    /// so the result is one coherent function draw.
    pub fn sample_pass(&self, x: &DMatrix<f64>, rng: &mut Rng) -> DVector<f64> {
        if self.dropout == 0.0 {
            return self.predict(x);
        }
        let single = self.masks(1, rng);
        let masks: Vec<DMatrix<f64>> = single
            .iter()
            .map(|m| DMatrix::from_fn(x.nrows(), m.ncols(), |_, c| m[(0, c)]))
            .collect();
        self.mlp.forward_trace(&self.params, x, Some(masks)).output
    }

    /// Minimize mean squared error with AdamW; batches larger than the
    /// dataset fall back to the full dataset.
    pub fn fit(data: &Dataset, cfg: &McDropoutConfig, rng: &mut Rng) -> Result<Self> {
        let mut net = McDropoutNet::init(data.input_dim(), cfg.dropout, rng)?;
        if cfg.batch_size == 0 {
            return Err(MarsError::invalid("batch size must be ≥ 1"));
        }
        let m = data.len();
        let batch = cfg.batch_size.min(m);
        let mut adam = Adam::new(
            AdamConfig {
                weight_decay: cfg.weight_decay,
                ..AdamConfig::new(cfg.learning_rate)
            },
            net.params.len(),
        );
        let mut order: Vec<usize> = (0..m).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(batch) {
                let mb = data.select(chunk)?;
                let masks = (net.dropout > 0.0).then(|| net.masks(chunk.len(), rng));
                let trace = net.mlp.forward_trace(&net.params, mb.inputs(), masks);
                let resid = (&trace.output - mb.targets()) * (2.0 / chunk.len() as f64);
                let grad = net.mlp.vjp(&net.params, &trace, &resid);
                adam.step(&mut net.params, &grad);
            }
        }
        Ok(net)
    }
}

impl Interpolator for McDropoutNet {
    fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    fn sample(&self, x: &DMatrix<f64>, rng: &mut Rng) -> DVector<f64> {
        self.sample_pass(x, rng)
    }

    fn mean(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.predict(x)
    }
}
