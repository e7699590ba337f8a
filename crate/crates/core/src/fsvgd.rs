//! Functional Stein variational gradient descent over neural-network particles.
//!
//! Each step evaluates every particle at a measurement set made of points drawn
//! from ν followed by a minibatch of training inputs, forms the posterior
//! marginal score (prior score plus Gaussian likelihood score), moves the
//! function values along the kernelized Stein direction and maps that move
//! back to the weights with the network's vector-Jacobian product.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::envs::{Dataset, MeasurementDistribution};
use crate::error::{MarsError, Result};
use crate::eval::GaussianMixture;
use crate::interpolate::{Interpolator, Kernel};
use crate::linalg::{cholesky_with_jitter, vstack};
use crate::nn::Mlp;
use crate::rng;
use crate::scorenet::{LayerRecord, ScoreNetworkParams, FORMAT_VERSION};
use crate::ssge::SsgeModel;
use crate::Rng;

pub const DEFAULT_HIDDEN: [usize; 3] = [32, 32, 32];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BnnArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

impl BnnArchitecture {
    pub fn new(input_dim: usize) -> Self {
        BnnArchitecture {
            input_dim,
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }

    pub fn mlp(&self) -> Mlp {
        let mut sizes = vec![self.input_dim];
        sizes.extend(&self.hidden);
        sizes.push(1);
        Mlp::new(sizes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDocument {
    pub format_version: u32,
    pub arch: BnnArchitecture,
    pub particles: Vec<Vec<LayerRecord>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub arch: BnnArchitecture,
    pub particles: Vec<Vec<f64>>,
}

impl ParticleEnsemble {
    pub fn new(arch: BnnArchitecture, particles: Vec<Vec<f64>>) -> Result<Self> {
        let n = arch.mlp().num_params();
        if particles.is_empty() || particles.iter().any(|p| p.len() != n) {
            return Err(MarsError::invalid(format!(
                "need at least one particle of {n} parameters"
            )));
        }
        Ok(ParticleEnsemble { arch, particles })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// One layer list per particle, in the score-network record format.
    pub fn to_document(&self) -> EnsembleDocument {
        let mlp = self.arch.mlp();
        let sizes = mlp.sizes();
        let particles = self
            .particles
            .iter()
            .map(|theta| {
                (0..mlp.num_layers())
                    .map(|l| {
                        let (w, b) = mlp.layer_offsets(l);
                        LayerRecord {
                            name: format!("layer{l}"),
                            rows: sizes[l],
                            cols: sizes[l + 1],
                            weights: theta[w..b].to_vec(),
                            bias: theta[b..b + sizes[l + 1]].to_vec(),
                            spectral_u: None,
                        }
                    })
                    .collect()
            })
            .collect();
        EnsembleDocument {
            format_version: FORMAT_VERSION,
            arch: self.arch.clone(),
            particles,
        }
    }

    pub fn from_document(doc: &EnsembleDocument) -> Result<Self> {
        if doc.format_version != FORMAT_VERSION {
            return Err(MarsError::Format(format!(
                "unsupported ensemble format {}",
                doc.format_version
            )));
        }
        let mlp = doc.arch.mlp();
        let sizes = mlp.sizes();
        let mut particles = Vec::with_capacity(doc.particles.len());
        for (p, layers) in doc.particles.iter().enumerate() {
            if layers.len() != mlp.num_layers() {
                return Err(MarsError::Format(format!(
                    "particle {p}: expected {} layers",
                    mlp.num_layers()
                )));
            }
            let mut theta = Vec::with_capacity(mlp.num_params());
            for (l, rec) in layers.iter().enumerate() {
                if rec.rows != sizes[l]
                    || rec.cols != sizes[l + 1]
                    || rec.weights.len() != rec.rows * rec.cols
                    || rec.bias.len() != rec.cols
                {
                    return Err(MarsError::Format(format!("particle {p} layer {l}: shape mismatch")));
                }
                theta.extend_from_slice(&rec.weights);
                theta.extend_from_slice(&rec.bias);
            }
            if theta.iter().any(|v| !v.is_finite()) {
                return Err(MarsError::Format(format!("particle {p}: non-finite weight")));
            }
            particles.push(theta);
        }
        ParticleEnsemble::new(doc.arch.clone(), particles).map_err(|e| MarsError::Format(e.to_string()))
    }

    /// `L × k` matrix of particle outputs at the rows of `x`.
    pub fn function_values(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mlp = self.arch.mlp();
        let mut h = DMatrix::zeros(self.len(), x.nrows());
        for (l, theta) in self.particles.iter().enumerate() {
            h.row_mut(l).copy_from(&mlp.forward(theta, x).transpose());
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// γ.
    pub step_size: f64,
    /// ℓ_k of the RBF kernel between particle function values.
    pub bandwidth: f64,
    /// σ of the Gaussian likelihood.
    pub likelihood_std: f64,
    pub num_particles: usize,
    pub steps: usize,
    /// Points drawn from ν per step.
    pub measurement_size: usize,
    /// Training points per step; every point is used when the data set is
    /// smaller.
    pub minibatch_size: usize,
    /// `θ ← θ − γ λ θ` each step; zero except for the weight-space prior baseline.
    pub weight_decay: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            step_size: 1e-3,
            bandwidth: 1.0,
            likelihood_std: 0.1,
            num_particles: 10,
            steps: 10000,
            measurement_size: 8,
            minibatch_size: 16,
            weight_decay: 0.0,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(MarsError::invalid("step_size must be finite and non-negative"));
        }
        if !pos(self.bandwidth) || !pos(self.likelihood_std) {
            return Err(MarsError::invalid("bandwidth and likelihood_std must be positive"));
        }
        if self.num_particles == 0 || self.measurement_size == 0 || self.minibatch_size == 0 {
            return Err(MarsError::invalid(
                "particle, measurement and minibatch counts must be ≥ 1",
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(MarsError::invalid("weight_decay must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum MeanFunction {
    Zero,
    Constant(f64),
}

impl MeanFunction {
    pub fn eval(&self, x: &DMatrix<f64>) -> DVector<f64> {
        match *self {
            MeanFunction::Zero => DVector::zeros(x.nrows()),
            MeanFunction::Constant(c) => DVector::from_element(x.nrows(), c),
        }
    }
}

/// Source of `∇_h ln p(h^X)` at the measurement set.
#[derive(Clone)]
pub enum PriorScore {
    Learned(Box<ScoreNetworkParams>),
    /// `−(K + jitter·I)⁻¹ (h − μ)`.
    AnalyticGp {
        kernel: Kernel,
        mean: MeanFunction,
        jitter: f64,
    },
    /// Re-fitted every step on function values drawn from the interpolators.
    Ssge {
        interpolators: Vec<Arc<dyn Interpolator>>,
        lengthscale: f64,
        num_eigen: Option<usize>,
        samples_per_interpolator: usize,
    },
    Zero,
}

impl std::fmt::Debug for PriorScore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PriorScore::Learned(_) => f.write_str("Learned"),
            PriorScore::AnalyticGp { kernel, mean, jitter } => f
                .debug_struct("AnalyticGp")
                .field("kernel", kernel)
                .field("mean", mean)
                .field("jitter", jitter)
                .finish(),
            PriorScore::Ssge {
                interpolators,
                lengthscale,
                ..
            } => f
                .debug_struct("Ssge")
                .field("interpolators", &interpolators.len())
                .field("lengthscale", lengthscale)
                .finish(),
            PriorScore::Zero => f.write_str("Zero"),
        }
    }
}

impl PriorScore {
    /// Scores of every row of `h` (`L × M`) at measurement inputs `x` (`M × d`).
    pub fn scores(&self, x: &DMatrix<f64>, h: &DMatrix<f64>, rng: &mut Rng) -> Result<DMatrix<f64>> {
        let (l, m) = h.shape();
        if x.nrows() != m {
            return Err(MarsError::invalid(format!(
                "{} inputs for {m} function values",
                x.nrows()
            )));
        }
        match self {
            PriorScore::Zero => Ok(DMatrix::zeros(l, m)),
            PriorScore::Learned(net) => {
                let d = x.ncols();
                let mut tokens = DMatrix::zeros(l * m, d + 1);
                for p in 0..l {
                    tokens.view_mut((p * m, 0), (m, d)).copy_from(x);
                    for i in 0..m {
                        tokens[(p * m + i, d)] = h[(p, i)];
                    }
                }
                let s = net.forward_sets(&tokens, m)?;
                Ok(DMatrix::from_fn(l, m, |p, i| s[(p * m + i, 0)]))
            }
            PriorScore::AnalyticGp { kernel, mean, jitter } => {
                let mut k = kernel.gram(x, x);
                for i in 0..m {
                    k[(i, i)] += jitter;
                }
                let (chol, _) = cholesky_with_jitter(&k)?;
                let mu = mean.eval(x);
                let mut out = DMatrix::zeros(l, m);
                for p in 0..l {
                    let diff = h.row(p).transpose() - &mu;
                    out.row_mut(p).copy_from(&(-chol.solve(&diff)).transpose());
                }
                Ok(out)
            }
            PriorScore::Ssge {
                interpolators,
                lengthscale,
                num_eigen,
                samples_per_interpolator,
            } => {
                let n = interpolators.len() * samples_per_interpolator;
                let mut samples = DMatrix::zeros(n, m);
                let mut r = 0;
                for interp in interpolators {
                    for _ in 0..*samples_per_interpolator {
                        samples.row_mut(r).copy_from(&interp.sample(x, rng).transpose());
                        r += 1;
                    }
                }
                SsgeModel::fit(&samples, *lengthscale, *num_eigen)?.score_rows(h)
            }
        }
    }
}

/// Unit direction `a/‖a‖` and bias `−⟨w, x*⟩` from the raw draws.
pub fn steinwart_from_draws(a: &[f64], x_star: &[f64]) -> (Vec<f64>, f64) {
    let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let w: Vec<f64> = a.iter().map(|v| v / norm).collect();
    (w.clone(), kink_bias(&w, x_star))
}

/// Bias putting the kink of a unit with weights `w` at `x*`.
pub fn kink_bias(w: &[f64], x_star: &[f64]) -> f64 {
    -w.iter().zip(x_star).map(|(a, b)| a * b).sum::<f64>()
}

fn uniform_point(low: &[f64], high: &[f64], rng: &mut Rng) -> Vec<f64> {
    low.iter()
        .zip(high)
        .map(|(&l, &h)| if h > l { rng.random_range(l..=h) } else { l })
        .collect()
}

/// `a ~ U(0,1)^fan_in`, `x* ~ U(low, high)`.
pub fn steinwart_bias_init(fan_in: usize, low: &[f64], high: &[f64], rng: &mut Rng) -> (Vec<f64>, f64) {
    assert!(fan_in >= 1 && low.len() == fan_in && high.len() == fan_in);
    // A zero draw for every coordinate has probability zero; redraw anyway.
    let a = loop {
        let a: Vec<f64> = (0..fan_in).map(|_| rng.random::<f64>()).collect();
        if a.iter().any(|&v| v > 0.0) {
            break a;
        }
    };
    let x_star = uniform_point(low, high, rng);
    steinwart_from_draws(&a, &x_star)
}

/// He-uniform weights; hidden biases put each unit's kink at a uniform point
/// of its input domain (the data hypercube for the first layer, `[−1, 1]` per
/// coordinate deeper). The output bias is zero.
pub fn init_particle(arch: &BnnArchitecture, domain: &MeasurementDistribution, rng: &mut Rng) -> Result<Vec<f64>> {
    if domain.dim() != arch.input_dim {
        return Err(MarsError::invalid("domain and architecture input sizes differ"));
    }
    let mlp = arch.mlp();
    let sizes = mlp.sizes().to_vec();
    let mut theta = vec![0.0; mlp.num_params()];
    for l in 0..mlp.num_layers() {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let (w_off, b_off) = mlp.layer_offsets(l);
        let r = (6.0 / fan_in as f64).sqrt();
        for v in &mut theta[w_off..b_off] {
            *v = rng.random_range(-r..=r);
        }
        if l + 1 == mlp.num_layers() {
            break;
        }
        let (low, high) = if l == 0 {
            (domain.low.clone(), domain.high.clone())
        } else {
            (vec![-1.0; fan_in], vec![1.0; fan_in])
        };
        for j in 0..fan_out {
            let w: Vec<f64> = (0..fan_in).map(|i| theta[w_off + i * fan_out + j]).collect();
            let x_star = uniform_point(&low, &high, rng);
            theta[b_off + j] = kink_bias(&w, &x_star);
        }
    }
    Ok(theta)
}

/// One independent random stream per particle.
pub fn init_particles(
    arch: &BnnArchitecture,
    num_particles: usize,
    domain: &MeasurementDistribution,
    rng: &mut Rng,
) -> Result<ParticleEnsemble> {
    if num_particles == 0 {
        return Err(MarsError::invalid("need at least one particle"));
    }
    let particles = (0..num_particles)
        .map(|_| init_particle(arch, domain, &mut rng::split(rng)))
        .collect::<Result<Vec<_>>>()?;
    ParticleEnsemble::new(arch.clone(), particles)
}

pub fn nn_forward(theta: &[f64], arch: &BnnArchitecture, x: &DMatrix<f64>) -> DVector<f64> {
    arch.mlp().forward(theta, x)
}

/// `(y_j − h_j)/σ²` on coordinates from `data_offset` on, zero before.
pub fn likelihood_score(y: &DVector<f64>, h: &DVector<f64>, data_offset: usize, sigma: f64) -> DVector<f64> {
    assert_eq!(h.len(), data_offset + y.len());
    let s2 = sigma * sigma;
    DVector::from_fn(h.len(), |i, _| {
        if i < data_offset {
            0.0
        } else {
            (y[i - data_offset] - h[i]) / s2
        }
    })
}

/// RBF kernel between particle rows and its gradients. `grads[l]` row `i` is
/// `∇_{h_i} k(h_i, h_l)`.
pub fn svgd_kernel(h: &DMatrix<f64>, bandwidth: f64) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let (l, m) = h.shape();
    let mut k = DMatrix::zeros(l, l);
    for i in 0..l {
        for j in 0..l {
            let d2 = (h.row(i) - h.row(j)).norm_squared();
            k[(i, j)] = (-d2 / (2.0 * bandwidth)).exp();
        }
    }
    let grads = (0..l)
        .map(|j| DMatrix::from_fn(l, m, |i, c| -(h[(i, c)] - h[(j, c)]) / bandwidth * k[(i, j)]))
        .collect();
    (k, grads)
}

/// `φ_l = (1/L) Σ_i [k(h_i, h_l) s_i + ∇_{h_i} k(h_i, h_l)]`, one row per particle.
pub fn svgd_direction(h: &DMatrix<f64>, scores: &DMatrix<f64>, bandwidth: f64) -> DMatrix<f64> {
    let l = h.nrows();
    let (k, grads) = svgd_kernel(h, bandwidth);
    let mut phi = DMatrix::zeros(l, h.ncols());
    for p in 0..l {
        let mut row = grads[p].row_sum();
        for i in 0..l {
            row += scores.row(i) * k[(i, p)];
        }
        phi.row_mut(p).copy_from(&(row / l as f64));
    }
    phi
}

/// Training rows used in one step: all of them when they fit, otherwise a
/// uniform subset without replacement.
pub fn minibatch_indices(m: usize, cap: usize, rng: &mut Rng) -> Vec<usize> {
    if m <= cap {
        (0..m).collect()
    } else {
        let mut idx = index::sample(rng, m, cap).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// One update of every particle. Without data the likelihood term vanishes
/// and the measurement set holds only the ν points.
pub fn fsvgd_step(
    ensemble: &mut ParticleEnsemble,
    data: Option<&Dataset>,
    prior: &PriorScore,
    nu: &MeasurementDistribution,
    cfg: &InferenceConfig,
    rng: &mut Rng,
) -> Result<()> {
    let mlp = ensemble.arch.mlp();
    let k = cfg.measurement_size;
    let x_nu = nu.sample(k, rng)?;
    let (x, y, lik_scale) = match data {
        Some(d) => {
            if d.input_dim() != ensemble.arch.input_dim {
                return Err(MarsError::invalid("data and particles disagree on input size"));
            }
            let idx = minibatch_indices(d.len(), cfg.minibatch_size, rng);
            let batch = d.select(&idx)?;
            let scale = d.len() as f64 / idx.len() as f64;
            (vstack(&x_nu, batch.inputs()), batch.targets().clone(), scale)
        }
        None => (x_nu, DVector::zeros(0), 0.0),
    };
    let traces: Vec<_> = ensemble
        .particles
        .iter()
        .map(|t| mlp.forward_trace(t, &x, None))
        .collect();
    let l = ensemble.len();
    let mut h = DMatrix::zeros(l, x.nrows());
    for (p, t) in traces.iter().enumerate() {
        h.row_mut(p).copy_from(&t.output.transpose());
    }
    let mut scores = prior.scores(&x, &h, rng)?;
    for p in 0..l {
        let lik = likelihood_score(&y, &h.row(p).transpose(), k, cfg.likelihood_std) * lik_scale;
        let mut row = scores.row_mut(p);
        row += lik.transpose();
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(MarsError::numeric("non-finite posterior score"));
    }
    let phi = svgd_direction(&h, &scores, cfg.bandwidth);
    assert_eq!(phi.shape(), h.shape());
    for (p, theta) in ensemble.particles.iter_mut().enumerate() {
        let g = mlp.vjp(theta, &traces[p], &phi.row(p).transpose());
        assert_eq!(g.len(), theta.len());
        for (t, gi) in theta.iter_mut().zip(&g) {
            *t += cfg.step_size * (gi - cfg.weight_decay * *t);
        }
    }
    if ensemble.particles.iter().flatten().any(|v| !v.is_finite()) {
        return Err(MarsError::numeric("particle weights diverged"));
    }
    Ok(())
}

pub fn run_inference(
    data: &Dataset,
    prior: &PriorScore,
    arch: &BnnArchitecture,
    nu: &MeasurementDistribution,
    cfg: &InferenceConfig,
    rng: &mut Rng,
) -> Result<ParticleEnsemble> {
    cfg.validate()?;
    let mut ensemble = init_particles(arch, cfg.num_particles, nu, rng)?;
    for _ in 0..cfg.steps {
        fsvgd_step(&mut ensemble, Some(data), prior, nu, cfg, rng)?;
    }
    Ok(ensemble)
}

/// Per query row, the equally weighted mixture of `N(h_l(x*), σ²)`.
pub fn predictive(ensemble: &ParticleEnsemble, sigma: f64, x: &DMatrix<f64>) -> Vec<GaussianMixture> {
    let h = ensemble.function_values(x);
    (0..x.nrows())
        .map(|i| GaussianMixture {
            means: h.column(i).iter().copied().collect(),
            std: sigma,
        })
        .collect()
}
