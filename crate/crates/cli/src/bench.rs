//! Score-quality benchmark on two-point marginals of a Gaussian or
//! Student-t process with mean `2x + 5 sin(2x)` and an RBF kernel (ℓ = 1).
//!
//! One measurement set and one training sample are drawn from the data seed;
//! the per-seed runs differ only in network initialization, so SSGE is the
//! same in every seed.

use mars_core::eval::{score_benchmark, ScoreQuality};
use mars_core::linalg::cholesky_with_jitter;
use mars_core::rng::{self, Rng};
use mars_core::scorenet::{ScoreTrainer, TokenLayout};
use mars_core::ssge::{median_heuristic, SsgeModel};
use mars_core::{DMatrix, DVector, Kernel, MarsError, Result, ScoreNetConfig, ScoreNetworkParams};
use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Jitter on the kernel matrix, as a GP library adds by default.
pub const KERNEL_JITTER: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setup {
    Gp2d,
    Tp2d,
}

impl std::str::FromStr for Setup {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gp2d" => Ok(Setup::Gp2d),
            "tp2d" => Ok(Setup::Tp2d),
            other => Err(format!("unknown benchmark setup '{other}' (expected gp2d or tp2d)")),
        }
    }
}

impl Setup {
    pub fn name(self) -> &'static str {
        match self {
            Setup::Gp2d => "gp2d",
            Setup::Tp2d => "tp2d",
        }
    }

    fn input_range(self) -> (f64, f64) {
        match self {
            Setup::Gp2d => (-5.0, 5.0),
            Setup::Tp2d => (-1.0, 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub points: usize,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub train_iters: usize,
    /// Degrees of freedom of the Student-t process.
    pub dof: f64,
    pub data_seed: u64,
    pub seeds: Vec<u64>,
    pub scorenet: ScoreNetConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            points: 2,
            train_samples: 50,
            eval_samples: 200,
            train_iters: 2000,
            dof: 5.0,
            data_seed: 0,
            seeds: vec![0, 1, 2, 3, 4],
            scorenet: ScoreNetConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.points == 0 || self.train_samples < 2 || self.eval_samples == 0 {
            return Err(MarsError::InvalidArgument(
                "bench needs ≥ 1 point, ≥ 2 training samples and ≥ 1 evaluation sample".into(),
            ));
        }
        if !(self.dof > 2.0) {
            return Err(MarsError::InvalidArgument(
                "Student-t degrees of freedom must exceed 2".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(MarsError::InvalidArgument("bench needs at least one seed".into()));
        }
        self.scorenet.validate()
    }
}

/// The marginal of the process at a fixed measurement set.
#[derive(Clone, Debug)]
pub struct Marginal {
    pub setup: Setup,
    pub x: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub dof: f64,
    chol: DMatrix<f64>,
}

pub fn process_mean(x: f64) -> f64 {
    2.0 * x + 5.0 * (2.0 * x).sin()
}

impl Marginal {
    pub fn new(setup: Setup, x: DMatrix<f64>, dof: f64) -> Result<Self> {
        let kernel = Kernel::Rbf {
            lengthscale: 1.0,
            signal_variance: 1.0,
        };
        let mut cov = kernel.gram(&x, &x);
        for i in 0..cov.nrows() {
            cov[(i, i)] += KERNEL_JITTER;
        }
        let (chol, _) = cholesky_with_jitter(&cov)?;
        let chol = chol.l();
        let mean = DVector::from_iterator(x.nrows(), x.column(0).iter().map(|&v| process_mean(v)));
        Ok(Marginal {
            setup,
            x,
            mean,
            cov,
            dof,
            chol,
        })
    }

    pub fn draw(setup: Setup, points: usize, dof: f64, rng: &mut Rng) -> Result<Self> {
        let (lo, hi) = setup.input_range();
        let x = DMatrix::from_fn(points, 1, |_, _| rng.random_range(lo..hi));
        Marginal::new(setup, x, dof)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// One sample per row. The Student-t case is a chi-square scale mixture
    /// whose covariance equals the kernel matrix.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<DMatrix<f64>> {
        let k = self.dim();
        let chi = ChiSquared::new(self.dof).map_err(|e| MarsError::InvalidArgument(e.to_string()))?;
        let mut out = DMatrix::zeros(n, k);
        for r in 0..n {
            let z = DVector::from_fn(k, |_, _| StandardNormal.sample(rng));
            let scale = match self.setup {
                Setup::Gp2d => 1.0,
                Setup::Tp2d => ((self.dof - 2.0) / chi.sample(rng)).sqrt(),
            };
            let f = &self.mean + &self.chol * z * scale;
            out.row_mut(r).copy_from(&f.transpose());
        }
        Ok(out)
    }

    /// `∇_f ln p(f)`. Gaussian: `−Σ⁻¹d`. Student-t with covariance Σ:
    /// `−(ν + k) Σ⁻¹d / (ν − 2 + dᵀΣ⁻¹d)`.
    pub fn score(&self, f: &DVector<f64>) -> DVector<f64> {
        let d = f - &self.mean;
        let y = self
            .chol
            .solve_lower_triangular(&d)
            .expect("Cholesky factor is nonsingular");
        let solved = self
            .chol
            .transpose()
            .solve_upper_triangular(&y)
            .expect("Cholesky factor is nonsingular");
        match self.setup {
            Setup::Gp2d => -solved,
            Setup::Tp2d => {
                let maha = d.dot(&solved);
                -solved * ((self.dof + self.dim() as f64) / (self.dof - 2.0 + maha))
            }
        }
    }

    pub fn score_rows(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(f.nrows(), f.ncols());
        for r in 0..f.nrows() {
            out.row_mut(r).copy_from(&self.score(&f.row(r).transpose()).transpose());
        }
        out
    }
}

/// Affine map applied to network inputs: inputs by their mean and std, all
/// function values by one pooled mean and std. A score in standardized
/// units divides by the value scale.
#[derive(Clone, Debug)]
struct TokenScaling {
    x_mean: f64,
    x_std: f64,
    f_mean: f64,
    f_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std < 1e-8 { 1.0 } else { std })
}

impl TokenScaling {
    fn fit(x: &DMatrix<f64>, samples: &DMatrix<f64>) -> Self {
        let (x_mean, x_std) = mean_std(x.iter().copied());
        let (f_mean, f_std) = mean_std(samples.iter().copied());
        TokenScaling {
            x_mean,
            x_std,
            f_mean,
            f_std,
        }
    }

    fn tokens(&self, x: &DMatrix<f64>, samples: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, k) = samples.shape();
        DMatrix::from_fn(n * k, 2, |r, c| {
            let (s, i) = (r / k, r % k);
            if c == 0 {
                (x[(i, 0)] - self.x_mean) / self.x_std
            } else {
                (samples[(s, i)] - self.f_mean) / self.f_std
            }
        })
    }
}

pub fn train_network(
    marginal: &Marginal,
    samples: &DMatrix<f64>,
    cfg: &ScoreNetConfig,
    iters: usize,
    rng: &mut Rng,
) -> Result<(ScoreNetworkParams, Vec<f64>)> {
    let scaling = TokenScaling::fit(&marginal.x, samples);
    let params = ScoreNetworkParams::init(cfg.clone(), TokenLayout::Regression { input_dim: 1 }, rng)?;
    let tokens = scaling.tokens(&marginal.x, samples);
    let mut trainer = ScoreTrainer::new(params);
    let mut losses = Vec::with_capacity(iters);
    for _ in 0..iters {
        losses.push(trainer.step(&tokens, marginal.dim())?);
    }
    Ok((trainer.into_params(), losses))
}

fn network_scores(
    params: &ScoreNetworkParams,
    marginal: &Marginal,
    train: &DMatrix<f64>,
    eval: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let scaling = TokenScaling::fit(&marginal.x, train);
    let k = marginal.dim();
    let s = params.forward_sets(&scaling.tokens(&marginal.x, eval), k)?;
    Ok(DMatrix::from_fn(eval.nrows(), k, |r, i| {
        s[(r * k + i, 0)] / scaling.f_std
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub setup: String,
    pub method: String,
    pub seed: u64,
    pub rmse: f64,
    pub cosine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub method: String,
    pub rmse: f64,
    pub cosine: f64,
}

#[derive(Clone, Debug)]
pub struct BenchOutcome {
    pub marginal_x: Vec<f64>,
    pub ssge_lengthscale: f64,
    pub rows: Vec<BenchRow>,
    pub final_losses: Vec<f64>,
}

impl BenchOutcome {
    /// Mean over seeds per method, `mars` first.
    pub fn summary(&self) -> Vec<BenchSummary> {
        ["mars", "ssge"]
            .iter()
            .map(|m| {
                let rows: Vec<_> = self.rows.iter().filter(|r| r.method == *m).collect();
                let n = rows.len() as f64;
                BenchSummary {
                    method: m.to_string(),
                    rmse: rows.iter().map(|r| r.rmse).sum::<f64>() / n,
                    cosine: rows.iter().map(|r| r.cosine).sum::<f64>() / n,
                }
            })
            .collect()
    }
}

/// Trains one network per seed and fits SSGE (median-heuristic lengthscale)
/// on the same samples; both are scored against the analytic marginal score
/// on fresh evaluation samples.
pub fn run(setup: Setup, cfg: &BenchConfig) -> Result<BenchOutcome> {
    cfg.validate()?;
    let mut data_rng = rng::stream(cfg.data_seed, 0);
    let marginal = Marginal::draw(setup, cfg.points, cfg.dof, &mut data_rng)?;
    let train = marginal.sample(cfg.train_samples, &mut data_rng)?;
    let eval = marginal.sample(cfg.eval_samples, &mut data_rng)?;
    let truth = marginal.score_rows(&eval);

    let ls = median_heuristic(&train);
    let ssge = SsgeModel::fit(&train, ls, None)?;
    let ssge_quality = score_benchmark(&ssge.score_rows(&eval)?, &truth)?;

    let mut rows = Vec::new();
    let mut final_losses = Vec::new();
    for &seed in &cfg.seeds {
        let mut net_rng = rng::stream(seed, 1);
        let (params, losses) = train_network(&marginal, &train, &cfg.scorenet, cfg.train_iters, &mut net_rng)?;
        final_losses.push(losses.last().copied().unwrap_or(f64::NAN));
        let ScoreQuality { rmse, cosine } =
            score_benchmark(&network_scores(&params, &marginal, &train, &eval)?, &truth)?;
        rows.push(BenchRow {
            setup: setup.name().into(),
            method: "mars".into(),
            seed,
            rmse,
            cosine,
        });
        rows.push(BenchRow {
            setup: setup.name().into(),
            method: "ssge".into(),
            seed,
            rmse: ssge_quality.rmse,
            cosine: ssge_quality.cosine,
        });
    }
    Ok(BenchOutcome {
        marginal_x: marginal.x.column(0).iter().copied().collect(),
        ssge_lengthscale: ls,
        rows,
        final_losses,
    })
}
