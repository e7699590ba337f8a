//! The two-stage pipeline and the method comparison built on it.
//!
//! Stage 1 standardizes the meta-training tasks, builds ν, fits one
//! interpolator per task and meta-trains the score network. Stage 2 runs
//! fSVGD on each held-out task's context points and scores the predictive
//! mixture on its test points, in original units.
//!
//! Random streams are keyed by purpose, not by call order: every method sees
//! the same environment, the same interpolators and, per test task, the same
//! particle initialization and measurement draws.

use std::sync::Arc;

use mars_core::envs::{load_csv_dataset, load_csv_tasks, sinusoid_tasks, ColumnSpec, SinusoidEnvConfig};
use mars_core::eval::{CalibrationGrid, GaussianMixture, MetricReport, TaskPredictions};
use mars_core::fsvgd::{predictive, run_inference, MeanFunction};
use mars_core::interpolate::{cv_select_lengthscale, CvSelection, GpHyper};
use mars_core::rng;
use mars_core::scorenet::{meta_train, MetaTrainOptions, TrainOutcome};
use mars_core::{
    BnnArchitecture, DMatrix, Dataset, InferenceConfig, Interpolator, Kernel, MaternGp, McDropoutNet,
    MeasurementDistribution, ParticleEnsemble, PriorScore, ScoreNetworkParams, SinusoidParams, Standardizer,
    TaskCollection,
};
use serde::{Deserialize, Serialize};

use crate::config::{EnvSpec, InterpolatorSpec, RunConfig};
use crate::error::CliError;

const STREAM_ENV: u64 = 1;
const STREAM_CV: u64 = 2;
const STREAM_INTERP: u64 = 3;
const STREAM_META: u64 = 4;
const STREAM_INFER: u64 = 1000;

/// A held-out task: points to condition on and points to score.
#[derive(Clone, Debug)]
pub struct TestTask {
    pub context: Dataset,
    pub query: Dataset,
}

#[derive(Clone, Debug)]
pub struct EnvData {
    pub train: TaskCollection,
    pub test: Vec<TestTask>,
}

/// Column layout of task files: the configured columns for CSV
/// environments, `x0, y` for generated ones.
pub fn task_columns(env: &EnvSpec) -> (Vec<ColumnSpec>, ColumnSpec) {
    match env {
        EnvSpec::Csv {
            input_cols, target_col, ..
        } => (input_cols.clone(), target_col.clone()),
        EnvSpec::Sinusoid { .. } => (vec![ColumnSpec::Name("x0".into())], ColumnSpec::Name("y".into())),
    }
}

pub fn load_env(env: &EnvSpec, seed: u64) -> Result<EnvData, CliError> {
    match env {
        EnvSpec::Sinusoid {
            num_tasks,
            points_per_task,
            noise_std,
            test_tasks,
            test_context,
            test_points,
        } => {
            let mut r = rng::stream(seed, STREAM_ENV);
            let train = sinusoid_tasks(
                &SinusoidEnvConfig {
                    num_tasks: *num_tasks,
                    points_per_task: *points_per_task,
                    noise_std: *noise_std,
                },
                &mut r,
            )?;
            let test = (0..*test_tasks)
                .map(|_| {
                    let p = SinusoidParams::sample(&mut r);
                    Ok(TestTask {
                        context: p.sample_dataset(*test_context, *noise_std, &mut r)?,
                        query: p.sample_dataset(*test_points, *noise_std, &mut r)?,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            Ok(EnvData { train, test })
        }
        EnvSpec::Csv {
            train,
            test_context,
            test_targets,
            input_cols,
            target_col,
        } => {
            let tasks = load_csv_tasks(train, input_cols, target_col)?;
            let test = test_context
                .iter()
                .zip(test_targets)
                .map(|(c, q)| {
                    Ok(TestTask {
                        context: load_csv_dataset(c, input_cols, target_col)?,
                        query: load_csv_dataset(q, input_cols, target_col)?,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            if let Some(t) = test.iter().find(|t| t.context.input_dim() != tasks.input_dim()) {
                return Err(CliError::Usage(format!(
                    "test task has {} inputs, training tasks have {}",
                    t.context.input_dim(),
                    tasks.input_dim()
                )));
            }
            Ok(EnvData { train: tasks, test })
        }
    }
}

/// Everything stage 2 needs from the meta-training data, except the network.
pub struct Stage1 {
    pub standardizer: Standardizer,
    pub nu: MeasurementDistribution,
    pub train: TaskCollection,
    /// Cross-validated GP hyperparameters; also the GP-prior baseline's kernel.
    pub gp: GpHyper,
    pub cv: CvSelection,
    pub interpolators: Vec<Arc<dyn Interpolator>>,
}

pub fn fit_stage1(raw: &TaskCollection, cfg: &RunConfig, seed: u64) -> Result<Stage1, CliError> {
    let standardizer = Standardizer::fit(raw);
    let train = standardizer.apply_all(raw);
    let nu = MeasurementDistribution::from_tasks(&train)?;
    let (base, grid) = cfg.interpolator.gp_base();
    let cv = cv_select_lengthscale(&train, &grid, base, &mut rng::stream(seed, STREAM_CV))?;
    let gp = GpHyper {
        lengthscale: cv.lengthscale,
        ..base
    };
    let interpolators: Vec<Arc<dyn Interpolator>> = match &cfg.interpolator {
        InterpolatorSpec::Gp { .. } => train
            .tasks()
            .iter()
            .map(|t| MaternGp::fit(t, gp).map(|g| Arc::new(g) as Arc<dyn Interpolator>))
            .collect::<mars_core::Result<_>>()?,
        InterpolatorSpec::McDropout { dropout } => {
            let mut r = rng::stream(seed, STREAM_INTERP);
            train
                .tasks()
                .iter()
                .map(|t| {
                    let mut task_rng = rng::split(&mut r);
                    McDropoutNet::fit(t, dropout, &mut task_rng).map(|n| Arc::new(n) as Arc<dyn Interpolator>)
                })
                .collect::<mars_core::Result<_>>()?
        }
    };
    Ok(Stage1 {
        standardizer,
        nu,
        train,
        gp,
        cv,
        interpolators,
    })
}

/// How the score network is meta-trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    Ssge,
    NoSpectral,
    GpMean,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(Variant::Full),
            "ssge" => Ok(Variant::Ssge),
            "no-spectral" => Ok(Variant::NoSpectral),
            "gp-mean" => Ok(Variant::GpMean),
            other => Err(format!(
                "unknown variant '{other}' (expected ssge, no-spectral or gp-mean)"
            )),
        }
    }
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Ssge => "ssge",
            Variant::NoSpectral => "no-spectral",
            Variant::GpMean => "gp-mean",
        }
    }
}

pub fn train_score(stage1: &Stage1, cfg: &RunConfig, variant: Variant, seed: u64) -> Result<TrainOutcome, CliError> {
    let mut net_cfg = cfg.scorenet.clone();
    if variant == Variant::NoSpectral {
        net_cfg.spectral_norm_enabled = false;
    }
    let opts = MetaTrainOptions {
        k: cfg.meta.measurement_size,
        use_posterior_mean: variant == Variant::GpMean,
    };
    let interps: Vec<&dyn Interpolator> = stage1.interpolators.iter().map(|i| i.as_ref()).collect();
    Ok(meta_train(
        &stage1.train,
        &interps,
        &stage1.nu,
        &net_cfg,
        &opts,
        &mut rng::stream(seed, STREAM_META),
    )?)
}

/// Methods compared on held-out tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// fSVGD with a meta-learned prior score.
    Mars(Variant),
    /// fSVGD with the analytic score of the cross-validated GP.
    GpPrior,
    /// fSVGD with no prior score and weight decay: a Gaussian weight prior.
    VanillaBnn,
}

impl Method {
    pub fn name(self, interpolator: &str) -> String {
        match self {
            Method::Mars(Variant::Full) => format!("mars-{interpolator}"),
            Method::Mars(v) => format!("mars-{interpolator}-{}", v.name()),
            Method::GpPrior => "fsvgd-gp-prior".into(),
            Method::VanillaBnn => "vanilla-bnn".into(),
        }
    }

    fn trained_variant(self) -> Option<Variant> {
        match self {
            Method::Mars(Variant::Ssge) | Method::GpPrior | Method::VanillaBnn => None,
            Method::Mars(v) => Some(v),
        }
    }
}

pub fn prior_for(method: Method, stage1: &Stage1, cfg: &RunConfig, net: Option<&ScoreNetworkParams>) -> PriorScore {
    match method {
        Method::Mars(Variant::Ssge) => PriorScore::Ssge {
            interpolators: stage1.interpolators.clone(),
            lengthscale: cfg.baselines.ssge_lengthscale,
            num_eigen: None,
            samples_per_interpolator: cfg.baselines.ssge_samples_per_task,
        },
        Method::Mars(_) => PriorScore::Learned(Box::new(net.expect("learned prior needs a trained network").clone())),
        Method::GpPrior => PriorScore::AnalyticGp {
            kernel: Kernel::Matern52 {
                lengthscale: stage1.gp.lengthscale,
                signal_variance: stage1.gp.signal_variance,
            },
            mean: MeanFunction::Zero,
            jitter: cfg.baselines.gp_prior_jitter,
        },
        Method::VanillaBnn => PriorScore::Zero,
    }
}

pub fn inference_config(method: Method, cfg: &RunConfig) -> InferenceConfig {
    let mut inf = cfg.inference.clone();
    if method == Method::VanillaBnn {
        inf.weight_decay = cfg.baselines.vanilla_weight_decay;
    }
    inf
}

/// Runs fSVGD on standardized context data. The stream depends only on the
/// seed and the task index, so methods share initializations.
pub fn infer_task(
    context: &Dataset,
    prior: &PriorScore,
    stage1: &Stage1,
    inf: &InferenceConfig,
    seed: u64,
    task: usize,
) -> Result<ParticleEnsemble, CliError> {
    let data = stage1.standardizer.apply(context);
    let arch = BnnArchitecture::new(data.input_dim());
    let mut r = rng::stream(seed, STREAM_INFER + task as u64);
    Ok(run_inference(&data, prior, &arch, &stage1.nu, inf, &mut r)?)
}

/// Predictive mixtures at raw inputs, mapped back to original target units.
pub fn predict_raw(
    ensemble: &ParticleEnsemble,
    standardizer: &Standardizer,
    sigma: f64,
    x: &DMatrix<f64>,
) -> Vec<GaussianMixture> {
    let xs = standardizer.apply_inputs(x);
    predictive(ensemble, sigma, &xs)
        .into_iter()
        .map(|m| GaussianMixture {
            means: m
                .means
                .iter()
                .map(|v| v * standardizer.output_std + standardizer.output_mean)
                .collect(),
            std: m.std * standardizer.output_std,
        })
        .collect()
}

/// Trained networks keyed by variant, so each is fitted once per seed.
#[derive(Default)]
pub struct NetworkCache {
    nets: Vec<(Variant, TrainOutcome)>,
}

impl NetworkCache {
    pub fn get_or_train(
        &mut self,
        variant: Variant,
        stage1: &Stage1,
        cfg: &RunConfig,
        seed: u64,
    ) -> Result<&TrainOutcome, CliError> {
        if let Some(i) = self.nets.iter().position(|(v, _)| *v == variant) {
            return Ok(&self.nets[i].1);
        }
        let outcome = train_score(stage1, cfg, variant, seed)?;
        self.nets.push((variant, outcome));
        Ok(&self.nets.last().expect("just pushed").1)
    }

    pub fn trained(&self) -> impl Iterator<Item = &(Variant, TrainOutcome)> {
        self.nets.iter()
    }
}

/// Scores one method on every held-out task of one seed.
pub fn evaluate_method(
    method: Method,
    env: &EnvData,
    stage1: &Stage1,
    nets: &mut NetworkCache,
    cfg: &RunConfig,
    seed: u64,
) -> Result<MetricReport, CliError> {
    if env.test.is_empty() {
        return Err(CliError::Usage("environment has no held-out tasks to evaluate".into()));
    }
    let net = match method.trained_variant() {
        Some(v) => Some(nets.get_or_train(v, stage1, cfg, seed)?.params.clone()),
        None => None,
    };
    let prior = prior_for(method, stage1, cfg, net.as_ref());
    let inf = inference_config(method, cfg);
    let mut mixtures = Vec::with_capacity(env.test.len());
    let mut targets = Vec::with_capacity(env.test.len());
    for (i, task) in env.test.iter().enumerate() {
        let ens = infer_task(&task.context, &prior, stage1, &inf, seed, i)?;
        mixtures.push(predict_raw(
            &ens,
            &stage1.standardizer,
            inf.likelihood_std,
            task.query.inputs(),
        ));
        targets.push(task.query.targets().iter().copied().collect::<Vec<_>>());
    }
    let preds: Vec<TaskPredictions> = mixtures
        .iter()
        .zip(&targets)
        .map(|(m, t)| TaskPredictions {
            mixtures: m,
            targets: t,
        })
        .collect();
    Ok(MetricReport::from_predictions(
        cfg.env.name(),
        &method.name(cfg.interpolator.name()),
        seed,
        &preds,
        &CalibrationGrid::default(),
    )?)
}

/// All methods on all configured seeds, seed-major.
pub fn run_comparison(cfg: &RunConfig, methods: &[Method]) -> Result<Vec<MetricReport>, CliError> {
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let env = load_env(&cfg.env, seed)?;
        let stage1 = fit_stage1(&env.train, cfg, seed)?;
        let mut nets = NetworkCache::default();
        for &m in methods {
            reports.push(evaluate_method(m, &env, &stage1, &mut nets, cfg, seed)?);
        }
    }
    Ok(reports)
}

/// Mean of `rmse` and `calibration_error` per method name, in first-seen order.
pub fn method_means(reports: &[MetricReport]) -> Vec<(String, f64, f64)> {
    let mut out: Vec<(String, f64, f64, usize)> = Vec::new();
    for r in reports {
        match out.iter_mut().find(|(m, ..)| *m == r.method) {
            Some(e) => {
                e.1 += r.rmse;
                e.2 += r.calibration_error;
                e.3 += 1;
            }
            None => out.push((r.method.clone(), r.rmse, r.calibration_error, 1)),
        }
    }
    out.into_iter()
        .map(|(m, a, b, n)| (m, a / n as f64, b / n as f64))
        .collect()
}
