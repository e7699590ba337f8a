//! One function per subcommand. Each returns the manifest it wrote.

use std::path::{Path, PathBuf};

use mars_core::envs::{load_csv_dataset, write_csv_dataset_to};
use mars_core::eval::{write_metrics_csv, CalibrationGrid, GaussianMixture, MetricReport, TaskPredictions};
use mars_core::fsvgd::run_inference;
use mars_core::{BnnArchitecture, DMatrix, Dataset, PriorScore};
use serde::Serialize;

use crate::artifacts::{Manifest, ModelFile, Run, MODEL_FORMAT_VERSION};
use crate::bench::{self, Setup};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::pipeline::{self, method_means, Method, NetworkCache, Stage1, Variant};

/// Options shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Common {
    /// Config from file (or defaults) with the output directory and seed
    /// overrides applied.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
            cfg.bench.seeds = vec![seed];
        }
        Ok(cfg)
    }
}

fn first_seed(cfg: &RunConfig) -> u64 {
    cfg.seeds[0]
}

fn dataset_csv(data: &Dataset) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_csv_dataset_to(&mut buf, data)?;
    Ok(buf)
}

fn metrics_csv(reports: &[MetricReport]) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, reports)?;
    Ok(buf)
}

#[derive(Serialize)]
struct MethodSummary {
    method: String,
    mean_rmse: f64,
    mean_calibration_error: f64,
}

fn summarize(reports: &[MetricReport]) -> Vec<MethodSummary> {
    method_means(reports)
        .into_iter()
        .map(|(method, mean_rmse, mean_calibration_error)| MethodSummary {
            method,
            mean_rmse,
            mean_calibration_error,
        })
        .collect()
}

/// Writes the meta-training tasks and the held-out tasks of one seed as CSV.
pub fn gen_env(common: &Common) -> Result<Manifest, CliError> {
    let cfg = common.resolve()?;
    let seed = first_seed(&cfg);
    let mut run = Run::new("gen-env", &cfg.out_dir, vec![seed], &cfg)?;
    let env = pipeline::load_env(&cfg.env, seed)?;
    run.stage("generate");
    for (i, t) in env.train.tasks().iter().enumerate() {
        run.write_bytes(&format!("train_{i:03}.csv"), &dataset_csv(t)?)?;
    }
    for (i, t) in env.test.iter().enumerate() {
        run.write_bytes(&format!("test_{i:03}_context.csv"), &dataset_csv(&t.context)?)?;
        run.write_bytes(&format!("test_{i:03}_query.csv"), &dataset_csv(&t.query)?)?;
    }
    run.stage("write");
    run.set_summary(serde_json::json!({
        "train_tasks": env.train.len(),
        "test_tasks": env.test.len(),
        "input_dim": env.train.input_dim(),
    }))?;
    run.finish()
}

pub fn model_file(
    stage1: &Stage1,
    cfg: &RunConfig,
    variant: Variant,
    params: &mars_core::ScoreNetworkParams,
) -> ModelFile {
    ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        interpolator: cfg.interpolator.name().into(),
        variant,
        gp: stage1.gp,
        standardizer: stage1.standardizer.clone(),
        hypercube: stage1.nu.clone(),
        network: params.to_document(),
    }
}

fn losses_csv(losses: &[f64]) -> Vec<u8> {
    let mut s = String::from("iteration,loss\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{i},{l:?}\n"));
    }
    s.into_bytes()
}

/// Stage 1: fit interpolators on the meta-training tasks and meta-train the
/// score network.
pub fn train_score(common: &Common) -> Result<Manifest, CliError> {
    let cfg = common.resolve()?;
    let seed = first_seed(&cfg);
    let mut run = Run::new("train-score", &cfg.out_dir, vec![seed], &cfg)?;
    let env = pipeline::load_env(&cfg.env, seed)?;
    let stage1 = pipeline::fit_stage1(&env.train, &cfg, seed)?;
    run.stage("interpolators");
    let outcome = pipeline::train_score(&stage1, &cfg, Variant::Full, seed)?;
    run.stage("meta_train");
    run.write_json("model.json", &model_file(&stage1, &cfg, Variant::Full, &outcome.params))?;
    run.write_bytes("losses.csv", &losses_csv(&outcome.losses))?;
    run.set_summary(serde_json::json!({
        "gp": stage1.gp,
        "cv_scores": stage1.cv.scores,
        "final_loss": outcome.losses.last(),
        "hypercube": stage1.nu,
        "standardizer": stage1.standardizer,
    }))?;
    run.finish()
}

fn predictions_csv(input_dim: usize, x: &DMatrix<f64>, mixtures: &[GaussianMixture]) -> Vec<u8> {
    let particles = mixtures.first().map_or(0, |m| m.means.len());
    let mut header: Vec<String> = (0..input_dim).map(|j| format!("x{j}")).collect();
    header.push("mean".into());
    header.extend((0..particles).map(|l| format!("particle_{l}")));
    let mut s = header.join(",");
    s.push('\n');
    for (r, m) in mixtures.iter().enumerate() {
        let mut row: Vec<String> = x.row(r).iter().map(|v| format!("{v:?}")).collect();
        row.push(format!("{:?}", m.mean()));
        row.extend(m.means.iter().map(|v| format!("{v:?}")));
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s.into_bytes()
}

/// Predictions read back from CSV: inputs and per-particle values.
pub struct Predictions {
    pub inputs: DMatrix<f64>,
    pub particles: Vec<Vec<f64>>,
}

pub fn read_predictions(path: &Path) -> Result<Predictions, CliError> {
    let parse = |line: usize, msg: String| CliError::Usage(format!("{}:{line}: {msg}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| parse(1, e.to_string()))?.clone();
    let mean_col = headers
        .iter()
        .position(|h| h == "mean")
        .ok_or_else(|| parse(1, "missing 'mean' column".into()))?;
    let mut xs = Vec::new();
    let mut particles = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse(line, e.to_string()))?;
        let vals = rec
            .iter()
            .map(|v| v.trim().parse::<f64>().ok().filter(|f| f.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| parse(line, "non-numeric or non-finite cell".into()))?;
        if vals.len() != headers.len() || vals.len() <= mean_col + 1 {
            return Err(parse(line, "wrong number of cells".into()));
        }
        xs.extend_from_slice(&vals[..mean_col]);
        particles.push(vals[mean_col + 1..].to_vec());
    }
    if particles.is_empty() {
        return Err(CliError::Usage(format!("{}: no prediction rows", path.display())));
    }
    Ok(Predictions {
        inputs: DMatrix::from_row_slice(particles.len(), mean_col, &xs),
        particles,
    })
}

/// Stage 2 on one task file: fSVGD with the learned prior, predictions at
/// the query file's inputs (the task's own inputs by default).
pub fn infer(common: &Common, model_path: &Path, task: &Path, query: Option<&Path>) -> Result<Manifest, CliError> {
    let cfg = common.resolve()?;
    let seed = first_seed(&cfg);
    let mut run = Run::new("infer", &cfg.out_dir, vec![seed], &cfg)?;
    let (model, params) = ModelFile::load(model_path)?;
    let (cols, target) = pipeline::task_columns(&cfg.env);
    let data = load_csv_dataset(task, &cols, &target)?;
    if data.input_dim() != model.input_dim() {
        return Err(CliError::Usage(format!(
            "task has {} inputs but the model was trained on {}",
            data.input_dim(),
            model.input_dim()
        )));
    }
    let query = match query {
        Some(q) => load_csv_dataset(q, &cols, &target)?,
        None => data.clone(),
    };
    if query.input_dim() != model.input_dim() {
        return Err(CliError::Usage("query and model disagree on input size".into()));
    }
    run.stage("load");
    let std_data = model.standardizer.apply(&data);
    let arch = BnnArchitecture::new(data.input_dim());
    let mut rng = mars_core::rng::stream(seed, 1000);
    let ensemble = run_inference(
        &std_data,
        &PriorScore::Learned(Box::new(params)),
        &arch,
        &model.hypercube,
        &cfg.inference,
        &mut rng,
    )?;
    run.stage("inference");
    let mixtures = pipeline::predict_raw(
        &ensemble,
        &model.standardizer,
        cfg.inference.likelihood_std,
        query.inputs(),
    );
    run.write_json("ensemble.json", &ensemble.to_document())?;
    run.write_bytes(
        "predictions.csv",
        &predictions_csv(data.input_dim(), query.inputs(), &mixtures),
    )?;
    run.set_summary(serde_json::json!({
        "particles": ensemble.len(),
        "query_points": query.len(),
        "predictive_noise_std": cfg.inference.likelihood_std * model.standardizer.output_std,
    }))?;
    run.finish()
}

/// Scores a predictions file against a targets file.
pub fn eval(common: &Common, predictions: &Path, targets: &Path, model: Option<&Path>) -> Result<Manifest, CliError> {
    let cfg = common.resolve()?;
    let seed = first_seed(&cfg);
    let mut run = Run::new("eval", &cfg.out_dir, vec![seed], &cfg)?;
    let preds = read_predictions(predictions)?;
    let (cols, target) = pipeline::task_columns(&cfg.env);
    let truth = load_csv_dataset(targets, &cols, &target)?;
    if truth.len() != preds.particles.len() {
        return Err(CliError::Usage(format!(
            "{} predictions but {} targets",
            preds.particles.len(),
            truth.len()
        )));
    }
    if truth.input_dim() != preds.inputs.ncols() {
        return Err(CliError::Usage(
            "predictions and targets disagree on input columns".into(),
        ));
    }
    let scale = match model {
        Some(p) => ModelFile::load(p)?.0.standardizer.output_std,
        None => 1.0,
    };
    let sigma = cfg.inference.likelihood_std * scale;
    let mixtures: Vec<GaussianMixture> = preds
        .particles
        .into_iter()
        .map(|means| GaussianMixture { means, std: sigma })
        .collect();
    let ys: Vec<f64> = truth.targets().iter().copied().collect();
    let report = MetricReport::from_predictions(
        cfg.env.name(),
        "predictions",
        seed,
        &[TaskPredictions {
            mixtures: &mixtures,
            targets: &ys,
        }],
        &CalibrationGrid::default(),
    )?;
    run.stage("eval");
    let reports = [report];
    run.write_json("metrics.json", &reports)?;
    run.write_bytes("metrics.csv", &metrics_csv(&reports)?)?;
    run.set_summary(serde_json::json!({
        "rmse": reports[0].rmse,
        "calibration_error": reports[0].calibration_error,
        "noise_std": sigma,
    }))?;
    run.finish()
}

/// Runs `methods` on every seed and writes per-seed metrics plus, for each
/// trained network, its model file.
fn comparison(
    command: &str,
    cfg: &RunConfig,
    methods: &[Method],
    variant: Option<Variant>,
) -> Result<Manifest, CliError> {
    let mut run = Run::new(command, &cfg.out_dir, cfg.seeds.clone(), cfg)?;
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let env = pipeline::load_env(&cfg.env, seed)?;
        let stage1 = pipeline::fit_stage1(&env.train, cfg, seed)?;
        run.stage("interpolators");
        let mut nets = NetworkCache::default();
        for &m in methods {
            reports.push(pipeline::evaluate_method(m, &env, &stage1, &mut nets, cfg, seed)?);
        }
        run.stage("methods");
        for (v, outcome) in nets.trained() {
            run.write_json(
                &format!("model_{}_seed{seed}.json", v.name()),
                &model_file(&stage1, cfg, *v, &outcome.params),
            )?;
        }
    }
    run.write_json("metrics.json", &reports)?;
    run.write_bytes("metrics.csv", &metrics_csv(&reports)?)?;
    run.set_summary(serde_json::json!({
        "variant": variant.map(Variant::name),
        "methods": summarize(&reports),
    }))?;
    run.finish()
}

/// The full method next to one ablated variant.
pub fn ablate(common: &Common, variant: Variant) -> Result<Manifest, CliError> {
    if variant == Variant::Full {
        return Err(CliError::Usage(
            "ablate needs a variant: ssge, no-spectral or gp-mean".into(),
        ));
    }
    let cfg = common.resolve()?;
    comparison(
        "ablate",
        &cfg,
        &[Method::Mars(Variant::Full), Method::Mars(variant)],
        Some(variant),
    )
}

/// The learned prior against the GP-prior and weight-space-prior baselines.
pub fn compare(common: &Common) -> Result<Manifest, CliError> {
    let cfg = common.resolve()?;
    comparison(
        "compare",
        &cfg,
        &[Method::Mars(Variant::Full), Method::GpPrior, Method::VanillaBnn],
        None,
    )
}

pub fn bench_score(common: &Common, setup: Setup) -> Result<Manifest, CliError> {
    let cfg = common.resolve()?;
    let mut run = Run::new("bench-score", &cfg.out_dir, cfg.bench.seeds.clone(), &cfg.bench)?;
    let outcome = bench::run(setup, &cfg.bench)?;
    run.stage("bench");
    let mut per_seed = String::from("setup,method,seed,rmse,cosine\n");
    for r in &outcome.rows {
        per_seed.push_str(&format!(
            "{},{},{},{:?},{:?}\n",
            r.setup, r.method, r.seed, r.rmse, r.cosine
        ));
    }
    let summary = outcome.summary();
    let mut table = String::from("method,rmse,cosine\n");
    for s in &summary {
        table.push_str(&format!("{},{:?},{:?}\n", s.method, s.rmse, s.cosine));
    }
    run.write_bytes(&format!("score_{}_seeds.csv", setup.name()), per_seed.as_bytes())?;
    run.write_bytes(&format!("score_{}.csv", setup.name()), table.as_bytes())?;
    run.set_summary(serde_json::json!({
        "setup": setup.name(),
        "measurement_set": outcome.marginal_x,
        "ssge_lengthscale": outcome.ssge_lengthscale,
        "table": summary,
    }))?;
    run.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_and_out_override_the_config() {
        let common = Common {
            config: None,
            seed: Some(7),
            out: Some(PathBuf::from("elsewhere")),
        };
        let cfg = common.resolve().unwrap();
        assert_eq!(cfg.seeds, vec![7]);
        assert_eq!(cfg.bench.seeds, vec![7]);
        assert_eq!(cfg.out_dir, PathBuf::from("elsewhere"));
        let plain = Common {
            config: None,
            seed: None,
            out: None,
        }
        .resolve()
        .unwrap();
        assert_eq!(plain, RunConfig::default());
    }

    #[test]
    fn predictions_need_mean_and_particle_columns() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.csv");
        std::fs::write(&good, "x0,x1,mean,particle_0,particle_1\n1,2,0.5,0.25,0.75\n").unwrap();
        let p = read_predictions(&good).unwrap();
        assert_eq!(p.inputs.shape(), (1, 2));
        assert_eq!(p.particles, vec![vec![0.25, 0.75]]);
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "x0,particle_0\n1,0.5\n").unwrap();
        assert!(matches!(read_predictions(&bad), Err(CliError::Usage(_))));
    }
}
