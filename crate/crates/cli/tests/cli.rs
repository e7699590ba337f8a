use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mars_cli::artifacts::ModelFile;
use mars_cli::commands::read_predictions;
use mars_core::envs::{load_csv_dataset, ColumnSpec};
use mars_core::eval::{calibration_error, rmse, CalibrationGrid, GaussianMixture};

const TINY: &str = r#"
seeds = [3]

[env]
kind = "sinusoid"
num_tasks = 4
points_per_task = 8
test_tasks = 2
test_context = 5
test_points = 6

[interpolator]
kind = "gp"
lengthscales = [0.3, 1.0]

[scorenet]
embed_dim = 4
num_heads = 2
key_size = 2
ffn_hidden = 4
train_iters = 5

[inference]
steps = 5
num_particles = 3
step_size = 1e-4
likelihood_std = 0.1

[bench]
train_samples = 10
eval_samples = 5
train_iters = 3
seeds = [0, 1]

[bench.scorenet]
embed_dim = 4
num_heads = 2
key_size = 2
ffn_hidden = 4
"#;

fn mars(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mars"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, format!("{TINY}\n{extra}")).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn xy() -> (Vec<ColumnSpec>, ColumnSpec) {
    (vec![ColumnSpec::Name("x0".into())], ColumnSpec::Name("y".into()))
}

#[test]
fn gen_env_writes_tasks_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("env");
    let o = mars(&["gen-env", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (cols, y) = xy();
    for i in 0..4 {
        let d = load_csv_dataset(&out.join(format!("train_{i:03}.csv")), &cols, &y).unwrap();
        assert_eq!(d.len(), 8);
    }
    assert_eq!(
        load_csv_dataset(&out.join("test_001_context.csv"), &cols, &y)
            .unwrap()
            .len(),
        5
    );
    assert_eq!(
        load_csv_dataset(&out.join("test_001_query.csv"), &cols, &y)
            .unwrap()
            .len(),
        6
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "gen-env");
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 8);
    assert_eq!(manifest["config"]["scorenet"]["embed_dim"], 4);
}

#[test]
fn train_score_model_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("train");
    let o = mars(&["train-score", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (model, params) = ModelFile::load(&out.join("model.json")).unwrap();
    assert_eq!(model.input_dim(), 1);
    assert_eq!(params.to_document(), model.network);
    assert!(model
        .network
        .layers
        .iter()
        .filter(|l| l.name != "output")
        .all(|l| l.spectral_u.is_some()));
    let losses = std::fs::read_to_string(out.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 6);
}

#[test]
fn missing_csv_path_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("csv.toml");
    std::fs::write(
        &cfg,
        "[env]\nkind = \"csv\"\ntrain = [\"nowhere/task.csv\"]\ninput_cols = [\"x0\"]\ntarget_col = \"y\"\n",
    )
    .unwrap();
    let o = mars(&["train-score", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere/task.csv"), "{}", stderr(&o));
}

#[test]
fn unknown_config_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let nested = write_config(dir.path(), "bogus = 1");
    let o = mars(&["gen-env", "--config", s(&nested)]);
    assert_eq!(o.status.code(), Some(2));
    let top = dir.path().join("top.toml");
    std::fs::write(&top, format!("bogus = 1\n{TINY}")).unwrap();
    let o = mars(&["gen-env", "--config", s(&top)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"));
}

#[test]
fn csv_environment_trains() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let env_dir = dir.path().join("env");
    assert!(mars(&["gen-env", "--config", s(&cfg), "--out", s(&env_dir)])
        .status
        .success());
    let csv_cfg = dir.path().join("csv.toml");
    let tail = TINY.split_once("[interpolator]").unwrap().1;
    std::fs::write(
        &csv_cfg,
        format!(
            "seeds = [1]\n[env]\nkind = \"csv\"\ntrain = [\"env/train_000.csv\", \"env/train_001.csv\"]\n\
             input_cols = [\"x0\"]\ntarget_col = \"y\"\n[interpolator]{tail}"
        ),
    )
    .unwrap();
    let o = mars(&[
        "train-score",
        "--config",
        s(&csv_cfg),
        "--out",
        s(&dir.path().join("m")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn trained_model(dir: &Path, cfg: &Path) -> PathBuf {
    let out = dir.join("train");
    let o = mars(&["train-score", "--config", s(cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("model.json")
}

#[test]
fn infer_with_zero_steps_predicts_from_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let model = trained_model(dir.path(), &cfg);
    assert!(
        mars(&["gen-env", "--config", s(&cfg), "--out", s(&dir.path().join("env"))])
            .status
            .success()
    );
    let zero = dir.path().join("zero.toml");
    std::fs::write(&zero, TINY.replace("steps = 5", "steps = 0")).unwrap();
    let out = dir.path().join("infer");
    let task = dir.path().join("env/test_000_context.csv");
    let query = dir.path().join("env/test_000_query.csv");
    let o = mars(&[
        "infer",
        "--config",
        s(&zero),
        "--model",
        s(&model),
        "--task",
        s(&task),
        "--query",
        s(&query),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let preds = read_predictions(&out.join("predictions.csv")).unwrap();
    assert_eq!(preds.particles.len(), 6);
    assert!(preds.particles.iter().all(|p| p.len() == 3));
    let header = std::fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert!(header.starts_with("x0,mean,particle_0,particle_1,particle_2\n"));
    assert!(out.join("ensemble.json").is_file());
}

#[test]
fn infer_dimension_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let model = trained_model(dir.path(), &cfg);
    let task = dir.path().join("two_d.csv");
    std::fs::write(&task, "x0,x1,y\n0.1,0.2,1.0\n0.3,0.4,2.0\n").unwrap();
    let csv_cfg = dir.path().join("csv.toml");
    let tail = TINY.split_once("[interpolator]").unwrap().1;
    std::fs::write(
        &csv_cfg,
        format!(
            "[env]\nkind = \"csv\"\ntrain = [\"two_d.csv\"]\ninput_cols = [\"x0\", \"x1\"]\ntarget_col = \"y\"\n[interpolator]{tail}"
        ),
    )
    .unwrap();
    let o = mars(&[
        "infer",
        "--config",
        s(&csv_cfg),
        "--model",
        s(&model),
        "--task",
        s(&task),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn eval_scores_perfect_predictions_and_matches_in_process_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let targets = dir.path().join("targets.csv");
    std::fs::write(&targets, "x0,y\n0.0,1.0\n1.0,2.5\n2.0,-0.5\n").unwrap();
    let perfect = dir.path().join("perfect.csv");
    std::fs::write(
        &perfect,
        "x0,mean,particle_0,particle_1\n0.0,1.0,1.0,1.0\n1.0,2.5,2.5,2.5\n2.0,-0.5,-0.5,-0.5\n",
    )
    .unwrap();
    let out = dir.path().join("eval");
    let o = mars(&[
        "eval",
        "--config",
        s(&cfg),
        "--predictions",
        s(&perfect),
        "--targets",
        s(&targets),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let reports: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(reports[0]["rmse"], 0.0);

    let noisy = dir.path().join("noisy.csv");
    std::fs::write(
        &noisy,
        "x0,mean,particle_0,particle_1\n0.0,1.1,1.0,1.2\n1.0,2.0,1.5,2.5\n2.0,0.0,0.3,-0.3\n",
    )
    .unwrap();
    let out2 = dir.path().join("eval2");
    let o = mars(&[
        "eval",
        "--config",
        s(&cfg),
        "--predictions",
        s(&noisy),
        "--targets",
        s(&targets),
        "--out",
        s(&out2),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let reports: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out2.join("metrics.json")).unwrap()).unwrap();
    let mix = [
        GaussianMixture {
            means: vec![1.0, 1.2],
            std: 0.1,
        },
        GaussianMixture {
            means: vec![1.5, 2.5],
            std: 0.1,
        },
        GaussianMixture {
            means: vec![0.3, -0.3],
            std: 0.1,
        },
    ];
    let ys = [1.0, 2.5, -0.5];
    let means: Vec<f64> = mix.iter().map(GaussianMixture::mean).collect();
    let cdf: Vec<f64> = mix.iter().zip(ys).map(|(m, y)| m.cdf(y)).collect();
    assert_eq!(reports[0]["rmse"].as_f64().unwrap(), rmse(&means, &ys).unwrap());
    assert_eq!(
        reports[0]["calibration_error"].as_f64().unwrap(),
        calibration_error(&cdf, &CalibrationGrid::default()).unwrap()
    );
    let csv = std::fs::read_to_string(out2.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("env,method,seed,rmse,calib_err\n"));
}

#[test]
fn eval_row_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let targets = dir.path().join("targets.csv");
    std::fs::write(&targets, "x0,y\n0.0,1.0\n1.0,2.5\n").unwrap();
    let preds = dir.path().join("preds.csv");
    std::fs::write(&preds, "x0,mean,particle_0\n0.0,1.0,1.0\n").unwrap();
    let o = mars(&[
        "eval",
        "--predictions",
        s(&preds),
        "--targets",
        s(&targets),
        "--out",
        s(&dir.path().join("e")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ablate_rejects_unknown_variant() {
    let o = mars(&["ablate", "--variant", "dropout-everything"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dropout-everything"));
}

#[test]
fn ablate_records_variant_and_strips_spectral_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("ablate");
    let o = mars(&[
        "ablate",
        "--config",
        s(&cfg),
        "--variant",
        "no-spectral",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (model, _) = ModelFile::load(&out.join("model_no-spectral_seed3.json")).unwrap();
    assert!(model.network.layers.iter().all(|l| l.spectral_u.is_none()));
    assert!(!model.network.config.spectral_norm_enabled);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["summary"]["variant"], "no-spectral");
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.contains("mars-gp,") && csv.contains("mars-gp-no-spectral,"));

    let out = dir.path().join("ablate_mean");
    let o = mars(&["ablate", "--config", s(&cfg), "--variant", "gp-mean", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (model, _) = ModelFile::load(&out.join("model_gp-mean_seed3.json")).unwrap();
    assert_eq!(model.variant, mars_cli::pipeline::Variant::GpMean);
}

#[test]
fn bench_score_emits_mars_and_ssge_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("bench");
    let o = mars(&[
        "bench-score",
        "--config",
        s(&cfg),
        "--variant",
        "gp2d",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(out.join("score_gp2d.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "method,rmse,cosine");
    assert!(lines[1].starts_with("mars,") && lines[2].starts_with("ssge,"));
    assert_eq!(lines.len(), 3);

    let o = mars(&[
        "bench-score",
        "--config",
        s(&cfg),
        "--variant",
        "tp2d",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = mars(&["bench-score", "--variant", "gp7d"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_subcommand_arguments_exit_2() {
    assert_eq!(mars(&["infer"]).status.code(), Some(2));
    assert_eq!(mars(&["frobnicate"]).status.code(), Some(2));
}
