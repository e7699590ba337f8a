//! TOML run configuration. Every field has a default, so an empty file is a
//! valid sinusoid run; the resolved config is echoed into each manifest.

use std::path::{Path, PathBuf};

use mars_core::envs::ColumnSpec;
use mars_core::interpolate::{default_lengthscale_grid, GpHyper, McDropoutConfig};
use mars_core::{InferenceConfig, ScoreNetConfig};
use serde::{Deserialize, Serialize};

use crate::bench::BenchConfig;
use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub env: EnvSpec,
    pub interpolator: InterpolatorSpec,
    pub meta: MetaConfig,
    pub scorenet: ScoreNetConfig,
    pub inference: InferenceConfig,
    pub baselines: BaselineConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: PathBuf::from("runs"),
            env: EnvSpec::default(),
            interpolator: InterpolatorSpec::default(),
            meta: MetaConfig::default(),
            scorenet: ScoreNetConfig::default(),
            inference: InferenceConfig::default(),
            baselines: BaselineConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Sinusoid {
        #[serde(default = "defaults::num_tasks")]
        num_tasks: usize,
        #[serde(default = "defaults::points_per_task")]
        points_per_task: usize,
        #[serde(default = "defaults::noise_std")]
        noise_std: f64,
        #[serde(default = "defaults::test_tasks")]
        test_tasks: usize,
        #[serde(default = "defaults::test_context")]
        test_context: usize,
        #[serde(default = "defaults::test_points")]
        test_points: usize,
    },
    /// Meta-training files, plus optional held-out tasks given as paired
    /// context and test files.
    Csv {
        train: Vec<PathBuf>,
        #[serde(default)]
        test_context: Vec<PathBuf>,
        #[serde(default)]
        test_targets: Vec<PathBuf>,
        input_cols: Vec<ColumnSpec>,
        target_col: ColumnSpec,
    },
}

mod defaults {
    pub fn num_tasks() -> usize {
        20
    }
    pub fn points_per_task() -> usize {
        8
    }
    pub fn noise_std() -> f64 {
        0.1
    }
    pub fn test_tasks() -> usize {
        4
    }
    pub fn test_context() -> usize {
        8
    }
    pub fn test_points() -> usize {
        50
    }
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec::Sinusoid {
            num_tasks: defaults::num_tasks(),
            points_per_task: defaults::points_per_task(),
            noise_std: defaults::noise_std(),
            test_tasks: defaults::test_tasks(),
            test_context: defaults::test_context(),
            test_points: defaults::test_points(),
        }
    }
}

impl EnvSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EnvSpec::Sinusoid { .. } => "sinusoid",
            EnvSpec::Csv { .. } => "csv",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InterpolatorSpec {
    Gp {
        /// Cross-validation grid for the Matérn lengthscale.
        #[serde(default = "default_lengthscale_grid")]
        lengthscales: Vec<f64>,
        #[serde(default = "defaults_gp::signal_variance")]
        signal_variance: f64,
        #[serde(default = "defaults_gp::noise_variance")]
        noise_variance: f64,
    },
    McDropout {
        #[serde(default)]
        dropout: McDropoutConfig,
    },
}

mod defaults_gp {
    pub fn signal_variance() -> f64 {
        1.0
    }
    pub fn noise_variance() -> f64 {
        0.01
    }
}

impl Default for InterpolatorSpec {
    fn default() -> Self {
        InterpolatorSpec::Gp {
            lengthscales: default_lengthscale_grid(),
            signal_variance: defaults_gp::signal_variance(),
            noise_variance: defaults_gp::noise_variance(),
        }
    }
}

impl InterpolatorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            InterpolatorSpec::Gp { .. } => "gp",
            InterpolatorSpec::McDropout { .. } => "mc-dropout",
        }
    }

    /// GP hyperparameters shared by the interpolators and the GP-prior
    /// baseline; the lengthscale is replaced by the cross-validated one.
    pub fn gp_base(&self) -> (GpHyper, Vec<f64>) {
        match self {
            InterpolatorSpec::Gp {
                lengthscales,
                signal_variance,
                noise_variance,
            } => (
                GpHyper {
                    lengthscale: lengthscales.first().copied().unwrap_or(1.0),
                    signal_variance: *signal_variance,
                    noise_variance: *noise_variance,
                },
                lengthscales.clone(),
            ),
            InterpolatorSpec::McDropout { .. } => (GpHyper::default(), default_lengthscale_grid()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    /// Measurement-set size while meta-training.
    pub measurement_size: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig { measurement_size: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// λ of the weight-space Gaussian prior baseline.
    pub vanilla_weight_decay: f64,
    /// Diagonal jitter of the analytic GP prior score.
    pub gp_prior_jitter: f64,
    pub ssge_lengthscale: f64,
    /// Function samples per interpolator when SSGE replaces the network.
    pub ssge_samples_per_task: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            vanilla_weight_decay: 1e-3,
            gp_prior_jitter: 0.01,
            ssge_lengthscale: mars_core::ssge::DEFAULT_LENGTHSCALE,
            ssge_samples_per_task: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Relative paths in the file are relative to the file itself.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        if let EnvSpec::Csv {
            train,
            test_context,
            test_targets,
            ..
        } = &mut self.env
        {
            train
                .iter_mut()
                .chain(test_context.iter_mut())
                .chain(test_targets.iter_mut())
                .for_each(fix);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: mars_core::MarsError| CliError::Usage(e.to_string());
        if self.seeds.is_empty() {
            return Err(CliError::Usage("config needs at least one seed".into()));
        }
        self.scorenet.validate().map_err(usage)?;
        self.inference.validate().map_err(usage)?;
        self.bench.validate().map_err(usage)?;
        if self.meta.measurement_size == 0 {
            return Err(CliError::Usage("meta.measurement_size must be ≥ 1".into()));
        }
        let b = &self.baselines;
        if !(b.vanilla_weight_decay >= 0.0 && b.gp_prior_jitter > 0.0 && b.ssge_lengthscale > 0.0)
            || b.ssge_samples_per_task == 0
        {
            return Err(CliError::Usage("baseline settings must be positive".into()));
        }
        match &self.interpolator {
            InterpolatorSpec::Gp {
                lengthscales,
                signal_variance,
                noise_variance,
            } => {
                if lengthscales.is_empty() || lengthscales.iter().any(|l| !(*l > 0.0)) {
                    return Err(CliError::Usage(
                        "interpolator.lengthscales must be non-empty and positive".into(),
                    ));
                }
                if !(*signal_variance > 0.0 && *noise_variance > 0.0) {
                    return Err(CliError::Usage("GP variances must be positive".into()));
                }
            }
            InterpolatorSpec::McDropout { dropout } => {
                if !(0.0..1.0).contains(&dropout.dropout) || dropout.batch_size == 0 {
                    return Err(CliError::Usage(
                        "dropout probability must be in [0, 1) and batch_size ≥ 1".into(),
                    ));
                }
            }
        }
        match &self.env {
            EnvSpec::Sinusoid {
                num_tasks,
                points_per_task,
                noise_std,
                test_context,
                test_points,
                ..
            } => {
                if *num_tasks == 0 || *points_per_task == 0 || *test_context == 0 || *test_points == 0 {
                    return Err(CliError::Usage("sinusoid sizes must be ≥ 1".into()));
                }
                if !(*noise_std >= 0.0) {
                    return Err(CliError::Usage("noise_std must be non-negative".into()));
                }
            }
            EnvSpec::Csv {
                train,
                test_context,
                test_targets,
                input_cols,
                ..
            } => {
                if train.is_empty() || input_cols.is_empty() {
                    return Err(CliError::Usage("csv env needs training files and input columns".into()));
                }
                if test_context.len() != test_targets.len() {
                    return Err(CliError::Usage(format!(
                        "{} test context files but {} test target files",
                        test_context.len(),
                        test_targets.len()
                    )));
                }
                if let Some(p) = train
                    .iter()
                    .chain(test_context)
                    .chain(test_targets)
                    .find(|p| !p.is_file())
                {
                    return Err(CliError::Usage(format!("missing CSV file {}", p.display())));
                }
            }
        }
        Ok(())
    }
}
