//! Predictive metrics and score-quality measures.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MarsError, Result};

pub const DEFAULT_CALIBRATION_LEVELS: usize = 20;

pub fn rmse(predicted: &[f64], targets: &[f64]) -> Result<f64> {
    if predicted.len() != targets.len() {
        return Err(MarsError::invalid(format!(
            "{} predictions for {} targets",
            predicted.len(),
            targets.len()
        )));
    }
    if predicted.is_empty() {
        return Err(MarsError::invalid("rmse of an empty set"));
    }
    let sse: f64 = predicted.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / predicted.len() as f64).sqrt())
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Equally weighted mixture of Gaussians sharing one standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub means: Vec<f64>,
    pub std: f64,
}

impl GaussianMixture {
    pub fn mean(&self) -> f64 {
        self.means.iter().sum::<f64>() / self.means.len() as f64
    }

    pub fn cdf(&self, y: f64) -> f64 {
        predictive_cdf(self, y)
    }
}

/// `(1/L) Σ_l Φ((y − h_l)/σ)`.
pub fn predictive_cdf(mix: &GaussianMixture, y: f64) -> f64 {
    let s: f64 = mix.means.iter().map(|m| normal_cdf((y - m) / mix.std)).sum();
    (s / mix.means.len() as f64).clamp(0.0, 1.0)
}

/// Confidence levels `q_1 < … < q_H`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationGrid {
    levels: Vec<f64>,
}

impl Default for CalibrationGrid {
    fn default() -> Self {
        CalibrationGrid::uniform(DEFAULT_CALIBRATION_LEVELS)
    }
}

impl CalibrationGrid {
    /// `q_h = h / (H + 1)` for `h = 1..=H`.
    pub fn uniform(h: usize) -> Self {
        assert!(h >= 1);
        CalibrationGrid {
            levels: (1..=h).map(|i| i as f64 / (h + 1) as f64).collect(),
        }
    }

    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty()
            || levels.iter().any(|q| !(0.0..=1.0).contains(q))
            || levels.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(MarsError::invalid(
                "calibration levels must be strictly increasing in [0, 1]",
            ));
        }
        Ok(CalibrationGrid { levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }
}

/// `(1/H) Σ_h |q̂_h − q_h|` with `q̂_h` the fraction of CDF values strictly
/// below `q_h`.
pub fn calibration_error(cdf_values: &[f64], grid: &CalibrationGrid) -> Result<f64> {
    if cdf_values.is_empty() {
        return Err(MarsError::invalid("calibration error needs at least one test point"));
    }
    let n = cdf_values.len() as f64;
    let total: f64 = grid
        .levels
        .iter()
        .map(|&q| {
            let below = cdf_values.iter().filter(|&&f| f < q).count() as f64;
            (below / n - q).abs()
        })
        .sum();
    Ok(total / grid.levels.len() as f64)
}

/// `−Σ⁻¹ (f − μ)`.
pub fn analytic_gp_marginal_score(mean: &DVector<f64>, cov: &DMatrix<f64>, f: &DVector<f64>) -> Result<DVector<f64>> {
    let k = mean.len();
    if cov.shape() != (k, k) || f.len() != k {
        return Err(MarsError::invalid(
            "mean, covariance and function values disagree in size",
        ));
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| MarsError::numeric("marginal covariance is not positive definite"))?;
    Ok(-chol.solve(&(f - mean)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreQuality {
    pub rmse: f64,
    pub cosine: f64,
}

/// Cosine similarity; two zero vectors count as 1, one zero vector as 0.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb),
    }
}

/// RMSE over all stacked entries and mean per-row cosine similarity. Row `i`
/// of each matrix is the score vector at evaluation point `i`.
pub fn score_benchmark(estimated: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<ScoreQuality> {
    if estimated.shape() != truth.shape() || estimated.nrows() == 0 {
        return Err(MarsError::invalid("score matrices must share a non-empty shape"));
    }
    let rmse = rmse(estimated.as_slice(), truth.as_slice())?;
    let cosine = (0..estimated.nrows())
        .map(|i| {
            let a: Vec<f64> = estimated.row(i).iter().copied().collect();
            let b: Vec<f64> = truth.row(i).iter().copied().collect();
            cosine_similarity(&a, &b)
        })
        .sum::<f64>()
        / estimated.nrows() as f64;
    Ok(ScoreQuality { rmse, cosine })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetric {
    pub task: usize,
    pub rmse: f64,
    pub calibration_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub env: String,
    pub method: String,
    pub seed: u64,
    pub rmse: f64,
    pub calibration_error: f64,
    pub per_task: Vec<TaskMetric>,
}

/// Predictions for one test task: a mixture and a target per point.
pub struct TaskPredictions<'a> {
    pub mixtures: &'a [GaussianMixture],
    pub targets: &'a [f64],
}

impl MetricReport {
    /// Pools all test points for the headline numbers and keeps per-task
    /// values alongside.
    pub fn from_predictions(
        env: &str,
        method: &str,
        seed: u64,
        tasks: &[TaskPredictions<'_>],
        grid: &CalibrationGrid,
    ) -> Result<Self> {
        let mut all_means = Vec::new();
        let mut all_targets = Vec::new();
        let mut all_cdf = Vec::new();
        let mut per_task = Vec::with_capacity(tasks.len());
        for (i, t) in tasks.iter().enumerate() {
            if t.mixtures.len() != t.targets.len() {
                return Err(MarsError::invalid(format!(
                    "task {i}: {} predictions for {} targets",
                    t.mixtures.len(),
                    t.targets.len()
                )));
            }
            let means: Vec<f64> = t.mixtures.iter().map(GaussianMixture::mean).collect();
            let cdf: Vec<f64> = t.mixtures.iter().zip(t.targets).map(|(m, &y)| m.cdf(y)).collect();
            per_task.push(TaskMetric {
                task: i,
                rmse: rmse(&means, t.targets)?,
                calibration_error: calibration_error(&cdf, grid)?,
            });
            all_means.extend(means);
            all_targets.extend_from_slice(t.targets);
            all_cdf.extend(cdf);
        }
        Ok(MetricReport {
            env: env.to_string(),
            method: method.to_string(),
            seed,
            rmse: rmse(&all_means, &all_targets)?,
            calibration_error: calibration_error(&all_cdf, grid)?,
            per_task,
        })
    }
}

pub const CSV_HEADER: [&str; 5] = ["env", "method", "seed", "rmse", "calib_err"];

/// Writes one CSV row per report.
pub fn write_metrics_csv<W: Write>(out: W, reports: &[MetricReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| MarsError::Format(e.to_string());
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in reports {
        w.write_record([
            r.env.clone(),
            r.method.clone(),
            r.seed.to_string(),
            format!("{:?}", r.rmse),
            format!("{:?}", r.calibration_error),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| MarsError::Format(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[1.5, 2.5, -0.5], &[1.0, 2.0, -1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn rmse_matches_formula() {
        let mut r = rng::seeded(1);
        let p: Vec<f64> = (0..37).map(|_| r.random_range(-3.0..3.0)).collect();
        let t: Vec<f64> = (0..37).map(|_| r.random_range(-3.0..3.0)).collect();
        let mut acc = 0.0;
        for i in 0..37 {
            acc += (p[i] - t[i]).powi(2);
        }
        let oracle = (acc / 37.0).sqrt();
        assert!((rmse(&p, &t).unwrap() - oracle).abs() <= 1e-12);
    }

    #[test]
    fn cdf_limits_and_centre() {
        let m = GaussianMixture {
            means: vec![0.3],
            std: 0.7,
        };
        assert_eq!(m.cdf(0.3), 0.5);
        assert!(m.cdf(-1e6) < 1e-12);
        assert!((m.cdf(1e6) - 1.0).abs() < 1e-9);
        assert!((normal_cdf(1.0) - 0.8413447460685429).abs() < 1e-15);
    }

    #[test]
    fn two_component_cdf_matches_quadrature() {
        let m = GaussianMixture {
            means: vec![-0.5, 1.2],
            std: 0.4,
        };
        let pdf = |y: f64| {
            m.means
                .iter()
                .map(|mu| (-(y - mu).powi(2) / (2.0 * 0.16)).exp() / (0.4 * (2.0 * std::f64::consts::PI).sqrt()))
                .sum::<f64>()
                / 2.0
        };
        // Composite Simpson from far in the left tail.
        for y in [-1.0, 0.0, 0.4, 1.5, 2.5] {
            let (a, n) = (-8.0, 20000);
            let h = (y - a) / n as f64;
            let mut s = pdf(a) + pdf(y);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * pdf(a + i as f64 * h);
            }
            let quad = s * h / 3.0;
            assert!((m.cdf(y) - quad).abs() < 1e-6);
        }
    }

    #[test]
    fn default_grid() {
        let g = CalibrationGrid::default();
        assert_eq!(g.levels().len(), 20);
        assert_eq!(g.levels()[0], 1.0 / 21.0);
        assert!(g.levels().windows(2).all(|w| w[0] < w[1]));
        assert!(CalibrationGrid::new(vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn uniform_cdf_values_are_calibrated() {
        let n = 10000;
        let cdf: Vec<f64> = (1..=n).map(|i| i as f64 / (n + 1) as f64).collect();
        assert!(calibration_error(&cdf, &CalibrationGrid::default()).unwrap() < 0.01);
    }

    #[test]
    fn degenerate_predictor_error() {
        let g = CalibrationGrid::default();
        let want: f64 = g.levels().iter().map(|q| 1.0 - q).sum::<f64>() / 20.0;
        assert!((want - 0.5).abs() < 1e-15);
        let got = calibration_error(&vec![0.0; 50], &g).unwrap();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn half_below_single_level() {
        let g = CalibrationGrid::new(vec![0.5]).unwrap();
        assert_eq!(calibration_error(&[0.1, 0.2, 0.7, 0.9], &g).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_score_examples() {
        let f = DVector::from_vec(vec![0.3, -1.0]);
        let id = DMatrix::identity(2, 2);
        assert_eq!(analytic_gp_marginal_score(&DVector::zeros(2), &id, &f).unwrap(), -&f);
        assert_eq!(analytic_gp_marginal_score(&f, &id, &f).unwrap(), DVector::zeros(2));
        assert!(analytic_gp_marginal_score(&f, &DMatrix::zeros(2, 2), &f).is_err());
    }

    #[test]
    fn gaussian_score_matches_finite_differences() {
        let mut r = rng::seeded(2);
        for _ in 0..20 {
            let a = DMatrix::from_fn(3, 3, |_, _| r.random_range(-1.0..1.0));
            let cov = &a * a.transpose() + DMatrix::identity(3, 3) * 0.3;
            let mu = DVector::from_fn(3, |_, _| r.random_range(-1.0..1.0));
            let f = DVector::from_fn(3, |_, _| r.random_range(-2.0..2.0));
            let inv = cov.clone().try_inverse().unwrap();
            let logpdf = |g: &DVector<f64>| -0.5 * ((g - &mu).transpose() * &inv * (g - &mu))[(0, 0)];
            let s = analytic_gp_marginal_score(&mu, &cov, &f).unwrap();
            for i in 0..3 {
                let h = 1e-5;
                let mut fp = f.clone();
                fp[i] += h;
                let mut fm = f.clone();
                fm[i] -= h;
                let fd = (logpdf(&fp) - logpdf(&fm)) / (2.0 * h);
                assert!((fd - s[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn score_benchmark_examples() {
        let t = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -0.5, 2.0, 0.0, 0.0]);
        let q = score_benchmark(&t, &t).unwrap();
        assert_eq!((q.rmse, q.cosine), (0.0, 1.0));
        let q = score_benchmark(&(&t * 2.0), &t).unwrap();
        assert!((q.cosine - 1.0).abs() < 1e-15);
        let want = (t.iter().map(|v| v * v).sum::<f64>() / 6.0).sqrt();
        assert!((q.rmse - want).abs() < 1e-15);
        let q = score_benchmark(&(-&t), &t).unwrap();
        // The zero row pairs with zero and counts as aligned.
        assert!((q.cosine - (-1.0 - 1.0 + 1.0) / 3.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn report_and_csv() {
        let mix = vec![
            GaussianMixture {
                means: vec![1.0, 1.0],
                std: 0.5,
            };
            2
        ];
        let targets = [1.0, 1.0];
        let r = MetricReport::from_predictions(
            "sinusoid",
            "mars",
            3,
            &[TaskPredictions {
                mixtures: &mix,
                targets: &targets,
            }],
            &CalibrationGrid::default(),
        )
        .unwrap();
        assert_eq!(r.rmse, 0.0);
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[r]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("env,method,seed,rmse,calib_err\nsinusoid,mars,3,0.0,"));
    }

    proptest! {
        #[test]
        fn cdf_is_monotone(means in prop::collection::vec(-5.0f64..5.0, 1..6), std in 0.05f64..3.0, a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let m = GaussianMixture { means, std };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(m.cdf(lo) <= m.cdf(hi));
            prop_assert!((0.0..=1.0).contains(&m.cdf(lo)));
        }

        #[test]
        fn rmse_is_translation_invariant(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..20), c in -100.0f64..100.0) {
            let p: Vec<f64> = v.iter().map(|x| x.0).collect();
            let t: Vec<f64> = v.iter().map(|x| x.1).collect();
            let ps: Vec<f64> = p.iter().map(|x| x + c).collect();
            let ts: Vec<f64> = t.iter().map(|x| x + c).collect();
            prop_assert!((rmse(&p, &t).unwrap() - rmse(&ps, &ts).unwrap()).abs() <= 1e-9);
        }

        #[test]
        fn calibration_depends_only_on_cdf_values(
            pts in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..30),
            scale in 0.1f64..5.0,
            shift in -10.0f64..10.0,
        ) {
            // The map y ↦ scale·y + shift is applied to targets, means and std.
            let g = CalibrationGrid::default();
            let base: Vec<f64> = pts.iter().map(|(m, y)| GaussianMixture { means: vec![*m], std: 0.7 }.cdf(*y)).collect();
            let moved: Vec<f64> = pts
                .iter()
                .map(|(m, y)| GaussianMixture { means: vec![scale * m + shift], std: 0.7 * scale }.cdf(scale * y + shift))
                .collect();
            let a = calibration_error(&base, &g).unwrap();
            let b = calibration_error(&moved, &g).unwrap();
            // CDF values agree to rounding; a value sitting exactly on a level could flip.
            let near_level = base.iter().any(|f| g.levels().iter().any(|q| (f - q).abs() < 1e-9));
            prop_assert!(near_level || a == b);
        }
    }
}
