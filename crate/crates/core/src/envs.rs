//! Meta-learning task sources, standardization and the measurement
//! distribution.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{MarsError, Result};
use crate::rng::Rng;

/// Half-width added on each side of a dimension whose data has zero range.
pub const ZERO_RANGE_WIDEN: f64 = 1e-6;
/// Standard deviations below this are replaced by 1.
pub const STD_FLOOR: f64 = 1e-8;
/// Fraction of the data range added on each side of the measurement cube.
pub const CUBE_EXPANSION: f64 = 0.2;

/// One regression task: `m` inputs of dimension `d` with scalar targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    targets: DVector<f64>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, targets: DVector<f64>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(MarsError::invalid("dataset needs at least one row"));
        }
        if inputs.nrows() != targets.len() {
            return Err(MarsError::invalid(format!(
                "{} input rows but {} targets",
                inputs.nrows(),
                targets.len()
            )));
        }
        if inputs.ncols() == 0 {
            return Err(MarsError::invalid("inputs need at least one column"));
        }
        if !inputs.iter().chain(targets.iter()).all(|v| v.is_finite()) {
            return Err(MarsError::invalid("dataset contains non-finite values"));
        }
        Ok(Dataset { inputs, targets })
    }

    /// 1-D convenience constructor.
    pub fn from_1d(xs: &[f64], ys: &[f64]) -> Result<Self> {
        Dataset::new(
            DMatrix::from_column_slice(xs.len(), 1, xs),
            DVector::from_column_slice(ys),
        )
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Rows selected by `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<Dataset> {
        let x = DMatrix::from_fn(idx.len(), self.input_dim(), |r, c| self.inputs[(idx[r], c)]);
        let y = DVector::from_fn(idx.len(), |r, _| self.targets[idx[r]]);
        Dataset::new(x, y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskCollection {
    tasks: Vec<Dataset>,
    input_dim: usize,
}

impl TaskCollection {
    pub fn new(tasks: Vec<Dataset>) -> Result<Self> {
        let first = tasks
            .first()
            .ok_or_else(|| MarsError::invalid("task collection is empty"))?;
        let input_dim = first.input_dim();
        if let Some((i, t)) = tasks.iter().enumerate().find(|(_, t)| t.input_dim() != input_dim) {
            return Err(MarsError::invalid(format!(
                "task {i} has input dimension {} but task 0 has {input_dim}",
                t.input_dim()
            )));
        }
        Ok(TaskCollection { tasks, input_dim })
    }

    pub fn tasks(&self) -> &[Dataset] {
        &self.tasks
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn map(&self, f: impl Fn(&Dataset) -> Dataset) -> TaskCollection {
        TaskCollection {
            tasks: self.tasks.iter().map(f).collect(),
            input_dim: self.input_dim,
        }
    }
}

// Sinusoid environment: f(x) = β·x + a·sin(1.5·(x − b)) + c.

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub beta: f64,
}

impl SinusoidParams {
    pub fn sample(rng: &mut Rng) -> Self {
        let a = Uniform::new(0.7, 1.3).unwrap().sample(rng);
        let b = Normal::new(0.0, 0.1).unwrap().sample(rng);
        let c = Normal::new(5.0, 0.1).unwrap().sample(rng);
        let beta = Normal::new(0.5, 0.2).unwrap().sample(rng);
        SinusoidParams { a, b, c, beta }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.beta * x + self.a * (1.5 * (x - self.b)).sin() + self.c
    }

    /// `m` points with `x ~ U(−5, 5)` and Gaussian observation noise.
    pub fn sample_dataset(&self, m: usize, noise_std: f64, rng: &mut Rng) -> Result<Dataset> {
        if m == 0 {
            return Err(MarsError::invalid("sinusoid dataset needs m ≥ 1"));
        }
        if !(noise_std >= 0.0) {
            return Err(MarsError::invalid("noise_std must be non-negative"));
        }
        let ux = Uniform::new(-5.0, 5.0).unwrap();
        let xs: Vec<f64> = (0..m).map(|_| ux.sample(rng)).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| {
                let noise = if noise_std > 0.0 {
                    Normal::new(0.0, noise_std).unwrap().sample(rng)
                } else {
                    0.0
                };
                self.eval(x) + noise
            })
            .collect();
        Dataset::from_1d(&xs, &ys)
    }
}

/// Sizes of a synthetic sinusoid meta-learning benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidEnvConfig {
    pub num_tasks: usize,
    pub points_per_task: usize,
    pub noise_std: f64,
}

impl Default for SinusoidEnvConfig {
    fn default() -> Self {
        SinusoidEnvConfig {
            num_tasks: 20,
            points_per_task: 8,
            noise_std: 0.1,
        }
    }
}

/// Draw `num_tasks` independent sinusoid tasks.
pub fn sinusoid_tasks(cfg: &SinusoidEnvConfig, rng: &mut Rng) -> Result<TaskCollection> {
    let tasks = (0..cfg.num_tasks)
        .map(|_| SinusoidParams::sample(rng).sample_dataset(cfg.points_per_task, cfg.noise_std, rng))
        .collect::<Result<Vec<_>>>()?;
    TaskCollection::new(tasks)
}

/// Uniform distribution over an axis-aligned box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementDistribution {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl MeasurementDistribution {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() || low.is_empty() {
            return Err(MarsError::invalid("hypercube bounds must have equal, non-zero length"));
        }
        if low
            .iter()
            .zip(&high)
            .any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite())
        {
            return Err(MarsError::invalid(
                "hypercube needs finite low ≤ high in every dimension",
            ));
        }
        Ok(MeasurementDistribution { low, high })
    }

    /// Data range per dimension, widened by 20% on each side. Dimensions with
    /// zero range are widened by [`ZERO_RANGE_WIDEN`] instead.
    pub fn from_tasks(tasks: &TaskCollection) -> Result<Self> {
        if tasks.is_empty() {
            return Err(MarsError::invalid("cannot build a hypercube from no tasks"));
        }
        let d = tasks.input_dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for t in tasks.tasks() {
            for row in t.inputs().row_iter() {
                for j in 0..d {
                    lo[j] = lo[j].min(row[j]);
                    hi[j] = hi[j].max(row[j]);
                }
            }
        }
        for j in 0..d {
            let range = hi[j] - lo[j];
            if range > 0.0 {
                lo[j] -= CUBE_EXPANSION * range;
                hi[j] += CUBE_EXPANSION * range;
            } else {
                lo[j] -= ZERO_RANGE_WIDEN;
                hi[j] += ZERO_RANGE_WIDEN;
            }
        }
        MeasurementDistribution::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.low.iter().zip(&self.high))
            .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// `k` i.i.d. uniform points, one per row.
    pub fn sample(&self, k: usize, rng: &mut Rng) -> Result<DMatrix<f64>> {
        if k == 0 {
            return Err(MarsError::invalid("measurement set size must be ≥ 1"));
        }
        let d = self.dim();
        let mut x = DMatrix::zeros(k, d);
        for r in 0..k {
            for j in 0..d {
                let u: f64 = rng.random();
                x[(r, j)] = (self.low[j] + u * (self.high[j] - self.low[j])).clamp(self.low[j], self.high[j]);
            }
        }
        Ok(x)
    }
}

/// Affine map taking pooled meta-training inputs and targets to zero mean and
/// unit standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: f64,
    pub output_std: f64,
}

fn floored(std: f64) -> f64 {
    if std < STD_FLOOR || !std.is_finite() {
        1.0
    } else {
        std
    }
}

impl Standardizer {
    pub fn identity(d: usize) -> Self {
        Standardizer {
            input_mean: vec![0.0; d],
            input_std: vec![1.0; d],
            output_mean: 0.0,
            output_std: 1.0,
        }
    }

    /// Empirical moments pooled over every row of every task. Population
    /// (1/N) standard deviations; std below [`STD_FLOOR`] becomes 1.
    pub fn fit(tasks: &TaskCollection) -> Self {
        let d = tasks.input_dim();
        let n: usize = tasks.tasks().iter().map(|t| t.len()).sum();
        let nf = n as f64;
        let mut mean = vec![0.0; d];
        let mut ymean = 0.0;
        for t in tasks.tasks() {
            for (r, row) in t.inputs().row_iter().enumerate() {
                for j in 0..d {
                    mean[j] += row[j];
                }
                ymean += t.targets()[r];
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        ymean /= nf;
        let mut var = vec![0.0; d];
        let mut yvar = 0.0;
        for t in tasks.tasks() {
            for (r, row) in t.inputs().row_iter().enumerate() {
                for j in 0..d {
                    var[j] += (row[j] - mean[j]).powi(2);
                }
                yvar += (t.targets()[r] - ymean).powi(2);
            }
        }
        Standardizer {
            input_std: var.iter().map(|v| floored((v / nf).sqrt())).collect(),
            input_mean: mean,
            output_mean: ymean,
            output_std: floored((yvar / nf).sqrt()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_mean.len()
    }

    pub fn apply_inputs(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| {
            (x[(r, c)] - self.input_mean[c]) / self.input_std[c]
        })
    }

    pub fn invert_inputs(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| {
            x[(r, c)] * self.input_std[c] + self.input_mean[c]
        })
    }

    pub fn apply_targets(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| (v - self.output_mean) / self.output_std)
    }

    pub fn invert_targets(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| v * self.output_std + self.output_mean)
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        Dataset {
            inputs: self.apply_inputs(data.inputs()),
            targets: self.apply_targets(data.targets()),
        }
    }

    pub fn apply_all(&self, tasks: &TaskCollection) -> TaskCollection {
        tasks.map(|t| self.apply(t))
    }
}

/// Which CSV column to read, by header name or zero-based position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnSpec {
    Index(usize),
    Name(String),
}

impl ColumnSpec {
    fn resolve(&self, headers: &csv::StringRecord, path: &Path) -> Result<usize> {
        match self {
            ColumnSpec::Index(i) if *i < headers.len() => Ok(*i),
            ColumnSpec::Index(i) => Err(MarsError::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("column index {i} out of range ({} columns)", headers.len()),
            }),
            ColumnSpec::Name(name) => headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| MarsError::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    message: format!("missing column '{name}'"),
                }),
        }
    }
}

/// Read one dataset from a headered, comma-separated file.
pub fn load_csv_dataset(path: &Path, input_cols: &[ColumnSpec], target_col: &ColumnSpec) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|source| MarsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| MarsError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let xi: Vec<usize> = input_cols
        .iter()
        .map(|c| c.resolve(&headers, path))
        .collect::<Result<_>>()?;
    let yi = target_col.resolve(&headers, path)?;
    if xi.is_empty() {
        return Err(MarsError::invalid("at least one input column is required"));
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (n, rec) in reader.records().enumerate() {
        // header is line 1
        let line = n + 2;
        let rec = rec.map_err(|e| MarsError::Parse {
            path: path.to_path_buf(),
            line: e.position().map(|p| p.line() as usize).unwrap_or(line),
            message: e.to_string(),
        })?;
        let cell = |i: usize| -> Result<f64> {
            let raw = rec.get(i).unwrap_or("").trim();
            let v: f64 = raw.parse().map_err(|_| MarsError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("non-numeric value '{raw}' in column {}", headers.get(i).unwrap_or("?")),
            })?;
            if !v.is_finite() {
                return Err(MarsError::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("non-finite value '{raw}' in column {}", headers.get(i).unwrap_or("?")),
                });
            }
            Ok(v)
        };
        for &i in &xi {
            xs.push(cell(i)?);
        }
        ys.push(cell(yi)?);
    }
    if ys.is_empty() {
        return Err(MarsError::Parse {
            path: path.to_path_buf(),
            line: 2,
            message: "no data rows".into(),
        });
    }
    Dataset::new(DMatrix::from_row_slice(ys.len(), xi.len(), &xs), DVector::from_vec(ys))
}

/// One dataset per file, in the order given.
pub fn load_csv_tasks(paths: &[PathBuf], input_cols: &[ColumnSpec], target_col: &ColumnSpec) -> Result<TaskCollection> {
    let tasks = paths
        .iter()
        .map(|p| load_csv_dataset(p, input_cols, target_col))
        .collect::<Result<Vec<_>>>()?;
    TaskCollection::new(tasks)
}

/// Write a dataset as CSV with columns `x0..x{d-1},y`.
pub fn write_csv_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| MarsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv_dataset_to(file, data)
}

/// Header `x0, …, x{d-1}, y`; floats in shortest round-trip form.
pub fn write_csv_dataset_to<W: std::io::Write>(out: W, data: &Dataset) -> Result<()> {
    let fmt = |e: csv::Error| MarsError::Format(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..data.input_dim()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header).map_err(fmt)?;
    for r in 0..data.len() {
        let mut rec: Vec<String> = data.inputs().row(r).iter().map(|v| format!("{v:?}")).collect();
        rec.push(format!("{:?}", data.targets()[r]));
        w.write_record(&rec).map_err(fmt)?;
    }
    w.flush().map_err(|e| MarsError::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use std::f64::consts::PI;
    use std::io::Write;

    #[test]
    fn sinusoid_closed_form() {
        let p = SinusoidParams {
            a: 1.0,
            b: 0.0,
            c: 5.0,
            beta: 0.5,
        };
        assert_eq!(p.eval(0.0), 5.0);
        let p = SinusoidParams {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            beta: 0.0,
        };
        assert!((p.eval(PI / 3.0) - 1.0).abs() < 1e-15);
        // 0.7·2 + 1.3·sin(1.5·1.9) + 5.1
        let p = SinusoidParams {
            a: 1.3,
            b: 0.1,
            c: 5.1,
            beta: 0.7,
        };
        assert!((p.eval(2.0) - 6.873_721_416_045_308).abs() < 1e-12);
    }

    #[test]
    fn sinusoid_params_are_deterministic_and_in_support() {
        assert_eq!(
            SinusoidParams::sample(&mut seeded(3)),
            SinusoidParams::sample(&mut seeded(3))
        );
        let mut rng = seeded(11);
        let draws: Vec<_> = (0..10_000).map(|_| SinusoidParams::sample(&mut rng)).collect();
        assert!(draws.iter().all(|p| (0.7..=1.3).contains(&p.a)));
        let mean_a = draws.iter().map(|p| p.a).sum::<f64>() / draws.len() as f64;
        assert!((mean_a - 1.0).abs() < 0.01, "{mean_a}");
    }

    #[test]
    fn noiseless_dataset_matches_function() {
        let p = SinusoidParams {
            a: 1.1,
            b: 0.05,
            c: 4.9,
            beta: 0.4,
        };
        let d = p.sample_dataset(8, 0.0, &mut seeded(1)).unwrap();
        assert_eq!(d.len(), 8);
        for r in 0..8 {
            assert_eq!(d.targets()[r], p.eval(d.inputs()[(r, 0)]));
        }
        let again = p.sample_dataset(8, 0.0, &mut seeded(1)).unwrap();
        assert_eq!(d, again);
        assert!(p.sample_dataset(0, 0.1, &mut seeded(1)).is_err());
    }

    #[test]
    fn hypercube_expansion() {
        let t = TaskCollection::new(vec![Dataset::from_1d(&[0.0, 10.0, 4.0], &[0.0; 3]).unwrap()]).unwrap();
        let nu = MeasurementDistribution::from_tasks(&t).unwrap();
        assert_eq!((nu.low[0], nu.high[0]), (-2.0, 12.0));

        let t = TaskCollection::new(vec![
            Dataset::from_1d(&[-1.0, 0.2], &[0.0; 2]).unwrap(),
            Dataset::from_1d(&[0.5, 1.0], &[0.0; 2]).unwrap(),
        ])
        .unwrap();
        let nu = MeasurementDistribution::from_tasks(&t).unwrap();
        assert!((nu.low[0] + 1.4).abs() < 1e-12 && (nu.high[0] - 1.4).abs() < 1e-12);

        let t = TaskCollection::new(vec![Dataset::from_1d(&[3.0, 3.0], &[0.0; 2]).unwrap()]).unwrap();
        let nu = MeasurementDistribution::from_tasks(&t).unwrap();
        assert_eq!(nu.low[0], 3.0 - ZERO_RANGE_WIDEN);
        assert_eq!(nu.high[0], 3.0 + ZERO_RANGE_WIDEN);
        let x = nu.sample(50, &mut seeded(0)).unwrap();
        assert!(x.iter().all(|v| (v - 3.0).abs() <= ZERO_RANGE_WIDEN));
    }

    #[test]
    fn measurement_samples_uniform() {
        let nu = MeasurementDistribution::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let x = nu.sample(10_000, &mut seeded(5)).unwrap();
        for j in 0..2 {
            let m = x.column(j).mean();
            assert!((m - 0.5).abs() < 0.02);
        }
        assert!(nu.sample(0, &mut seeded(5)).is_err());
    }

    #[test]
    fn standardizer_moments_and_round_trip() {
        let mut rng = seeded(2);
        let tasks = sinusoid_tasks(&SinusoidEnvConfig::default(), &mut rng).unwrap();
        let s = Standardizer::fit(&tasks);
        let st = s.apply_all(&tasks);
        let xs: Vec<f64> = st.tasks().iter().flat_map(|t| t.inputs().iter().copied()).collect();
        let ys: Vec<f64> = st.tasks().iter().flat_map(|t| t.targets().iter().copied()).collect();
        for v in [&xs, &ys] {
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let sd = (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n).sqrt();
            assert!(m.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        }
        let t0 = &tasks.tasks()[0];
        let back = s.invert_inputs(&s.apply_inputs(t0.inputs()));
        assert!((back - t0.inputs()).abs().max() < 1e-12);
        let back = s.invert_targets(&s.apply_targets(t0.targets()));
        assert!((back - t0.targets()).abs().max() < 1e-12);
    }

    #[test]
    fn constant_column_std_is_floored() {
        let t = TaskCollection::new(vec![Dataset::new(
            DMatrix::from_row_slice(3, 2, &[1.0, 7.0, 2.0, 7.0, 3.0, 7.0]),
            DVector::from_vec(vec![1.0, 1.0, 1.0]),
        )
        .unwrap()])
        .unwrap();
        let s = Standardizer::fit(&t);
        assert_eq!(s.input_std[1], 1.0);
        assert_eq!(s.output_std, 1.0);
        let x = s.apply_inputs(t.tasks()[0].inputs());
        assert!(x.column(1).iter().all(|&v| v == 0.0));
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn csv_loading() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.csv", "u,v,y\n1,2,3\n4,5,6\n7,8,9\n0.5,-1,2\n");
        let b = write(dir.path(), "b.csv", "u,v,y\n1,1,1\n");
        let cols = [ColumnSpec::Name("u".into()), ColumnSpec::Index(1)];
        let tasks = load_csv_tasks(&[a.clone(), b], &cols, &ColumnSpec::Name("y".into())).unwrap();
        assert_eq!(tasks.len(), 2);
        assert_eq!(tasks.tasks()[0].len(), 4);
        assert_eq!(tasks.input_dim(), 2);
        assert_eq!(tasks.tasks()[1].targets()[0], 1.0);

        let bad = write(dir.path(), "bad.csv", "u,v,y\n1,2,3\n1,NaN,3\n");
        let err = load_csv_dataset(&bad, &cols, &ColumnSpec::Name("y".into())).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.csv:3"), "{msg}");

        let txt = write(dir.path(), "txt.csv", "u,v,y\n1,abc,3\n");
        assert!(load_csv_dataset(&txt, &cols, &ColumnSpec::Name("y".into()))
            .unwrap_err()
            .to_string()
            .contains(":2"));

        let err = load_csv_dataset(&a, &cols, &ColumnSpec::Name("z".into())).unwrap_err();
        assert!(err.to_string().contains("missing column 'z'"));

        let err = load_csv_dataset(&dir.path().join("nope.csv"), &cols, &ColumnSpec::Index(0)).unwrap_err();
        assert!(err.to_string().contains("nope.csv"));
    }
}
