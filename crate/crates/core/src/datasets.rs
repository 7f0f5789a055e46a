//! Desk-scale datasets: two interleaved spirals, a 1-d regression task drawn
//! from a random teacher network, and CSV ingestion.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::netcore::{self, Activation, Batch, Matrix, ModelSpec, Targets};
use crate::opt::rng_stream;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("file {0} contains no data rows")]
    Empty(String),
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpiralsConfig {
    pub n_per_class: usize,
    pub n_test_per_class: usize,
    pub noise_sigma: f64,
    /// Total angle swept by each arm, in radians.
    pub turns_angle: f64,
    pub seed: u64,
}

impl Default for SpiralsConfig {
    fn default() -> Self {
        Self {
            n_per_class: 200,
            n_test_per_class: 500,
            noise_sigma: 0.02,
            turns_angle: 3.0 * PI,
            seed: 0,
        }
    }
}

/// Point on arm `class` at warped position `u ∈ [0, 1]`, before noise.
pub fn spiral_point(turns_angle: f64, class: usize, u: f64) -> [f64; 2] {
    let theta = turns_angle * u.sqrt();
    let r = theta / turns_angle;
    let phase = theta + class as f64 * PI;
    [r * phase.cos(), r * phase.sin()]
}

fn spirals_split<R: Rng>(config: &SpiralsConfig, n_per_class: usize, rng: &mut R) -> Batch {
    let noise = Normal::new(0.0, config.noise_sigma).expect("validated sigma");
    let mut data = Vec::with_capacity(4 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for _ in 0..n_per_class {
        for class in 0..2 {
            let u: f64 = rng.random();
            let [x, y] = spiral_point(config.turns_angle, class, u);
            data.push(x + rng.sample(noise));
            data.push(y + rng.sample(noise));
            labels.push(class);
        }
    }
    Batch::new(Matrix::new(labels.len(), 2, data), Targets::Classes(labels)).expect("non-empty")
}

/// Train and test splits; the test split comes from an independent stream.
fn check_spirals(config: &SpiralsConfig) -> Result<()> {
    if config.n_per_class == 0 || config.n_test_per_class == 0 {
        return Err(DataError::InvalidConfig(
            "spiral sizes must be positive".into(),
        ));
    }
    if !(config.noise_sigma >= 0.0 && config.noise_sigma.is_finite()) {
        return Err(DataError::InvalidConfig(
            "noise_sigma must be non-negative".into(),
        ));
    }
    if !(config.turns_angle > 0.0 && config.turns_angle.is_finite()) {
        return Err(DataError::InvalidConfig(
            "turns_angle must be positive".into(),
        ));
    }
    Ok(())
}

pub fn gen_two_spirals(config: &SpiralsConfig) -> Result<(Batch, Batch)> {
    check_spirals(config)?;
    let train = spirals_split(config, config.n_per_class, &mut rng_stream(config.seed, 0));
    let test = spirals_split(
        config,
        config.n_test_per_class,
        &mut rng_stream(config.seed, 1),
    );
    Ok((train, test))
}

/// A third split, the size of the test split, for fitting temperatures.
pub fn gen_spirals_validation(config: &SpiralsConfig) -> Result<Batch> {
    check_spirals(config)?;
    Ok(spirals_split(
        config,
        config.n_test_per_class,
        &mut rng_stream(config.seed, 2),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionTeacherConfig {
    pub hidden_width: usize,
    pub intervals: Vec<(f64, f64)>,
    pub points_per_interval: usize,
    pub noise_sigma_sq: f64,
    pub seed: u64,
}

impl Default for RegressionTeacherConfig {
    fn default() -> Self {
        Self {
            hidden_width: 100,
            intervals: vec![(-7.0, -5.0), (-1.0, 1.0), (5.0, 7.0)],
            points_per_interval: 40,
            noise_sigma_sq: 0.1,
            seed: 0,
        }
    }
}

pub const GRID_MIN: f64 = -9.0;
pub const GRID_MAX: f64 = 9.0;
pub const GRID_STEP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub train: Batch,
    /// Dense inputs over `[-9, 9]` with noiseless teacher values as targets.
    pub grid: Batch,
    pub teacher_spec: ModelSpec,
    pub teacher_params: Vec<f64>,
}

/// Open stretches between consecutive data intervals, e.g. `(−5, −1)` and
/// `(1, 5)` for the default layout.
pub fn gap_intervals(intervals: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut sorted = intervals.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    sorted
        .windows(2)
        .filter(|w| w[0].1 < w[1].0)
        .map(|w| (w[0].1, w[1].0))
        .collect()
}

/// Dense evaluation inputs `-9, -8.95, …, 9`.
pub fn regression_grid() -> Vec<f64> {
    let steps = ((GRID_MAX - GRID_MIN) / GRID_STEP).round() as usize;
    (0..=steps)
        .map(|i| GRID_MIN + GRID_STEP * i as f64)
        .collect()
}

pub fn gen_regression_1d(config: &RegressionTeacherConfig) -> Result<RegressionData> {
    if config.hidden_width == 0 || config.points_per_interval == 0 || config.intervals.is_empty() {
        return Err(DataError::InvalidConfig(
            "teacher sizes must be positive".into(),
        ));
    }
    if !(config.noise_sigma_sq >= 0.0 && config.noise_sigma_sq.is_finite()) {
        return Err(DataError::InvalidConfig(
            "noise_sigma_sq must be non-negative".into(),
        ));
    }
    if config
        .intervals
        .iter()
        .any(|(a, b)| a.partial_cmp(b) != Some(std::cmp::Ordering::Less))
    {
        return Err(DataError::InvalidConfig(
            "intervals must be increasing".into(),
        ));
    }
    // Observation variance of the teacher spec only matters for its loss.
    let teacher_spec = ModelSpec::regressor(
        vec![1, config.hidden_width, 1],
        Activation::Tanh,
        config.noise_sigma_sq.max(f64::MIN_POSITIVE),
    );
    let mut teacher_rng = rng_stream(config.seed, 0);
    let mut teacher_params = Vec::with_capacity(teacher_spec.param_count());
    for w in teacher_spec.layer_widths.windows(2) {
        let scale = (2.0 / w[0] as f64).sqrt();
        // weights then biases, all standard normal scaled by the fan-in
        for _ in 0..(w[0] + 1) * w[1] {
            let z: f64 = teacher_rng.sample(StandardNormal);
            teacher_params.push(scale * z);
        }
    }

    let mut data_rng = rng_stream(config.seed, 1);
    let noise_sd = config.noise_sigma_sq.sqrt();
    let mut xs = Vec::with_capacity(config.intervals.len() * config.points_per_interval);
    for &(lo, hi) in &config.intervals {
        for _ in 0..config.points_per_interval {
            xs.push(data_rng.random_range(lo..hi));
        }
    }
    let n = xs.len();
    let clean = netcore::forward(
        &teacher_spec,
        &teacher_params,
        &Matrix::new(n, 1, xs.clone()),
    )
    .expect("teacher shapes are consistent")
    .data;
    let ys = clean
        .iter()
        .map(|f| {
            let z: f64 = data_rng.sample(StandardNormal);
            f + noise_sd * z
        })
        .collect();

    let grid_x = regression_grid();
    let m = grid_x.len();
    let grid_y = netcore::forward(
        &teacher_spec,
        &teacher_params,
        &Matrix::new(m, 1, grid_x.clone()),
    )
    .expect("teacher shapes are consistent")
    .data;

    Ok(RegressionData {
        train: Batch::new(Matrix::new(n, 1, xs), Targets::Values(ys)).expect("non-empty"),
        grid: Batch::new(Matrix::new(m, 1, grid_x), Targets::Values(grid_y)).expect("non-empty"),
        teacher_spec,
        teacher_params,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Class,
    Real,
}

/// Column layout of a dataset CSV: `x0,…,x{n-1},y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub n_features: usize,
    pub target: TargetKind,
}

impl CsvSchema {
    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = (0..self.n_features).map(|i| format!("x{i}")).collect();
        h.push("y".into());
        h
    }

    pub fn for_batch(batch: &Batch) -> Self {
        Self {
            n_features: batch.inputs.cols,
            target: match batch.targets {
                Targets::Classes(_) => TargetKind::Class,
                Targets::Values(_) => TargetKind::Real,
            },
        }
    }
}

/// Writes `batch` as CSV. Floats use the shortest representation that parses
/// back to the same `f64`.
pub fn write_csv<W: Write>(batch: &Batch, mut out: W) -> std::io::Result<()> {
    let schema = CsvSchema::for_batch(batch);
    writeln!(out, "{}", schema.header().join(","))?;
    for r in 0..batch.len() {
        let mut line = String::new();
        for v in batch.inputs.row(r) {
            line.push_str(&format!("{v:?},"));
        }
        match &batch.targets {
            Targets::Classes(c) => line.push_str(&c[r].to_string()),
            Targets::Values(v) => line.push_str(&format!("{:?}", v[r])),
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn save_csv(batch: &Batch, path: &Path) -> Result<()> {
    let io = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = File::create(path).map_err(io)?;
    write_csv(batch, &mut file).map_err(io)?;
    file.flush().map_err(io)
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Batch> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file));
    let headers = reader.headers().map_err(|e| DataError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let expected = schema.header();
    if headers.is_empty() {
        return Err(DataError::Empty(path.display().to_string()));
    }
    if headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(DataError::Schema(format!(
            "expected header {}, found {}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut inputs = Vec::new();
    let mut classes = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DataError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != schema.n_features + 1 {
            return Err(DataError::Parse {
                line,
                message: format!(
                    "expected {} fields, found {}",
                    schema.n_features + 1,
                    record.len()
                ),
            });
        }
        for field in record.iter().take(schema.n_features) {
            let v: f64 = field.trim().parse().map_err(|_| DataError::Parse {
                line,
                message: format!("invalid number {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(DataError::Parse {
                    line,
                    message: format!("non-finite value {field:?}"),
                });
            }
            inputs.push(v);
        }
        let target = record[schema.n_features].trim();
        match schema.target {
            TargetKind::Class => {
                classes.push(target.parse::<usize>().map_err(|_| DataError::Parse {
                    line,
                    message: format!("invalid class label {target:?}"),
                })?)
            }
            TargetKind::Real => {
                let v: f64 = target.parse().map_err(|_| DataError::Parse {
                    line,
                    message: format!("invalid target {target:?}"),
                })?;
                if !v.is_finite() {
                    return Err(DataError::Parse {
                        line,
                        message: format!("non-finite target {target:?}"),
                    });
                }
                values.push(v);
            }
        }
    }
    let n = classes.len().max(values.len());
    if n == 0 {
        return Err(DataError::Empty(path.display().to_string()));
    }
    let targets = match schema.target {
        TargetKind::Class => Targets::Classes(classes),
        TargetKind::Real => Targets::Values(values),
    };
    Batch::new(Matrix::new(n, schema.n_features, inputs), targets)
        .map_err(|e| DataError::Schema(e.to_string()))
}
