//! Experiment configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spro_core::datasets::{self, CsvSchema, RegressionTeacherConfig, SpiralsConfig, TargetKind};
use spro_core::ensemble::EnsembleConfig;
use spro_core::netcore::{Batch, Matrix, ModelSpec, OutputKind, Targets};
use spro_core::opt::TrainConfig;
use spro_core::spro::SproConfig;
use spro_core::surface::{DEFAULT_MARGIN, DEFAULT_RESOLUTION};

use crate::Invalid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds training, connector growth and ensemble sampling. `--seed`
    /// overrides it. Dataset seeds live in `[data]`.
    #[serde(default)]
    pub seed: u64,
    /// Where artifacts go unless `--out` is given. Relative to the config file.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub model: ModelSpec,
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub spro: SproConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub surface: SurfaceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataConfig {
    Spirals(SpiralsConfig),
    Regression(RegressionTeacherConfig),
    Csv(CsvFiles),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvFiles {
    pub train: PathBuf,
    pub test: Option<PathBuf>,
    pub validation: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceConfig {
    pub resolution: usize,
    pub margin: f64,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            margin: DEFAULT_MARGIN,
        }
    }
}

/// Everything a command may need from the dataset section.
pub struct Data {
    pub train: Batch,
    pub test: Option<Batch>,
    pub validation: Option<Batch>,
    /// Dense evaluation inputs with noiseless targets (regression only).
    pub grid: Option<Batch>,
    /// Input intervals that contain training data (regression only).
    pub intervals: Vec<(f64, f64)>,
}

impl ExperimentConfig {
    /// Reads, applies the seed override and validates.
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config: Self =
            toml::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
        if let Some(seed) = seed {
            config.seed = seed;
        }
        config.train.seed = config.seed;
        config.spro.train.seed = config.seed;
        config.ensemble.seed = config.seed;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = config.output_dir.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let DataConfig::Csv(files) = &mut config.data {
            for p in [
                Some(&mut files.train),
                files.test.as_mut(),
                files.validation.as_mut(),
            ]
            .into_iter()
            .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |e: &dyn std::fmt::Display| anyhow::Error::new(Invalid(e.to_string()));
        self.model.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        self.spro.validate().map_err(|e| invalid(&e))?;
        self.ensemble.validate().map_err(|e| invalid(&e))?;
        if self.surface.resolution < 2
            || !(self.surface.margin > 0.0 && self.surface.margin.is_finite())
        {
            bail!(Invalid(
                "surface needs resolution ≥ 2 and a positive margin".into()
            ));
        }
        let (inputs, kind) = match &self.data {
            DataConfig::Spirals(_) => (2, OutputKind::Logits),
            DataConfig::Regression(_) => (1, OutputKind::Scalar),
            DataConfig::Csv(_) => (self.model.input_width(), self.model.output_kind),
        };
        if self.model.input_width() != inputs || self.model.output_kind != kind {
            bail!(Invalid(format!(
                "model takes {} inputs with {:?} output; the dataset needs {inputs} with {kind:?}",
                self.model.input_width(),
                self.model.output_kind
            )));
        }
        if matches!(self.data, DataConfig::Spirals(_)) && self.model.output_width() != 2 {
            bail!(Invalid("two spirals needs a 2-class model".into()));
        }
        Ok(())
    }

    pub fn load_data(&self) -> Result<Data> {
        match &self.data {
            DataConfig::Spirals(c) => {
                let (train, test) =
                    datasets::gen_two_spirals(c).map_err(|e| Invalid(e.to_string()))?;
                Ok(Data {
                    train,
                    test: Some(test),
                    validation: Some(datasets::gen_spirals_validation(c)?),
                    grid: None,
                    intervals: Vec::new(),
                })
            }
            DataConfig::Regression(c) => {
                let data = datasets::gen_regression_1d(c).map_err(|e| Invalid(e.to_string()))?;
                Ok(Data {
                    train: data.train,
                    test: None,
                    validation: None,
                    grid: Some(data.grid),
                    intervals: c.intervals.clone(),
                })
            }
            DataConfig::Csv(files) => {
                let schema = CsvSchema {
                    n_features: self.model.input_width(),
                    target: match self.model.output_kind {
                        OutputKind::Logits => TargetKind::Class,
                        OutputKind::Scalar => TargetKind::Real,
                    },
                };
                let load = |p: &Path| -> Result<Batch> {
                    let batch = datasets::load_csv(p, &schema)?;
                    if let Targets::Classes(c) = &batch.targets {
                        if let Some(&bad) = c.iter().find(|&&c| c >= self.model.output_width()) {
                            bail!(Invalid(format!(
                                "{}: class {bad} exceeds the model's outputs",
                                p.display()
                            )));
                        }
                    }
                    Ok(batch)
                };
                Ok(Data {
                    train: load(&files.train)?,
                    test: files.test.as_deref().map(load).transpose()?,
                    validation: files.validation.as_deref().map(load).transpose()?,
                    grid: None,
                    intervals: Vec::new(),
                })
            }
        }
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config is plain data")
    }
}

impl Data {
    /// Held-out split for evaluation: test, else the regression grid, else train.
    pub fn eval_split(&self) -> (&'static str, &Batch) {
        if let Some(t) = &self.test {
            ("test", t)
        } else if let Some(g) = &self.grid {
            ("grid", g)
        } else {
            ("train", &self.train)
        }
    }
}

/// `[-2, 2]²` probe grid used for decision-boundary diversity.
pub fn decision_grid(per_axis: usize) -> Matrix {
    let step = 4.0 / (per_axis - 1) as f64;
    let mut data = Vec::with_capacity(per_axis * per_axis * 2);
    for i in 0..per_axis {
        for j in 0..per_axis {
            data.push(-2.0 + step * j as f64);
            data.push(-2.0 + step * i as f64);
        }
    }
    Matrix::new(per_axis * per_axis, 2, data)
}
