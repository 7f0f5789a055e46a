//! Prediction by averaging models sampled from a complex.
//!
//! Every simplex gets the same number of samples, so the ensemble average is
//! the mean over simplexes of each simplex's own sample mean. A 0-simplex has
//! a single model; it is evaluated once and carries its simplex's full share,
//! which makes a complex of bare modes reproduce a deep ensemble exactly.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, GeometryError, ParamVector, SimplicialComplex};
use crate::netcore::{self, Matrix, ModelSpec, NetError, OutputKind};
use crate::opt::rng_stream;

/// RNG stream for ensemble sampling, apart from the training streams.
pub const ENSEMBLE_STREAM: u64 = 7;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("invalid ensemble config: {0}")]
    InvalidConfig(String),
    #[error("complex vertices have {found} parameters, the model needs {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("ensemble has no members")]
    Empty,
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, EnsembleError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub j_samples_per_simplex: usize,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            j_samples_per_simplex: 25,
            seed: 0,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.j_samples_per_simplex == 0 {
            return Err(EnsembleError::InvalidConfig(
                "j_samples_per_simplex must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One sampled model and its share of the ensemble average.
#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub params: ParamVector,
    pub weight: f64,
    pub simplex_index: usize,
}

/// Draws the ensemble members of `complex`. Weights sum to one.
pub fn draw_members(
    complex: &SimplicialComplex,
    spec: &ModelSpec,
    config: &EnsembleConfig,
) -> Result<Vec<Member>> {
    config.validate()?;
    if let Some(dim) = complex.store.dim() {
        if dim != spec.param_count() {
            return Err(EnsembleError::DimensionMismatch {
                expected: spec.param_count(),
                found: dim,
            });
        }
    }
    let j = config.j_samples_per_simplex;
    let mut rng = rng_stream(config.seed, ENSEMBLE_STREAM);
    let samples = geometry::sample_from_complex(complex, &mut rng, j)?;
    let n_simplexes = complex.simplexes.len() as f64;
    let mut members = Vec::with_capacity(samples.len());
    for sample in samples {
        let weight = if complex.simplexes[sample.simplex_index].order() == 0 {
            // identical copies: keep the first with the simplex's full share
            if members
                .last()
                .is_some_and(|m: &Member| m.simplex_index == sample.simplex_index)
            {
                continue;
            }
            1.0 / n_simplexes
        } else {
            1.0 / (n_simplexes * j as f64)
        };
        members.push(Member {
            params: sample.params,
            weight,
            simplex_index: sample.simplex_index,
        });
    }
    Ok(members)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    /// Averaged class probabilities, one row per input.
    Probabilities(Matrix),
    Regression(RegressionPrediction),
}

/// Per-input moments of the sampled functions.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionPrediction {
    pub mean: Vec<f64>,
    /// Spread of the latent function across samples.
    pub variance: Vec<f64>,
    /// `variance` plus the observation noise σ².
    pub total_variance: Vec<f64>,
}

pub fn predict(
    complex: &SimplicialComplex,
    spec: &ModelSpec,
    inputs: &Matrix,
    config: &EnsembleConfig,
) -> Result<Prediction> {
    let members = draw_members(complex, spec, config)?;
    predict_members(spec, &members, inputs)
}

pub fn predict_members(
    spec: &ModelSpec,
    members: &[Member],
    inputs: &Matrix,
) -> Result<Prediction> {
    if members.is_empty() {
        return Err(EnsembleError::Empty);
    }
    match spec.output_kind {
        OutputKind::Logits => {
            let mut avg = Matrix::zeros(inputs.rows, spec.output_width());
            for m in members {
                let p = netcore::predict_proba(spec, &m.params, inputs)?;
                for (a, v) in avg.data.iter_mut().zip(&p.data) {
                    *a += m.weight * v;
                }
            }
            Ok(Prediction::Probabilities(avg))
        }
        OutputKind::Scalar => {
            let outputs = members
                .iter()
                .map(|m| netcore::forward(spec, &m.params, inputs).map(|o| o.data))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let mut mean = vec![0.0; inputs.rows];
            for (m, out) in members.iter().zip(&outputs) {
                for (a, v) in mean.iter_mut().zip(out) {
                    *a += m.weight * v;
                }
            }
            let mut variance = vec![0.0; inputs.rows];
            for (m, out) in members.iter().zip(&outputs) {
                for ((a, v), mu) in variance.iter_mut().zip(out).zip(&mean) {
                    *a += m.weight * (v - mu) * (v - mu);
                }
            }
            let noise = match spec.loss {
                netcore::LossKind::GaussianNll { sigma_sq } => sigma_sq,
                netcore::LossKind::CrossEntropy => 0.0,
            };
            let total_variance = variance.iter().map(|v| v + noise).collect();
            Ok(Prediction::Regression(RegressionPrediction {
                mean,
                variance,
                total_variance,
            }))
        }
    }
}

/// Mean predictive standard deviation over the 1-d inputs that fall strictly
/// inside any of `regions`. `None` when no input does.
pub fn mean_std_over(inputs: &[f64], variance: &[f64], regions: &[(f64, f64)]) -> Option<f64> {
    let inside: Vec<f64> = inputs
        .iter()
        .zip(variance)
        .filter(|(x, _)| regions.iter().any(|(lo, hi)| lo < *x && *x < hi))
        .map(|(_, v)| v.sqrt())
        .collect();
    (!inside.is_empty()).then(|| inside.iter().sum::<f64>() / inside.len() as f64)
}

/// Probabilities of every member, in member order.
pub fn member_probabilities(
    spec: &ModelSpec,
    members: &[Member],
    inputs: &Matrix,
) -> Result<Vec<Matrix>> {
    Ok(members
        .iter()
        .map(|m| netcore::predict_proba(spec, &m.params, inputs))
        .collect::<std::result::Result<_, _>>()?)
}

/// Fraction of inputs on which two label vectors differ.
pub fn disagreement(a: &[usize], b: &[usize]) -> f64 {
    let differ = a.iter().zip(b).filter(|(x, y)| x != y).count();
    differ as f64 / a.len().max(1) as f64
}

/// Mean over pairs of distinct samples of the fraction of probe inputs where
/// their predicted classes differ.
pub fn functional_diversity(
    complex: &SimplicialComplex,
    spec: &ModelSpec,
    probe_inputs: &Matrix,
    config: &EnsembleConfig,
) -> Result<f64> {
    if spec.output_kind != OutputKind::Logits {
        return Err(NetError::WrongOutputKind("logits").into());
    }
    config.validate()?;
    let mut rng = rng_stream(config.seed, ENSEMBLE_STREAM);
    let samples = geometry::sample_from_complex(complex, &mut rng, config.j_samples_per_simplex)?;
    let labels = samples
        .iter()
        .map(|s| netcore::forward(spec, &s.params, probe_inputs).map(|o| netcore::argmax_rows(&o)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(mean_pairwise_disagreement(&labels))
}

pub fn mean_pairwise_disagreement(labels: &[Vec<usize>]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..labels.len() {
        for j in (i + 1)..labels.len() {
            total += disagreement(&labels[i], &labels[j]);
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

/// Writes `id,x0..,p0..` for classifiers or `id,x0..,mean,variance,total_variance`
/// for regressors.
pub fn write_predictions_csv<W: Write>(
    out: W,
    inputs: &Matrix,
    prediction: &Prediction,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string()];
    header.extend((0..inputs.cols).map(|i| format!("x{i}")));
    match prediction {
        Prediction::Probabilities(p) => header.extend((0..p.cols).map(|c| format!("p{c}"))),
        Prediction::Regression(_) => {
            header.extend(["mean", "variance", "total_variance"].map(String::from))
        }
    }
    w.write_record(&header)?;
    for i in 0..inputs.rows {
        let mut row = vec![i.to_string()];
        row.extend(inputs.row(i).iter().map(|v| format!("{v:?}")));
        match prediction {
            Prediction::Probabilities(p) => row.extend(p.row(i).iter().map(|v| format!("{v:?}"))),
            Prediction::Regression(r) => row
                .extend([r.mean[i], r.variance[i], r.total_variance[i]].map(|v| format!("{v:?}"))),
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
