//! Accuracy, NLL, expected calibration error and temperature scaling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netcore::{softmax_rows, Matrix};

pub const ECE_BINS: usize = 15;
/// Probabilities are clamped here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;
pub const TEMPERATURE_RANGE: (f64, f64) = (0.05, 5.0);
pub const TEMPERATURE_TOL: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{rows} prediction rows for {targets} targets")]
    ShapeMismatch { rows: usize, targets: usize },
    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("no predictions to evaluate")]
    Empty,
    #[error("every validation target is class {0}; the temperature is unidentifiable")]
    OneClass(usize),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    /// Mean confidence of the predictions in the bin, 0 when empty.
    pub confidence: f64,
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n: usize,
    pub accuracy: f64,
    pub nll: f64,
    pub ece: f64,
    pub bins: Vec<ReliabilityBin>,
}

fn check(probs: &Matrix, targets: &[usize]) -> Result<()> {
    if probs.rows != targets.len() {
        return Err(MetricsError::ShapeMismatch {
            rows: probs.rows,
            targets: targets.len(),
        });
    }
    if targets.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(&target) = targets.iter().find(|&&t| t >= probs.cols) {
        return Err(MetricsError::TargetOutOfRange {
            target,
            classes: probs.cols,
        });
    }
    Ok(())
}

/// Index and value of the largest entry; ties go to the lower index.
fn top(row: &[f64]) -> (usize, f64) {
    row.iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
}

/// Mean negative log-probability of the targets.
pub fn nll(probs: &Matrix, targets: &[usize]) -> Result<f64> {
    check(probs, targets)?;
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| -probs.row(i)[t].max(PROB_FLOOR).ln())
        .sum();
    Ok(total / targets.len() as f64)
}

pub fn evaluate(probs: &Matrix, targets: &[usize]) -> Result<CalibrationReport> {
    check(probs, targets)?;
    let n = targets.len();
    let mut conf_sum = [0.0; ECE_BINS];
    let mut hits = [0usize; ECE_BINS];
    let mut counts = [0usize; ECE_BINS];
    let mut correct = 0usize;
    for (i, &t) in targets.iter().enumerate() {
        let (label, conf) = top(probs.row(i));
        let b = ((conf * ECE_BINS as f64) as usize).min(ECE_BINS - 1);
        conf_sum[b] += conf;
        counts[b] += 1;
        if label == t {
            hits[b] += 1;
            correct += 1;
        }
    }
    let mut ece = 0.0;
    let bins = (0..ECE_BINS)
        .map(|b| {
            let (confidence, accuracy) = if counts[b] == 0 {
                (0.0, 0.0)
            } else {
                let c = counts[b] as f64;
                (conf_sum[b] / c, hits[b] as f64 / c)
            };
            ece += counts[b] as f64 / n as f64 * (accuracy - confidence).abs();
            ReliabilityBin {
                lower: b as f64 / ECE_BINS as f64,
                upper: (b + 1) as f64 / ECE_BINS as f64,
                confidence,
                accuracy,
                count: counts[b],
            }
        })
        .collect();
    Ok(CalibrationReport {
        n,
        accuracy: correct as f64 / n as f64,
        nll: nll(probs, targets)?,
        ece,
        bins,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureScaler {
    pub temperature: f64,
}

impl TemperatureScaler {
    pub fn apply(&self, logits: &Matrix) -> Matrix {
        let mut scaled = logits.clone();
        scaled.data.iter_mut().for_each(|v| *v /= self.temperature);
        softmax_rows(&scaled)
    }
}

/// NLL of `softmax(logits / t)`.
pub fn scaled_nll(logits: &Matrix, targets: &[usize], t: f64) -> Result<f64> {
    nll(&TemperatureScaler { temperature: t }.apply(logits), targets)
}

/// Temperature minimizing validation NLL, by golden-section search over
/// [`TEMPERATURE_RANGE`]. The search result is compared against `T = 1`, so
/// the fitted NLL never exceeds the unscaled one.
pub fn fit_temperature(logits: &Matrix, targets: &[usize]) -> Result<TemperatureScaler> {
    check(logits, targets)?;
    if targets.iter().all(|&t| t == targets[0]) {
        return Err(MetricsError::OneClass(targets[0]));
    }
    let f = |t: f64| scaled_nll(logits, targets, t);
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = TEMPERATURE_RANGE;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > TEMPERATURE_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    let mid = 0.5 * (a + b);
    let temperature = if f(1.0)? < f(mid)? { 1.0 } else { mid };
    Ok(TemperatureScaler { temperature })
}

/// As [`fit_temperature`] with `log p` standing in for the logits.
pub fn fit_temperature_from_probs(probs: &Matrix, targets: &[usize]) -> Result<TemperatureScaler> {
    fit_temperature(&log_probs(probs), targets)
}

pub fn log_probs(probs: &Matrix) -> Matrix {
    let mut out = probs.clone();
    out.data
        .iter_mut()
        .for_each(|p| *p = p.max(PROB_FLOOR).ln());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_correct() {
        let p = Matrix::new(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let r = evaluate(&p, &[0, 1, 0]).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.nll.abs() < 1e-15);
        assert_eq!(r.ece, 0.0);
        assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), 3);
        assert_eq!(r.bins[ECE_BINS - 1].count, 3);
    }

    #[test]
    fn uniform_predictions() {
        let c = 4;
        let p = Matrix::new(2, c, vec![0.25; 2 * c]);
        let r = evaluate(&p, &[1, 3]).unwrap();
        assert!((r.nll - (c as f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn clamps_zero_probability() {
        let p = Matrix::new(1, 2, vec![1.0, 0.0]);
        assert!((nll(&p, &[1]).unwrap() + PROB_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let p = Matrix::new(1, 2, vec![0.5, 0.5]);
        assert!(matches!(
            evaluate(&p, &[0, 1]),
            Err(MetricsError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            evaluate(&p, &[2]),
            Err(MetricsError::TargetOutOfRange { .. })
        ));
    }

    #[test]
    fn one_class_validation_rejected() {
        let l = Matrix::new(2, 2, vec![1.0, 0.0, 0.5, 0.2]);
        assert_eq!(fit_temperature(&l, &[1, 1]), Err(MetricsError::OneClass(1)));
    }

    #[test]
    fn scaling_keeps_argmax() {
        let l = Matrix::new(2, 3, vec![0.3, 2.0, -1.0, 1.5, 1.4, 0.0]);
        for t in [0.1, 0.7, 3.0] {
            let p = TemperatureScaler { temperature: t }.apply(&l);
            assert_eq!(top(p.row(0)).0, 1);
            assert_eq!(top(p.row(1)).0, 0);
        }
    }
}
