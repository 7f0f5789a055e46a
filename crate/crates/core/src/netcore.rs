//! A small fully-connected network with hand-written backpropagation.
//!
//! Parameters live in one flat vector so that networks are points in
//! parameter space. Layer `l` stores its `out × in` weight matrix row-major,
//! followed by its `out` biases.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::ParamVector;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("parameter length {found} does not match model ({expected})")]
    LengthMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("class index {index} out of range for {classes} outputs")]
    TargetOutOfRange { index: usize, classes: usize },
    #[error("operation requires a {0} output model")]
    WrongOutputKind(&'static str),
    #[error("loss is not finite")]
    NonFiniteLoss,
}

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a`.
    #[inline]
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Logits,
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LossKind {
    CrossEntropy,
    /// Gaussian negative log-likelihood with fixed observation variance.
    GaussianNll {
        sigma_sq: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub output_kind: OutputKind,
    pub loss: LossKind,
}

impl ModelSpec {
    pub fn classifier(layer_widths: Vec<usize>, activation: Activation) -> Self {
        Self {
            layer_widths,
            activation,
            output_kind: OutputKind::Logits,
            loss: LossKind::CrossEntropy,
        }
    }

    pub fn regressor(layer_widths: Vec<usize>, activation: Activation, sigma_sq: f64) -> Self {
        Self {
            layer_widths,
            activation,
            output_kind: OutputKind::Scalar,
            loss: LossKind::GaussianNll { sigma_sq },
        }
    }

    /// The eight-layer two-spirals classifier: seven hidden layers of 16.
    pub fn spirals_deep() -> Self {
        let mut widths = vec![2];
        widths.extend([16; 7]);
        widths.push(2);
        Self::classifier(widths, Activation::Relu)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(NetError::InvalidSpec(
                "need at least two layer widths".into(),
            ));
        }
        if self.layer_widths.contains(&0) {
            return Err(NetError::InvalidSpec(
                "layer widths must be positive".into(),
            ));
        }
        let out = self.output_width();
        match (self.output_kind, self.loss) {
            (OutputKind::Logits, LossKind::CrossEntropy) if out >= 2 => Ok(()),
            (OutputKind::Logits, LossKind::CrossEntropy) => Err(NetError::InvalidSpec(
                "cross-entropy needs at least two output classes".into(),
            )),
            (OutputKind::Scalar, LossKind::GaussianNll { sigma_sq }) => {
                if out != 1 {
                    Err(NetError::InvalidSpec(
                        "scalar output must have width 1".into(),
                    ))
                } else if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
                    Err(NetError::InvalidSpec("sigma_sq must be positive".into()))
                } else {
                    Ok(())
                }
            }
            _ => Err(NetError::InvalidSpec(
                "cross_entropy pairs with logits, gaussian_nll with scalar".into(),
            )),
        }
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().expect("validated spec")
    }

    /// `Σ (w_in + 1) · w_out` over consecutive layers.
    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if params.len() != expected {
            return Err(NetError::LengthMismatch {
                expected,
                found: params.len(),
            });
        }
        Ok(())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Inputs (`n × d_in`) with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Targets,
}

impl Batch {
    pub fn new(inputs: Matrix, targets: Targets) -> Result<Self> {
        if inputs.rows == 0 {
            return Err(NetError::ShapeMismatch("batch is empty".into()));
        }
        if targets.len() != inputs.rows {
            return Err(NetError::ShapeMismatch(format!(
                "{} inputs but {} targets",
                inputs.rows,
                targets.len()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows == 0
    }

    pub fn subset(&self, indices: &[usize]) -> Batch {
        let cols = self.inputs.cols;
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(self.inputs.row(i));
        }
        let targets = match &self.targets {
            Targets::Classes(c) => Targets::Classes(indices.iter().map(|&i| c[i]).collect()),
            Targets::Values(v) => Targets::Values(indices.iter().map(|&i| v[i]).collect()),
        };
        Batch {
            inputs: Matrix::new(indices.len(), cols, data),
            targets,
        }
    }

    fn check(&self, spec: &ModelSpec) -> Result<()> {
        if self.inputs.cols != spec.input_width() {
            return Err(NetError::ShapeMismatch(format!(
                "inputs have {} columns, model expects {}",
                self.inputs.cols,
                spec.input_width()
            )));
        }
        if self.targets.len() != self.inputs.rows {
            return Err(NetError::ShapeMismatch(
                "target length differs from inputs".into(),
            ));
        }
        match (&self.targets, spec.loss) {
            (Targets::Classes(c), LossKind::CrossEntropy) => {
                let classes = spec.output_width();
                if let Some(&index) = c.iter().find(|&&i| i >= classes) {
                    return Err(NetError::TargetOutOfRange { index, classes });
                }
                Ok(())
            }
            (Targets::Values(_), LossKind::GaussianNll { .. }) => Ok(()),
            _ => Err(NetError::ShapeMismatch(
                "target kind does not match loss".into(),
            )),
        }
    }
}

/// One layer's weights (`out × in`, row-major) and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

pub fn unflatten(spec: &ModelSpec, params: &[f64]) -> Result<Vec<LayerParams>> {
    spec.check_params(params)?;
    let mut offset = 0;
    Ok(spec
        .layer_widths
        .windows(2)
        .map(|w| {
            let nw = w[0] * w[1];
            let weights = params[offset..offset + nw].to_vec();
            let biases = params[offset + nw..offset + nw + w[1]].to_vec();
            offset += nw + w[1];
            LayerParams { weights, biases }
        })
        .collect())
}

pub fn flatten(layers: &[LayerParams]) -> ParamVector {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(&l.weights);
        out.extend_from_slice(&l.biases);
    }
    ParamVector(out)
}

/// He-normal weights (`std = √(2 / fan_in)`), zero biases.
pub fn init_params<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> ParamVector {
    let mut out = Vec::with_capacity(spec.param_count());
    for w in spec.layer_widths.windows(2) {
        let std = (2.0 / w[0] as f64).sqrt();
        for _ in 0..w[0] * w[1] {
            let z: f64 = rng.sample(StandardNormal);
            out.push(std * z);
        }
        out.extend(std::iter::repeat_n(0.0, w[1]));
    }
    ParamVector(out)
}

/// Activations of every layer; `layers[0]` is the input.
struct Trace {
    layers: Vec<Matrix>,
}

fn run_forward(spec: &ModelSpec, params: &[f64], inputs: &Matrix) -> Trace {
    let n = inputs.rows;
    let depth = spec.layer_widths.len() - 1;
    let mut layers = Vec::with_capacity(depth + 1);
    layers.push(inputs.clone());
    let mut offset = 0;
    for (l, w) in spec.layer_widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let weights = &params[offset..offset + fan_in * fan_out];
        let biases = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        offset += fan_in * fan_out + fan_out;
        let prev = &layers[l];
        let mut next = Matrix::zeros(n, fan_out);
        let last = l + 1 == depth;
        for r in 0..n {
            let x = prev.row(r);
            let out = next.row_mut(r);
            for (o, slot) in out.iter_mut().enumerate() {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let z = biases[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                *slot = if last { z } else { spec.activation.apply(z) };
            }
        }
        layers.push(next);
    }
    Trace { layers }
}

fn check_inputs(spec: &ModelSpec, params: &[f64], inputs: &Matrix) -> Result<()> {
    spec.validate()?;
    spec.check_params(params)?;
    if inputs.cols != spec.input_width() {
        return Err(NetError::ShapeMismatch(format!(
            "inputs have {} columns, model expects {}",
            inputs.cols,
            spec.input_width()
        )));
    }
    Ok(())
}

/// Raw network outputs: logits for classifiers, a single column for
/// regressors.
pub fn forward(spec: &ModelSpec, params: &[f64], inputs: &Matrix) -> Result<Matrix> {
    check_inputs(spec, params, inputs)?;
    Ok(run_forward(spec, params, inputs)
        .layers
        .pop()
        .expect("at least one layer"))
}

fn log_sum_exp_row(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Softmax of each row, with max-subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for z in row.iter_mut() {
            *z = (*z - max).exp();
            total += *z;
        }
        row.iter_mut().for_each(|z| *z /= total);
    }
    out
}

pub fn predict_proba(spec: &ModelSpec, params: &[f64], inputs: &Matrix) -> Result<Matrix> {
    if spec.output_kind != OutputKind::Logits {
        return Err(NetError::WrongOutputKind("logits"));
    }
    Ok(softmax_rows(&forward(spec, params, inputs)?))
}

/// Mean loss and `dL/d(output)` for each row.
fn output_loss(spec: &ModelSpec, outputs: &Matrix, targets: &Targets) -> (f64, Matrix) {
    let n = outputs.rows as f64;
    let mut delta = Matrix::zeros(outputs.rows, outputs.cols);
    let mut total = 0.0;
    match (spec.loss, targets) {
        (LossKind::CrossEntropy, Targets::Classes(classes)) => {
            for (r, &y) in classes.iter().enumerate() {
                let z = outputs.row(r);
                let lse = log_sum_exp_row(z);
                total += lse - z[y];
                let d = delta.row_mut(r);
                for (c, slot) in d.iter_mut().enumerate() {
                    *slot = (z[c] - lse).exp() / n;
                }
                d[y] -= 1.0 / n;
            }
        }
        (LossKind::GaussianNll { sigma_sq }, Targets::Values(values)) => {
            let constant = 0.5 * (2.0 * std::f64::consts::PI * sigma_sq).ln();
            for (r, &y) in values.iter().enumerate() {
                let resid = outputs.row(r)[0] - y;
                total += constant + resid * resid / (2.0 * sigma_sq);
                delta.row_mut(r)[0] = resid / (sigma_sq * n);
            }
        }
        _ => unreachable!("targets checked against loss kind"),
    }
    (total / n, delta)
}

/// Mean batch loss without gradients.
pub fn loss(spec: &ModelSpec, params: &[f64], batch: &Batch) -> Result<f64> {
    check_inputs(spec, params, &batch.inputs)?;
    batch.check(spec)?;
    let outputs = run_forward(spec, params, &batch.inputs)
        .layers
        .pop()
        .unwrap();
    let (value, _) = output_loss(spec, &outputs, &batch.targets);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(NetError::NonFiniteLoss)
    }
}

/// Mean batch loss and its gradient with respect to every parameter.
pub fn loss_and_grad(
    spec: &ModelSpec,
    params: &[f64],
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    check_inputs(spec, params, &batch.inputs)?;
    batch.check(spec)?;
    let trace = run_forward(spec, params, &batch.inputs);
    let depth = spec.layer_widths.len() - 1;
    let (value, mut delta) = output_loss(spec, &trace.layers[depth], &batch.targets);
    if !value.is_finite() {
        return Err(NetError::NonFiniteLoss);
    }

    let mut grad = vec![0.0; params.len()];
    let mut offsets = Vec::with_capacity(depth);
    let mut offset = 0;
    for w in spec.layer_widths.windows(2) {
        offsets.push(offset);
        offset += (w[0] + 1) * w[1];
    }

    let n = batch.len();
    for l in (0..depth).rev() {
        let (fan_in, fan_out) = (spec.layer_widths[l], spec.layer_widths[l + 1]);
        let base = offsets[l];
        let prev = &trace.layers[l];
        {
            let (gw, gb) =
                grad[base..base + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for r in 0..n {
                let d = delta.row(r);
                let x = prev.row(r);
                for o in 0..fan_out {
                    let dv = d[o];
                    if dv == 0.0 {
                        continue;
                    }
                    gb[o] += dv;
                    let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                    row.iter_mut().zip(x).for_each(|(g, xi)| *g += dv * xi);
                }
            }
        }
        if l == 0 {
            break;
        }
        let weights = &params[base..base + fan_in * fan_out];
        let mut next = Matrix::zeros(n, fan_in);
        for r in 0..n {
            let d = delta.row(r);
            let a = prev.row(r);
            let out = next.row_mut(r);
            for o in 0..fan_out {
                let dv = d[o];
                if dv == 0.0 {
                    continue;
                }
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                out.iter_mut().zip(row).for_each(|(s, w)| *s += dv * w);
            }
            out.iter_mut()
                .zip(a)
                .for_each(|(s, ai)| *s *= spec.activation.derivative(*ai));
        }
        delta = next;
    }
    Ok((value, ParamVector(grad)))
}

/// Argmax class of each row (ties resolve to the lowest index).
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows)
        .map(|r| {
            let row = m.row(r);
            let mut best = 0;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Fraction of rows whose argmax output equals the class target.
pub fn accuracy(spec: &ModelSpec, params: &[f64], batch: &Batch) -> Result<f64> {
    let Targets::Classes(classes) = &batch.targets else {
        return Err(NetError::WrongOutputKind("logits"));
    };
    let preds = argmax_rows(&forward(spec, params, &batch.inputs)?);
    let hits = preds.iter().zip(classes).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / classes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn param_counts() {
        assert_eq!(
            ModelSpec::classifier(vec![2, 3, 2], Activation::Relu).param_count(),
            17
        );
        assert_eq!(
            ModelSpec::regressor(vec![1, 1], Activation::Tanh, 0.1).param_count(),
            2
        );
        assert_eq!(
            ModelSpec::classifier(vec![2, 16, 16, 2], Activation::Relu).param_count(),
            354
        );
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::classifier(vec![2], Activation::Relu)
            .validate()
            .is_err());
        assert!(ModelSpec::classifier(vec![2, 0, 2], Activation::Relu)
            .validate()
            .is_err());
        assert!(ModelSpec::classifier(vec![2, 1], Activation::Relu)
            .validate()
            .is_err());
        assert!(ModelSpec::regressor(vec![1, 2], Activation::Relu, 0.1)
            .validate()
            .is_err());
        assert!(ModelSpec::regressor(vec![1, 1], Activation::Relu, 0.0)
            .validate()
            .is_err());
        assert!(ModelSpec::spirals_deep().validate().is_ok());
        assert_eq!(ModelSpec::spirals_deep().layer_widths.len(), 9);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = ModelSpec::classifier(vec![2, 5, 3], Activation::Relu);
        let a = init_params(&spec, &mut ChaCha8Rng::seed_from_u64(9));
        let b = init_params(&spec, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        for layer in unflatten(&spec, &a).unwrap() {
            assert!(layer.biases.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn zero_params_give_zero_outputs() {
        for act in [Activation::Relu, Activation::Tanh] {
            let spec = ModelSpec::classifier(vec![3, 4, 2], act);
            let params = ParamVector::zeros(spec.param_count());
            let x = Matrix::new(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.0]);
            let out = forward(&spec, &params, &x).unwrap();
            assert!(out.data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_linear_layer() {
        let spec = ModelSpec::regressor(vec![2, 1], Activation::Relu, 1.0);
        let out = forward(&spec, &[1.0, 1.0, 0.0], &Matrix::new(1, 2, vec![2.0, 3.0])).unwrap();
        assert_eq!(out.data, vec![5.0]);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let spec = ModelSpec::regressor(vec![2, 1], Activation::Relu, 1.0);
        let r = forward(&spec, &[1.0, 1.0], &Matrix::new(1, 2, vec![2.0, 3.0]));
        assert!(matches!(
            r,
            Err(NetError::LengthMismatch {
                expected: 3,
                found: 2
            })
        ));
    }

    #[test]
    fn uniform_logits_cross_entropy_is_log_c() {
        let spec = ModelSpec::classifier(vec![2, 4], Activation::Relu);
        let params = ParamVector::zeros(spec.param_count());
        let batch = Batch::new(
            Matrix::new(2, 2, vec![0.3, 0.1, -1.0, 2.0]),
            Targets::Classes(vec![0, 3]),
        )
        .unwrap();
        let l = loss(&spec, &params, &batch).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn gaussian_nll_at_zero_residual() {
        let spec = ModelSpec::regressor(vec![1, 1], Activation::Tanh, 0.1);
        // y = 2x + 1
        let batch = Batch::new(
            Matrix::new(3, 1, vec![0.0, 1.0, -2.0]),
            Targets::Values(vec![1.0, 3.0, -3.0]),
        )
        .unwrap();
        let (l, g) = loss_and_grad(&spec, &[2.0, 1.0], &batch).unwrap();
        let expected = 0.5 * (2.0 * std::f64::consts::PI * 0.1).ln();
        assert!((l - expected).abs() < 1e-14);
        assert!(g.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn proba_stability() {
        let p = softmax_rows(&Matrix::new(2, 2, vec![0.0, 0.0, 1000.0, 0.0]));
        assert_eq!(p.row(0), &[0.5, 0.5]);
        assert_eq!(p.row(1)[0], 1.0);
        assert_eq!(p.row(1)[1], 0.0);
    }

    #[test]
    fn predict_proba_rejects_regressor() {
        let spec = ModelSpec::regressor(vec![1, 1], Activation::Tanh, 0.1);
        let r = predict_proba(&spec, &[1.0, 0.0], &Matrix::new(1, 1, vec![0.0]));
        assert!(matches!(r, Err(NetError::WrongOutputKind(_))));
    }

    #[test]
    fn batch_shape_errors() {
        assert!(Batch::new(
            Matrix::new(2, 1, vec![0.0, 1.0]),
            Targets::Values(vec![1.0])
        )
        .is_err());
        assert!(Batch::new(Matrix::zeros(0, 1), Targets::Values(vec![])).is_err());
        let spec = ModelSpec::classifier(vec![1, 2], Activation::Relu);
        let batch = Batch::new(Matrix::new(1, 1, vec![0.0]), Targets::Classes(vec![2])).unwrap();
        let params = ParamVector::zeros(spec.param_count());
        assert!(matches!(
            loss(&spec, &params, &batch),
            Err(NetError::TargetOutOfRange {
                index: 2,
                classes: 2
            })
        ));
    }
}
