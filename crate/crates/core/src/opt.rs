//! SGD with momentum, weight decay and a single-cycle cosine schedule.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::ParamVector;
use crate::netcore::{self, Batch, ModelSpec, NetError};

/// RNG stream for parameter initialization.
pub const INIT_STREAM: u64 = 0;
/// RNG stream for minibatch shuffling.
pub const SHUFFLE_STREAM: u64 = 1;

/// Independent, reproducible RNG stream `stream` derived from `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}, step {step}: non-finite loss or parameters")]
    Diverged { epoch: usize, step: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    CosineSingleCycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Desk-scale defaults for the two-spirals models.
    fn default() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 200,
            batch_size: 32,
            schedule: Schedule::CosineSingleCycle,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Recipe used for the VGG-16 base models on CIFAR.
    pub fn vgg_cifar() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 300,
            batch_size: 128,
            schedule: Schedule::CosineSingleCycle,
            seed: 0,
        }
    }

    /// Base modes for the 1-d regression task. The Gaussian likelihood with
    /// σ² = 0.1 scales gradients by ten, hence the smaller step.
    pub fn desk_regression() -> Self {
        Self {
            lr: 0.01,
            epochs: 1000,
            batch_size: 20,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        Ok(())
    }

    /// Minibatches per epoch for `n` examples; a batch size above `n` falls
    /// back to full batch.
    pub fn batches_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size.min(n).max(1))
    }
}

/// Learning rate at `step` of `total_steps`.
pub fn lr_at(config: &TrainConfig, step: usize, total_steps: usize) -> f64 {
    match config.schedule {
        Schedule::Constant => config.lr,
        Schedule::CosineSingleCycle => {
            if total_steps == 0 {
                return config.lr;
            }
            let t = step.min(total_steps) as f64 / total_steps as f64;
            config.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}

/// Heavy-ball SGD state: `v ← μv + (g + λp)`, `p ← p − ηv`.
#[derive(Debug, Clone)]
pub struct Sgd {
    velocity: Vec<f64>,
    momentum: f64,
    weight_decay: f64,
}

impl Sgd {
    pub fn new(dim: usize, momentum: f64, weight_decay: f64) -> Self {
        Self {
            velocity: vec![0.0; dim],
            momentum,
            weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        for ((p, g), v) in params.iter_mut().zip(grad).zip(self.velocity.iter_mut()) {
            let g = g + self.weight_decay * *p;
            *v = self.momentum * *v + g;
            *p -= lr * *v;
        }
    }
}

/// One line of training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Shuffled minibatch SGD over `n` examples. `objective` receives the current
/// parameters and the example indices of one minibatch and returns the batch
/// loss and gradient. `on_epoch` runs after each epoch with the mean loss.
pub fn run_sgd<R, F, E>(
    params: &mut [f64],
    n: usize,
    config: &TrainConfig,
    shuffle_rng: &mut R,
    mut objective: F,
    mut on_epoch: impl FnMut(&EpochRecord, &[f64]) -> Result<(), E>,
) -> Result<(), E>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64], &[usize]) -> Result<(f64, Vec<f64>), E>,
    E: From<TrainError>,
{
    config.validate()?;
    let batch_size = config.batch_size.min(n).max(1);
    let per_epoch = config.batches_per_epoch(n);
    let total_steps = per_epoch * config.epochs;
    let mut sgd = Sgd::new(params.len(), config.momentum, config.weight_decay);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(shuffle_rng);
        let mut weighted = 0.0;
        let mut lr = lr_at(config, step, total_steps);
        for chunk in order.chunks(batch_size) {
            lr = lr_at(config, step, total_steps);
            let (loss, grad) = objective(params, chunk)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, step }.into());
            }
            sgd.step(params, &grad, lr);
            if params.iter().any(|p| !p.is_finite()) {
                return Err(TrainError::Diverged { epoch, step }.into());
            }
            weighted += loss * chunk.len() as f64;
            step += 1;
        }
        let record = EpochRecord {
            epoch,
            loss: weighted / n as f64,
            lr,
        };
        on_epoch(&record, params)?;
    }
    Ok(())
}

/// Trains a base mode from a fresh He initialization.
pub fn train_base(
    spec: &ModelSpec,
    dataset: &Batch,
    config: &TrainConfig,
) -> Result<(ParamVector, Vec<EpochRecord>), TrainError> {
    spec.validate()?;
    let mut init_rng = rng_stream(config.seed, INIT_STREAM);
    let params = netcore::init_params(spec, &mut init_rng);
    train_from(spec, dataset, config, params)
}

/// Trains starting from `params`.
pub fn train_from(
    spec: &ModelSpec,
    dataset: &Batch,
    config: &TrainConfig,
    mut params: ParamVector,
) -> Result<(ParamVector, Vec<EpochRecord>), TrainError> {
    let mut shuffle_rng = rng_stream(config.seed, SHUFFLE_STREAM);
    let mut history = Vec::with_capacity(config.epochs);
    let full = dataset.len() <= config.batch_size;
    run_sgd(
        &mut params,
        dataset.len(),
        config,
        &mut shuffle_rng,
        |p, idx| {
            let result = if full {
                netcore::loss_and_grad(spec, p, dataset)
            } else {
                netcore::loss_and_grad(spec, p, &dataset.subset(idx))
            };
            match result {
                Ok((loss, grad)) => Ok((loss, grad.into_inner())),
                // reported by run_sgd with the epoch and step
                Err(NetError::NonFiniteLoss) => Ok((f64::NAN, Vec::new())),
                Err(e) => Err(TrainError::from(e)),
            }
        },
        |record, _| {
            history.push(record.clone());
            Ok(())
        },
    )?;
    Ok((params, history))
}

/// Training history as JSON lines of `{epoch, loss, lr}`.
pub fn history_json_lines(history: &[EpochRecord]) -> String {
    let mut out = String::new();
    for r in history {
        out.push_str(&serde_json::to_string(r).expect("plain struct serializes"));
        out.push('\n');
    }
    out
}
