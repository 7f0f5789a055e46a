//! Growing low-loss simplexes and simplicial complexes.
//!
//! Connector vertices are trained one at a time, with every other vertex
//! frozen, on
//!
//! ```text
//! L_reg(θ) = (1/H) Σ_h L(D, φ_h) − λ_j · log V(K),    φ_h ~ K
//! ```
//!
//! The data term is differentiated through the convex combination
//! `φ = Σ bᵢ vᵢ`, so the trainable vertex receives `b_θ · ∇L(φ)`. The volume
//! term uses the closed-form hull-distance gradient of each incident simplex,
//! combined through the log-sum of simplex volumes.

use std::cell::{Cell, RefCell};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    self, log_complex_volume, log_simplex_volume, log_sum_exp, sample_uniform, GeometryError,
    ParamVector, Role, Simplex, SimplicialComplex, Vertex, VertexId, VertexStore,
};
use crate::linalg;
use crate::netcore::{self, Batch, ModelSpec, NetError, OutputKind};
use crate::opt::{self, rng_stream, Schedule, TrainConfig, TrainError};

/// Default `λ*` for normalizing per-vertex regularization.
pub const DEFAULT_LAMBDA_STAR: f64 = 1e-8;
/// Default number of simplex samples per loss estimate.
pub const DEFAULT_H_SAMPLES: usize = 5;
/// A drop of this many nats below the running maximum log-volume counts as a
/// collapse (a factor of 10⁶).
pub fn collapse_threshold() -> f64 {
    1e6_f64.ln()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SproError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("every simplex incident to {0} is degenerate")]
    DegenerateComplex(String),
    #[error("vertex {0} belongs to no simplex of the complex")]
    NotInComplex(String),
    #[error("invalid complex spec: {0}")]
    InvalidSpec(String),
    #[error("invalid spro config: {0}")]
    InvalidConfig(String),
}

impl SproError {
    /// True for errors that mean the complex has no volume left to train.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            SproError::DegenerateComplex(_)
                | SproError::Geometry(GeometryError::OnHull(_))
                | SproError::Geometry(GeometryError::DegenerateBase)
        )
    }
}

pub type Result<T> = std::result::Result<T, SproError>;

/// Which simplexes the loss samples are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScope {
    /// Only simplexes containing the trainable vertex; the others contribute
    /// no gradient.
    Incident,
    /// Every simplex of the complex.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SproConfig {
    pub h_samples: usize,
    pub train: TrainConfig,
    /// Initialization offset, relative to the RMS of the incident mean.
    pub jitter_sigma: f64,
    pub volume_grad_clip: f64,
    pub lambda_star: f64,
    /// Jitter used for the randomly initialized probe complex that sets `λ_j`.
    pub probe_jitter_sigma: f64,
    pub sampling: SamplingScope,
}

impl Default for SproConfig {
    fn default() -> Self {
        Self {
            h_samples: DEFAULT_H_SAMPLES,
            train: TrainConfig {
                lr: 0.01,
                momentum: 0.9,
                weight_decay: 0.0,
                epochs: 20,
                batch_size: 32,
                schedule: Schedule::Constant,
                seed: 0,
            },
            jitter_sigma: 1e-4,
            volume_grad_clip: 1.0,
            lambda_star: DEFAULT_LAMBDA_STAR,
            probe_jitter_sigma: 1.0,
            sampling: SamplingScope::Incident,
        }
    }
}

impl SproConfig {
    /// Growing a simplex out of one two-spirals mode. Volumes at this scale
    /// are tiny next to CIFAR-scale ones, so `λ*` is raised until the volume
    /// bonus spreads the samples into functionally different models.
    pub fn desk_spirals_espro() -> Self {
        Self {
            train: Self::desk_train(0.01),
            lambda_star: 5.0,
            ..Self::default()
        }
    }

    /// Connecting two-spirals modes and probing dimensionality. The modes
    /// already set a large volume, so a light bonus and a larger step keep
    /// every face low-loss.
    pub fn desk_spirals_connect() -> Self {
        Self {
            train: Self::desk_train(0.05),
            lambda_star: 0.01,
            ..Self::default()
        }
    }

    /// Simplexes around 1-d regression modes.
    pub fn desk_regression() -> Self {
        Self {
            train: TrainConfig {
                batch_size: 20,
                ..Self::desk_train(0.003)
            },
            lambda_star: 5.0,
            ..Self::default()
        }
    }

    fn desk_train(lr: f64) -> TrainConfig {
        TrainConfig {
            lr,
            momentum: 0.9,
            weight_decay: 0.0,
            epochs: 80,
            batch_size: 50,
            schedule: Schedule::Constant,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SproError::InvalidConfig(m.into()));
        if self.h_samples == 0 {
            return bad("h_samples must be at least 1");
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return bad("jitter_sigma must be non-negative");
        }
        if self.volume_grad_clip.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return bad("volume_grad_clip must be positive");
        }
        if !(self.lambda_star >= 0.0 && self.lambda_star.is_finite()) {
            return bad("lambda_star must be non-negative");
        }
        if !(self.probe_jitter_sigma > 0.0 && self.probe_jitter_sigma.is_finite()) {
            return bad("probe_jitter_sigma must be positive");
        }
        self.train.validate()?;
        Ok(())
    }
}

/// Regularization strength for the vertex currently being trained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegSchedule {
    pub lambda_star: f64,
    pub lambda_j: f64,
    pub probe_jitter_sigma: f64,
}

/// `λ_j = λ* / log V(probe)`, falling back to `λ*` when the probe log-volume
/// is not positive.
pub fn lambda_from_log_volume(lambda_star: f64, probe_log_volume: f64) -> Result<f64> {
    if probe_log_volume == f64::NEG_INFINITY || probe_log_volume.is_nan() {
        return Err(SproError::DegenerateComplex("probe".into()));
    }
    if probe_log_volume <= 0.0 {
        Ok(lambda_star)
    } else {
        Ok(lambda_star / probe_log_volume)
    }
}

/// Adds `new_id` at the mean of `incident` plus isotropic Gaussian jitter of
/// standard deviation `jitter_sigma · RMS(mean)`.
pub fn init_connector<R: Rng + ?Sized>(
    store: &mut VertexStore,
    new_id: &VertexId,
    incident: &[VertexId],
    rng: &mut R,
    jitter_sigma: f64,
) -> Result<()> {
    if incident.is_empty() {
        return Err(SproError::InvalidSpec(format!(
            "connector {new_id} has no incident vertices"
        )));
    }
    let points = store.points(incident)?;
    let dim = points[0].len();
    let mut mean = vec![0.0; dim];
    for p in &points {
        mean.iter_mut().zip(p.iter()).for_each(|(m, x)| *m += x);
    }
    let n = points.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    if jitter_sigma > 0.0 {
        let rms = (linalg::dot(&mean, &mean) / dim as f64).sqrt();
        let std = if rms > 0.0 {
            jitter_sigma * rms
        } else {
            jitter_sigma
        };
        for m in mean.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *m += std * z;
        }
    }
    store.insert(
        new_id.clone(),
        Vertex {
            values: ParamVector(mean),
            role: Role::Connector,
            trainable: true,
        },
    )?;
    Ok(())
}

/// Vertices sharing a simplex with `id`, in first-seen order.
pub fn incident_vertices(complex: &SimplicialComplex, id: &VertexId) -> Vec<VertexId> {
    let mut out: Vec<VertexId> = Vec::new();
    for s in complex.simplexes.iter().filter(|s| s.contains(id)) {
        for v in s.vertex_ids() {
            if v != id && !out.contains(v) {
                out.push(v.clone());
            }
        }
    }
    out
}

/// `λ_j` from a probe copy of `complex` in which `new_id` is initialized with
/// the probe jitter. `complex` must already list the simplexes containing
/// `new_id`, but not the vertex itself.
pub fn compute_lambda<R: Rng + ?Sized>(
    complex: &SimplicialComplex,
    new_id: &VertexId,
    lambda_star: f64,
    probe_jitter_sigma: f64,
    rng: &mut R,
) -> Result<RegSchedule> {
    let mut probe = complex.clone();
    let incident = incident_vertices(&probe, new_id);
    init_connector(&mut probe.store, new_id, &incident, rng, probe_jitter_sigma)?;
    let log_volume = log_complex_volume(&probe)?;
    Ok(RegSchedule {
        lambda_star,
        lambda_j: lambda_from_log_volume(lambda_star, log_volume)?,
        probe_jitter_sigma,
    })
}

/// Value and gradient of the regularized objective for one vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct RegLossEval {
    /// `(1/H) Σ L(batch, φ_h)`.
    pub loss_est: f64,
    /// `−λ_j log V(K)`.
    pub volume_term: f64,
    pub log_volume: f64,
    /// Gradient of `loss_est + volume_term` with respect to the trainable
    /// vertex, after clipping the volume part.
    pub grad: Vec<f64>,
}

impl RegLossEval {
    pub fn objective(&self) -> f64 {
        self.loss_est + self.volume_term
    }
}

/// Gradient of `log V(K)` with respect to `trainable`, with `log V(K)`.
pub fn log_volume_grad(
    complex: &SimplicialComplex,
    trainable: &VertexId,
) -> Result<(f64, Vec<f64>)> {
    let theta = &complex.store.get(trainable)?.values;
    let log_volume = log_complex_volume(complex)?;
    let mut grad = vec![0.0; theta.len()];
    if log_volume == f64::NEG_INFINITY {
        return Err(SproError::DegenerateComplex(trainable.0.clone()));
    }
    let mut any = false;
    for s in complex
        .simplexes
        .iter()
        .filter(|s| s.contains(trainable) && s.order() > 0)
    {
        let base_ids: Vec<VertexId> = s
            .vertex_ids()
            .iter()
            .filter(|v| *v != trainable)
            .cloned()
            .collect();
        let base = complex.store.points(&base_ids)?;
        let hull = match geometry::hull_distance_and_grad(theta, &base) {
            Ok(h) => h,
            Err(GeometryError::OnHull(_)) | Err(GeometryError::DegenerateBase) => continue,
            Err(e) => return Err(e.into()),
        };
        let log_base = geometry::log_volume_of_points(&base)?.log_volume;
        let log_s = log_base + hull.distance.ln() - (s.order() as f64).ln();
        let weight = (log_s - log_volume).exp();
        if weight > 0.0 {
            any = true;
            grad.iter_mut()
                .zip(&hull.grad)
                .for_each(|(g, h)| *g += weight * h);
        }
    }
    if !any {
        return Err(SproError::DegenerateComplex(trainable.0.clone()));
    }
    Ok((log_volume, grad))
}

/// Estimates the regularized objective at the current position of
/// `trainable` and its gradient. Samples are assigned round-robin to the
/// simplexes in scope.
#[allow(clippy::too_many_arguments)]
pub fn regularized_loss_and_grad<R: Rng + ?Sized>(
    complex: &SimplicialComplex,
    trainable: &VertexId,
    batch: &Batch,
    spec: &ModelSpec,
    h_samples: usize,
    lambda_j: f64,
    volume_grad_clip: f64,
    scope: SamplingScope,
    rng: &mut R,
) -> Result<RegLossEval> {
    let incident = complex.incident(trainable);
    if incident.is_empty() {
        return Err(SproError::NotInComplex(trainable.0.clone()));
    }
    let pool: Vec<usize> = match scope {
        SamplingScope::Incident => incident,
        SamplingScope::Global => (0..complex.simplexes.len()).collect(),
    };
    let dim = complex.store.get(trainable)?.values.len();
    let mut grad = vec![0.0; dim];
    let mut loss_total = 0.0;
    for h in 0..h_samples.max(1) {
        let simplex = &complex.simplexes[pool[h % pool.len()]];
        let (phi, weights) = sample_uniform(simplex, &complex.store, rng)?;
        let b = simplex.position(trainable).map_or(0.0, |i| weights[i]);
        if b > 0.0 {
            let (loss, g) = netcore::loss_and_grad(spec, &phi, batch)?;
            loss_total += loss;
            grad.iter_mut()
                .zip(g.iter())
                .for_each(|(acc, gi)| *acc += b * gi);
        } else {
            loss_total += netcore::loss(spec, &phi, batch)?;
        }
    }
    let h = h_samples.max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= h);
    let loss_est = loss_total / h;

    if lambda_j == 0.0 {
        let log_volume = log_complex_volume(complex)?;
        return Ok(RegLossEval {
            loss_est,
            volume_term: 0.0,
            log_volume,
            grad,
        });
    }

    let (log_volume, mut vgrad) = log_volume_grad(complex, trainable)?;
    vgrad.iter_mut().for_each(|g| *g *= -lambda_j);
    let norm = linalg::norm(&vgrad);
    if norm > volume_grad_clip {
        let scale = volume_grad_clip / norm;
        vgrad.iter_mut().for_each(|g| *g *= scale);
    }
    grad.iter_mut().zip(&vgrad).for_each(|(g, v)| *g += v);
    Ok(RegLossEval {
        loss_est,
        volume_term: -lambda_j * log_volume,
        log_volume,
        grad,
    })
}

/// Per-epoch record of connector training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectorEpoch {
    pub vertex: VertexId,
    pub epoch: usize,
    pub data_loss: f64,
    pub log_volume: f64,
    pub lambda_j: f64,
    pub lr: f64,
}

/// Trains `trainable` in place; every other vertex stays frozen.
#[allow(clippy::too_many_arguments)]
pub fn train_connector(
    complex: &mut SimplicialComplex,
    trainable: &VertexId,
    dataset: &Batch,
    spec: &ModelSpec,
    config: &SproConfig,
    reg: &RegSchedule,
    sample_rng: &mut ChaCha8Rng,
    shuffle_rng: &mut ChaCha8Rng,
) -> Result<Vec<ConnectorEpoch>> {
    config.validate()?;
    if complex.incident(trainable).is_empty() {
        return Err(SproError::NotInComplex(trainable.0.clone()));
    }
    let mut params = complex.store.get(trainable)?.values.clone().into_inner();
    let full = dataset.len() <= config.train.batch_size;
    let data_sum = Cell::new(0.0);
    let working = RefCell::new(complex.clone());
    let mut history = Vec::with_capacity(config.train.epochs);
    let n = dataset.len();

    let outcome = opt::run_sgd(
        &mut params,
        n,
        &config.train,
        shuffle_rng,
        |p, idx| {
            working
                .borrow_mut()
                .store
                .get_mut(trainable)?
                .values
                .copy_from_slice(p);
            let working = working.borrow();
            let sub;
            let batch = if full {
                dataset
            } else {
                sub = dataset.subset(idx);
                &sub
            };
            let eval = match regularized_loss_and_grad(
                &working,
                trainable,
                batch,
                spec,
                config.h_samples,
                reg.lambda_j,
                config.volume_grad_clip,
                config.sampling,
                sample_rng,
            ) {
                Ok(eval) => eval,
                Err(SproError::Net(NetError::NonFiniteLoss)) => return Ok((f64::NAN, Vec::new())),
                Err(e) => return Err(e),
            };
            data_sum.set(data_sum.get() + eval.loss_est * idx.len() as f64);
            Ok((eval.objective(), eval.grad))
        },
        |record, p| {
            working
                .borrow_mut()
                .store
                .get_mut(trainable)?
                .values
                .copy_from_slice(p);
            history.push(ConnectorEpoch {
                vertex: trainable.clone(),
                epoch: record.epoch,
                data_loss: data_sum.replace(0.0) / n as f64,
                log_volume: log_complex_volume(&working.borrow())?,
                lambda_j: reg.lambda_j,
                lr: record.lr,
            });
            Ok(())
        },
    );
    outcome?;
    complex.store.get_mut(trainable)?.values = ParamVector(params);
    Ok(history)
}

/// Declarative layout of a complex: which modes and connectors exist, the
/// order connectors are trained in, and which vertices span each simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexSpec {
    pub modes: Vec<VertexId>,
    pub connectors: Vec<VertexId>,
    pub simplexes: Vec<Vec<VertexId>>,
}

fn ids(names: &[&str]) -> Vec<VertexId> {
    names.iter().map(|s| VertexId::from(*s)).collect()
}

impl ComplexSpec {
    /// Mode-connecting path `w0 → θ0 → w1`.
    pub fn path() -> Self {
        Self::tunnel(2)
    }

    /// `m` modes joined through a single connector.
    pub fn tunnel(m: usize) -> Self {
        let modes: Vec<VertexId> = (0..m).map(|i| VertexId(format!("w{i}"))).collect();
        Self {
            simplexes: modes
                .iter()
                .map(|w| vec![w.clone(), "theta0".into()])
                .collect(),
            modes,
            connectors: ids(&["theta0"]),
        }
    }

    /// Every mode shares one simplex with all `k` connectors.
    pub fn shared_connectors(m: usize, k: usize) -> Self {
        let modes: Vec<VertexId> = (0..m).map(|i| VertexId(format!("w{i}"))).collect();
        let connectors: Vec<VertexId> = (0..k).map(|j| VertexId(format!("theta{j}"))).collect();
        let simplexes = modes
            .iter()
            .map(|w| {
                std::iter::once(w.clone())
                    .chain(connectors.iter().cloned())
                    .collect()
            })
            .collect();
        Self {
            modes,
            connectors,
            simplexes,
        }
    }

    /// Four modes and three connectors forming four simplexes.
    pub fn four_modes_three_connectors() -> Self {
        Self {
            modes: ids(&["w0", "w1", "w2", "w3"]),
            connectors: ids(&["theta0", "theta1", "theta2"]),
            simplexes: vec![
                ids(&["w0", "theta0", "theta1"]),
                ids(&["w1", "theta0", "theta1"]),
                ids(&["w2", "theta1", "theta2"]),
                ids(&["w3", "theta1", "theta2"]),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SproError::InvalidSpec(m));
        if self.modes.is_empty() {
            return bad("at least one mode is required".into());
        }
        let mut seen: Vec<&VertexId> = Vec::new();
        for id in self.modes.iter().chain(&self.connectors) {
            if seen.contains(&id) {
                return bad(format!("vertex {id} declared twice"));
            }
            seen.push(id);
        }
        for s in &self.simplexes {
            Simplex::new(s.clone())?;
            if let Some(id) = s.iter().find(|id| !seen.contains(id)) {
                return bad(format!("simplex references undeclared vertex {id}"));
            }
        }
        for c in &self.connectors {
            let incident: Vec<_> = self.simplexes.iter().filter(|s| s.contains(c)).collect();
            if incident.is_empty() {
                return bad(format!("connector {c} is in no simplex"));
            }
        }
        Ok(())
    }

    /// Simplexes after restricting every declared simplex to `present`,
    /// dropping duplicates and faces of other simplexes.
    pub fn active_simplexes(&self, present: &[VertexId]) -> Vec<Simplex> {
        let restricted: Vec<Simplex> = self
            .simplexes
            .iter()
            .filter_map(|s| {
                let kept: Vec<VertexId> =
                    s.iter().filter(|v| present.contains(v)).cloned().collect();
                Simplex::new(kept).ok()
            })
            .collect();
        let mut out: Vec<Simplex> = Vec::new();
        for (i, s) in restricted.iter().enumerate() {
            let dominated = restricted
                .iter()
                .enumerate()
                .any(|(j, t)| j != i && s.is_face_of(t) && (t.order() > s.order() || j < i));
            if !dominated {
                out.push(s.clone());
            }
        }
        // Bare modes that appear in no declared simplex.
        for id in present {
            if !out.iter().any(|s| s.contains(id)) {
                out.push(Simplex::new(vec![id.clone()]).expect("single vertex"));
            }
        }
        out
    }
}

/// RNG streams used while adding connector `j`.
fn connector_rngs(seed: u64, j: usize) -> [ChaCha8Rng; 4] {
    let base = 100 + 4 * j as u64;
    [
        rng_stream(seed, base),
        rng_stream(seed, base + 1),
        rng_stream(seed, base + 2),
        rng_stream(seed, base + 3),
    ]
}

/// Result of a complex-building run.
#[derive(Debug, Clone, PartialEq)]
pub struct SproRun {
    pub complex: SimplicialComplex,
    pub history: Vec<ConnectorEpoch>,
    pub lambdas: Vec<(VertexId, f64)>,
}

/// Initializes, regularizes and trains one new connector of `spec_layout`.
fn add_connector(
    store: &mut VertexStore,
    layout: &ComplexSpec,
    connector: &VertexId,
    index: usize,
    dataset: &Batch,
    spec: &ModelSpec,
    config: &SproConfig,
) -> Result<(SimplicialComplex, Vec<ConnectorEpoch>, f64)> {
    let mut present: Vec<VertexId> = store.iter().map(|(id, _)| id.clone()).collect();
    present.push(connector.clone());
    let active = layout.active_simplexes(&present);
    let [mut init_rng, mut probe_rng, mut sample_rng, mut shuffle_rng] =
        connector_rngs(config.train.seed, index);

    let without = SimplicialComplex {
        store: store.clone(),
        simplexes: active.clone(),
    };
    let reg = compute_lambda(
        &without,
        connector,
        config.lambda_star,
        config.probe_jitter_sigma,
        &mut probe_rng,
    )?;
    let incident = incident_vertices(&without, connector);
    init_connector(
        store,
        connector,
        &incident,
        &mut init_rng,
        config.jitter_sigma,
    )?;
    let mut complex = SimplicialComplex::new(store.clone(), active)?;
    let history = train_connector(
        &mut complex,
        connector,
        dataset,
        spec,
        config,
        &reg,
        &mut sample_rng,
        &mut shuffle_rng,
    )?;
    let trained = complex.store.get(connector)?.values.clone();
    store.get_mut(connector)?.values = trained;
    store.get_mut(connector)?.trainable = false;
    Ok((complex, history, reg.lambda_j))
}

fn mode_store(spec: &ModelSpec, modes: &[(VertexId, ParamVector)]) -> Result<VertexStore> {
    let mut store = VertexStore::new();
    for (id, params) in modes {
        if params.len() != spec.param_count() {
            return Err(NetError::LengthMismatch {
                expected: spec.param_count(),
                found: params.len(),
            }
            .into());
        }
        store.insert(
            id.clone(),
            Vertex {
                values: params.clone(),
                role: Role::Mode,
                trainable: false,
            },
        )?;
    }
    Ok(store)
}

/// Trains the connectors of `layout` in order, joining the given modes.
pub fn build_connecting_complex(
    spec: &ModelSpec,
    modes: &[(VertexId, ParamVector)],
    layout: &ComplexSpec,
    dataset: &Batch,
    config: &SproConfig,
) -> Result<SproRun> {
    grow(spec, modes, layout, dataset, config, 0)
}

/// `stream_base` offsets the connector index used to pick RNG streams, so
/// independently grown pieces of one run never share a stream.
fn grow(
    spec: &ModelSpec,
    modes: &[(VertexId, ParamVector)],
    layout: &ComplexSpec,
    dataset: &Batch,
    config: &SproConfig,
    stream_base: usize,
) -> Result<SproRun> {
    config.validate()?;
    layout.validate()?;
    let declared: Vec<&VertexId> = modes.iter().map(|(id, _)| id).collect();
    if layout.modes.iter().collect::<Vec<_>>() != declared {
        return Err(SproError::InvalidSpec(
            "mode checkpoints must match the spec's mode list".into(),
        ));
    }
    let mut store = mode_store(spec, modes)?;
    let mut history = Vec::new();
    let mut lambdas = Vec::new();
    for (j, connector) in layout.connectors.iter().enumerate() {
        let (_, h, lambda) = add_connector(
            &mut store,
            layout,
            connector,
            stream_base + j,
            dataset,
            spec,
            config,
        )?;
        history.extend(h);
        lambdas.push((connector.clone(), lambda));
    }
    let present: Vec<VertexId> = store.iter().map(|(id, _)| id.clone()).collect();
    let complex = SimplicialComplex::new(store, layout.active_simplexes(&present))?;
    Ok(SproRun {
        complex,
        history,
        lambdas,
    })
}

fn espro_layout(mode: VertexId, connectors: Vec<VertexId>) -> ComplexSpec {
    ComplexSpec {
        simplexes: vec![std::iter::once(mode.clone())
            .chain(connectors.iter().cloned())
            .collect()],
        modes: vec![mode],
        connectors,
    }
}

/// Grows the simplex `S(w, θ0, …, θ_{k−1})` out from a single trained mode.
pub fn build_espro_simplex(
    spec: &ModelSpec,
    mode: &ParamVector,
    k: usize,
    dataset: &Batch,
    config: &SproConfig,
) -> Result<SproRun> {
    let layout = espro_layout(
        "w0".into(),
        (0..k).map(|j| VertexId(format!("theta{j}"))).collect(),
    );
    build_connecting_complex(
        spec,
        &[("w0".into(), mode.clone())],
        &layout,
        dataset,
        config,
    )
}

/// Grows an independent k-simplex at every mode and returns their disjoint
/// union. Mode `i` becomes `w{i}` with connectors `theta{i}_{j}`.
pub fn build_espro_complex(
    spec: &ModelSpec,
    modes: &[ParamVector],
    k: usize,
    dataset: &Batch,
    config: &SproConfig,
) -> Result<SproRun> {
    if modes.is_empty() {
        return Err(SproError::InvalidSpec(
            "at least one mode is required".into(),
        ));
    }
    let mut store = VertexStore::new();
    let mut simplexes = Vec::with_capacity(modes.len());
    let mut history = Vec::new();
    let mut lambdas = Vec::new();
    for (i, mode) in modes.iter().enumerate() {
        let mode_id = VertexId(format!("w{i}"));
        let layout = espro_layout(
            mode_id.clone(),
            (0..k).map(|j| VertexId(format!("theta{i}_{j}"))).collect(),
        );
        let run = grow(
            spec,
            &[(mode_id, mode.clone())],
            &layout,
            dataset,
            config,
            i * k,
        )?;
        for (id, vertex) in run.complex.store.iter() {
            store.insert(id.clone(), vertex.clone())?;
        }
        simplexes.extend(run.complex.simplexes);
        history.extend(run.history);
        lambdas.extend(run.lambdas);
    }
    Ok(SproRun {
        complex: SimplicialComplex::new(store, simplexes)?,
        history,
        lambdas,
    })
}

/// Loss and accuracy of models sampled from a complex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub samples: usize,
    pub max_loss: f64,
    pub mean_loss: f64,
    pub min_accuracy: Option<f64>,
    pub mean_accuracy: Option<f64>,
}

pub fn sample_stats<R: Rng + ?Sized>(
    complex: &SimplicialComplex,
    spec: &ModelSpec,
    dataset: &Batch,
    per_simplex: usize,
    rng: &mut R,
) -> Result<SampleStats> {
    let samples = geometry::sample_from_complex(complex, rng, per_simplex)?;
    let mut losses = Vec::with_capacity(samples.len());
    let mut accs = Vec::with_capacity(samples.len());
    for s in &samples {
        losses.push(netcore::loss(spec, &s.params, dataset)?);
        if spec.output_kind == OutputKind::Logits {
            accs.push(netcore::accuracy(spec, &s.params, dataset)?);
        }
    }
    let n = samples.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(SampleStats {
        samples: samples.len(),
        max_loss: losses.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_loss: losses.iter().sum::<f64>() / n,
        min_accuracy: (!accs.is_empty())
            .then(|| accs.iter().copied().fold(f64::INFINITY, f64::min)),
        mean_accuracy: (!accs.is_empty()).then(|| mean(&accs)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeStep {
    /// Number of connectors in the complex.
    pub k: usize,
    pub log_volume: f64,
    pub stats: Option<SampleStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub steps: Vec<ProbeStep>,
    /// Connector count at which the volume collapsed, if it did.
    pub collapse_k: Option<usize>,
    /// Lower bound on the dimension of the low-loss manifold.
    pub dimension_lower_bound: usize,
    pub complex: SimplicialComplex,
}

/// Grows `K(S(w0, θ0…θ_{k−1}), S(w1, θ0…θ_{k−1}))` one connector at a time
/// until its volume collapses or `max_k` connectors have been added.
pub fn dimensionality_probe(
    spec: &ModelSpec,
    w0: &ParamVector,
    w1: &ParamVector,
    max_k: usize,
    dataset: &Batch,
    config: &SproConfig,
    samples_per_simplex: usize,
) -> Result<ProbeReport> {
    config.validate()?;
    let modes = [("w0".into(), w0.clone()), ("w1".into(), w1.clone())];
    let mut store = mode_store(spec, &modes)?;
    let layout = ComplexSpec::shared_connectors(2, max_k);
    let mut steps = Vec::new();
    let mut running_max = f64::NEG_INFINITY;
    let mut collapse_k = None;
    let mut last =
        SimplicialComplex::new(store.clone(), layout.active_simplexes(&ids(&["w0", "w1"])))?;
    for (j, connector) in layout.connectors.iter().enumerate() {
        let k = j + 1;
        let log_volume =
            match add_connector(&mut store, &layout, connector, j, dataset, spec, config) {
                Ok((complex, _, _)) => {
                    let lv = log_complex_volume(&complex)?;
                    last = complex;
                    lv
                }
                Err(e) if e.is_degenerate() => f64::NEG_INFINITY,
                Err(e) => return Err(e),
            };
        let collapsed =
            log_volume < running_max - collapse_threshold() || log_volume == f64::NEG_INFINITY;
        let stats = if collapsed {
            None
        } else {
            let mut rng = rng_stream(config.train.seed, 10_000 + j as u64);
            Some(sample_stats(
                &last,
                spec,
                dataset,
                samples_per_simplex,
                &mut rng,
            )?)
        };
        steps.push(ProbeStep {
            k,
            log_volume,
            stats,
        });
        if collapsed {
            collapse_k = Some(k);
            break;
        }
        running_max = running_max.max(log_volume);
    }
    let dimension_lower_bound = match collapse_k {
        Some(k) => k - 1,
        None => steps.len(),
    };
    Ok(ProbeReport {
        steps,
        collapse_k,
        dimension_lower_bound,
        complex: last,
    })
}

/// Log-volume of each simplex of a complex.
pub fn simplex_log_volumes(complex: &SimplicialComplex) -> Result<Vec<f64>> {
    complex
        .simplexes
        .iter()
        .map(|s| Ok(log_simplex_volume(s, &complex.store)?.log_volume))
        .collect()
}

/// Softmax weights `V_s / Σ V` of the positive-order simplexes.
pub fn volume_shares(complex: &SimplicialComplex) -> Result<Vec<f64>> {
    let logs = simplex_log_volumes(complex)?;
    let positive: Vec<f64> = complex
        .simplexes
        .iter()
        .zip(&logs)
        .map(|(s, &l)| if s.order() > 0 { l } else { f64::NEG_INFINITY })
        .collect();
    let total = log_sum_exp(&positive);
    Ok(positive.iter().map(|l| (l - total).exp()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{Activation, Matrix, Targets};

    fn store_with(points: &[(&str, Vec<f64>)]) -> VertexStore {
        let mut store = VertexStore::new();
        for (id, p) in points {
            store
                .insert(
                    (*id).into(),
                    Vertex {
                        values: ParamVector(p.clone()),
                        role: Role::Mode,
                        trainable: false,
                    },
                )
                .unwrap();
        }
        store
    }

    #[test]
    fn connector_without_jitter_is_the_mean() {
        let mut store = store_with(&[
            ("a", vec![0.0, 2.0]),
            ("b", vec![4.0, 0.0]),
            ("c", vec![2.0, 4.0]),
        ]);
        let mut rng = rng_stream(0, 0);
        init_connector(&mut store, &"m".into(), &ids(&["a", "b"]), &mut rng, 0.0).unwrap();
        assert_eq!(&store.get(&"m".into()).unwrap().values[..], &[2.0, 1.0]);
        init_connector(
            &mut store,
            &"t".into(),
            &ids(&["a", "b", "c"]),
            &mut rng,
            0.0,
        )
        .unwrap();
        assert_eq!(&store.get(&"t".into()).unwrap().values[..], &[2.0, 2.0]);
        assert_eq!(store.get(&"t".into()).unwrap().role, Role::Connector);
    }

    #[test]
    fn jitter_moves_off_the_hull() {
        let mut store = store_with(&[
            ("a", vec![0.3, -1.0, 2.0, 0.5]),
            ("b", vec![1.0, 0.0, -1.0, 0.25]),
        ]);
        let mut rng = rng_stream(1, 0);
        init_connector(&mut store, &"t".into(), &ids(&["a", "b"]), &mut rng, 1e-4).unwrap();
        let base = store.points(&ids(&["a", "b"])).unwrap();
        let hull = geometry::hull_distance_and_grad(&store.get(&"t".into()).unwrap().values, &base)
            .unwrap();
        assert!(hull.distance > 1e-12);
    }

    #[test]
    fn lambda_normalization() {
        assert_eq!(lambda_from_log_volume(1e-8, 1.0).unwrap(), 1e-8);
        assert!((lambda_from_log_volume(1e-8, 100.0).unwrap() - 1e-10).abs() < 1e-25);
        assert_eq!(lambda_from_log_volume(1e-8, -3.0).unwrap(), 1e-8);
        assert!(lambda_from_log_volume(1e-8, f64::NEG_INFINITY).is_err());
        assert_eq!(SproConfig::default().lambda_star, 1e-8);
        assert_eq!(SproConfig::default().h_samples, 5);
        let mut prev = f64::INFINITY;
        for lv in [1.5, 2.0, 10.0, 50.0] {
            let l = lambda_from_log_volume(1e-8, lv).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn spec_validation_and_active_sets() {
        assert!(ComplexSpec::path().validate().is_ok());
        assert!(ComplexSpec::four_modes_three_connectors()
            .validate()
            .is_ok());
        let bad = ComplexSpec {
            modes: ids(&["w0"]),
            connectors: ids(&["theta0"]),
            simplexes: vec![ids(&["w0", "theta9"])],
        };
        assert!(bad.validate().is_err());
        let layout = ComplexSpec::shared_connectors(2, 3);
        let active = layout.active_simplexes(&ids(&["w0", "w1", "theta0"]));
        assert_eq!(
            active,
            vec![
                Simplex::new(ids(&["w0", "theta0"])).unwrap(),
                Simplex::new(ids(&["w1", "theta0"])).unwrap(),
            ]
        );
        let bare = layout.active_simplexes(&ids(&["w0", "w1"]));
        assert_eq!(bare.len(), 2);
        assert!(bare.iter().all(|s| s.order() == 0));
    }

    fn toy() -> (ModelSpec, Batch) {
        let spec = ModelSpec::classifier(vec![2, 3, 2], Activation::Tanh);
        let batch = Batch::new(
            Matrix::new(4, 2, vec![0.1, 0.2, -0.5, 0.3, 0.9, -0.4, -0.2, -0.8]),
            Targets::Classes(vec![0, 1, 1, 0]),
        )
        .unwrap();
        (spec, batch)
    }

    #[test]
    fn sample_at_vertex_gives_plain_gradient() {
        let (spec, batch) = toy();
        let mut rng = rng_stream(3, 0);
        let theta = netcore::init_params(&spec, &mut rng);
        let store = store_with(&[("t", theta.0.clone())]);
        let complex =
            SimplicialComplex::new(store, vec![Simplex::from_ids(["t"]).unwrap()]).unwrap();
        let eval = regularized_loss_and_grad(
            &complex,
            &"t".into(),
            &batch,
            &spec,
            5,
            0.0,
            1.0,
            SamplingScope::Incident,
            &mut rng,
        )
        .unwrap();
        let (loss, grad) = netcore::loss_and_grad(&spec, &theta, &batch).unwrap();
        assert!((eval.loss_est - loss).abs() < 1e-14);
        for (a, b) in eval.grad.iter().zip(grad.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(eval.volume_term, 0.0);
    }

    #[test]
    fn zero_lr_training_keeps_vertex() {
        let (spec, batch) = toy();
        let mut rng = rng_stream(4, 0);
        let w = netcore::init_params(&spec, &mut rng);
        let mut store = store_with(&[("w0", w.0)]);
        init_connector(&mut store, &"theta0".into(), &ids(&["w0"]), &mut rng, 1e-3).unwrap();
        let mut complex =
            SimplicialComplex::new(store, vec![Simplex::from_ids(["w0", "theta0"]).unwrap()])
                .unwrap();
        let before = complex.clone();
        let mut config = SproConfig::default();
        config.train.lr = 0.0;
        config.train.epochs = 2;
        let reg = RegSchedule {
            lambda_star: 1e-3,
            lambda_j: 1e-3,
            probe_jitter_sigma: 1.0,
        };
        let hist = train_connector(
            &mut complex,
            &"theta0".into(),
            &batch,
            &spec,
            &config,
            &reg,
            &mut rng_stream(0, 1),
            &mut rng_stream(0, 2),
        )
        .unwrap();
        assert_eq!(complex, before);
        assert_eq!(hist.len(), 2);
        assert!(hist.iter().all(|h| h.log_volume.is_finite()));
    }

    #[test]
    fn untouched_vertex_is_rejected() {
        let (spec, batch) = toy();
        let store = store_with(&[("a", vec![0.0; 17]), ("b", vec![1.0; 17])]);
        let complex =
            SimplicialComplex::new(store, vec![Simplex::from_ids(["a"]).unwrap()]).unwrap();
        let r = regularized_loss_and_grad(
            &complex,
            &"b".into(),
            &batch,
            &spec,
            5,
            0.0,
            1.0,
            SamplingScope::Incident,
            &mut rng_stream(0, 0),
        );
        assert!(matches!(r, Err(SproError::NotInComplex(_))));
    }
}
