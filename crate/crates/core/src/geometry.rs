//! Simplex geometry in parameter space.
//!
//! Volumes come from Cayley-Menger determinants on max-normalized squared
//! distances. Degenerate simplexes report a log-volume of
//! [`f64::NEG_INFINITY`] rather than an error, so that a complex made of
//! 0-simplexes (a plain deep ensemble) and a collapsed complex are both
//! representable.
//!
//! Sampling draws barycentric weights as normalized `Exp(1)` variates, i.e. a
//! flat Dirichlet. This is uniform on the standard simplex; on an arbitrary
//! simplex the pushed-forward density is uniform too whenever the map from
//! weights to points is affine and injective, which holds for any
//! non-degenerate simplex.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Deref, DerefMut};

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::linalg;

/// Scaled `V²` at or below this is treated as underflow.
pub const VOLUME_SQ_UNDERFLOW: f64 = 1e-300;

/// Squared heights, relative to the largest squared edge, at or below this
/// mark a degenerate simplex (a relative height of 1e-6).
pub const PIVOT_FLOOR: f64 = 1e-12;

/// Hull distances at or below this fraction of the local length scale are
/// reported as [`GeometryError::OnHull`].
pub const HULL_DISTANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite entry in vertex {0}")]
    NonFinite(String),
    #[error("unknown vertex id {0}")]
    UnknownVertex(String),
    #[error("duplicate vertex id {0}")]
    DuplicateVertex(String),
    #[error("simplex has no vertices")]
    EmptySimplex,
    #[error("complex has no simplexes")]
    EmptyComplex,
    #[error("base vertices are affinely dependent")]
    DegenerateBase,
    #[error("point lies on the affine hull of the base (distance {0:e})")]
    OnHull(f64),
    #[error("sample count must be at least 1")]
    ZeroSamples,
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Flat vector of every parameter of a model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VertexId(pub String);

impl VertexId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for VertexId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Mode,
    Connector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub values: ParamVector,
    pub role: Role,
    pub trainable: bool,
}

/// Vertices shared by the simplexes of a complex. All vertices have the same
/// dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VertexStore {
    vertices: BTreeMap<VertexId, Vertex>,
}

impl VertexStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Dimension shared by every vertex, `None` while empty.
    pub fn dim(&self) -> Option<usize> {
        self.vertices.values().next().map(|v| v.values.len())
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn insert(&mut self, id: VertexId, vertex: Vertex) -> Result<()> {
        if self.vertices.contains_key(&id) {
            return Err(GeometryError::DuplicateVertex(id.0));
        }
        if let Some(dim) = self.dim() {
            if vertex.values.len() != dim {
                return Err(GeometryError::DimensionMismatch {
                    expected: dim,
                    found: vertex.values.len(),
                });
            }
        }
        if !vertex.values.is_finite() {
            return Err(GeometryError::NonFinite(id.0));
        }
        self.vertices.insert(id, vertex);
        Ok(())
    }

    pub fn get(&self, id: &VertexId) -> Result<&Vertex> {
        self.vertices
            .get(id)
            .ok_or_else(|| GeometryError::UnknownVertex(id.0.clone()))
    }

    pub fn get_mut(&mut self, id: &VertexId) -> Result<&mut Vertex> {
        self.vertices
            .get_mut(id)
            .ok_or_else(|| GeometryError::UnknownVertex(id.0.clone()))
    }

    pub fn contains(&self, id: &VertexId) -> bool {
        self.vertices.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VertexId, &Vertex)> {
        self.vertices.iter()
    }

    /// Parameter vectors of `ids`, in order.
    pub fn points(&self, ids: &[VertexId]) -> Result<Vec<&[f64]>> {
        ids.iter().map(|id| Ok(&self.get(id)?.values[..])).collect()
    }
}

/// A k-simplex given by its k+1 distinct vertex ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Simplex {
    vertex_ids: Vec<VertexId>,
}

impl Simplex {
    pub fn new(vertex_ids: Vec<VertexId>) -> Result<Self> {
        if vertex_ids.is_empty() {
            return Err(GeometryError::EmptySimplex);
        }
        for (i, id) in vertex_ids.iter().enumerate() {
            if vertex_ids[..i].contains(id) {
                return Err(GeometryError::DuplicateVertex(id.0.clone()));
            }
        }
        Ok(Self { vertex_ids })
    }

    pub fn from_ids<I, S>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(ids.into_iter().map(|s| VertexId(s.into())).collect())
    }

    pub fn vertex_ids(&self) -> &[VertexId] {
        &self.vertex_ids
    }

    /// Order k of the simplex (vertex count minus one).
    pub fn order(&self) -> usize {
        self.vertex_ids.len() - 1
    }

    pub fn contains(&self, id: &VertexId) -> bool {
        self.vertex_ids.contains(id)
    }

    pub fn position(&self, id: &VertexId) -> Option<usize> {
        self.vertex_ids.iter().position(|v| v == id)
    }

    /// True when every vertex of `self` is also a vertex of `other`.
    pub fn is_face_of(&self, other: &Simplex) -> bool {
        self.vertex_ids.iter().all(|id| other.contains(id))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimplicialComplex {
    pub store: VertexStore,
    pub simplexes: Vec<Simplex>,
}

impl SimplicialComplex {
    pub fn new(store: VertexStore, simplexes: Vec<Simplex>) -> Result<Self> {
        let complex = Self { store, simplexes };
        complex.validate()?;
        Ok(complex)
    }

    /// Checks that every referenced vertex exists.
    pub fn validate(&self) -> Result<()> {
        for s in &self.simplexes {
            for id in s.vertex_ids() {
                self.store.get(id)?;
            }
        }
        Ok(())
    }

    /// Indices of the simplexes containing `id`.
    pub fn incident(&self, id: &VertexId) -> Vec<usize> {
        self.simplexes
            .iter()
            .enumerate()
            .filter(|(_, s)| s.contains(id))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Convex-combination coefficients locating a point inside a simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycentricWeights(pub Vec<f64>);

impl Deref for BarycentricWeights {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Log-volume of a simplex together with whether the Cayley-Menger
/// determinant had the sign of a realizable simplex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexVolume {
    pub log_volume: f64,
    pub sign_valid: bool,
}

impl SimplexVolume {
    pub fn is_degenerate(&self) -> bool {
        self.log_volume == f64::NEG_INFINITY
    }
}

fn check_points(points: &[&[f64]]) -> Result<usize> {
    let dim = points.first().ok_or(GeometryError::EmptySimplex)?.len();
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(GeometryError::DimensionMismatch {
                expected: dim,
                found: p.len(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite(format!("#{i}")));
        }
    }
    Ok(dim)
}

/// Squared Euclidean distances between all pairs of `points`.
pub fn sq_distance_matrix(points: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    check_points(points)?;
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = linalg::sq_distance(points[i], points[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    Ok(d)
}

pub fn pairwise_sq_distances(simplex: &Simplex, store: &VertexStore) -> Result<Vec<Vec<f64>>> {
    sq_distance_matrix(&store.points(simplex.vertex_ids())?)
}

fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

/// Log-volume of the simplex spanned by `points` (any dimension, k+1 points).
pub fn log_volume_of_points(points: &[&[f64]]) -> Result<SimplexVolume> {
    let sq = sq_distance_matrix(points)?;
    Ok(log_volume_from_sq_distances(&sq))
}

/// Determinant of the Cayley-Menger matrix: squared distances bordered by a
/// row and column of ones with a zero corner. Evaluated literally with LU and
/// partial pivoting; [`log_volume_from_sq_distances`] uses the reduced form.
pub fn cayley_menger_determinant(sq: &[Vec<f64>]) -> f64 {
    let n = sq.len();
    let m = n + 1;
    let mut cm = vec![0.0; m * m];
    for j in 1..m {
        cm[j] = 1.0;
        cm[j * m] = 1.0;
    }
    for i in 0..n {
        for j in 0..n {
            cm[(i + 1) * m + (j + 1)] = sq[i][j];
        }
    }
    linalg::determinant(cm, m)
}

/// Log-volume from a matrix of squared distances via the Cayley-Menger
/// determinant. A 0-simplex has volume 1.
///
/// Eliminating the ones border against vertex 0 turns the bordered
/// determinant into `(-1)^{k+1} 2^k det(G)` with `G` the Gram matrix of the
/// edges from vertex 0, `G_ij = (d_0i² + d_0j² − d_ij²) / 2`. `det(G)` is
/// factored with symmetric pivoting; its pivots are successive squared
/// heights, so a pivot below [`PIVOT_FLOOR`] marks a degenerate simplex even
/// when a thin but valid simplex has a determinant far below round-off of the
/// bordered form.
pub fn log_volume_from_sq_distances(sq: &[Vec<f64>]) -> SimplexVolume {
    let n = sq.len();
    assert!(n >= 1, "simplex needs at least one vertex");
    let k = n - 1;
    if k == 0 {
        return SimplexVolume {
            log_volume: 0.0,
            sign_valid: true,
        };
    }
    let max_sq = sq.iter().flatten().copied().fold(0.0_f64, f64::max);
    if max_sq <= 0.0 {
        return SimplexVolume {
            log_volume: f64::NEG_INFINITY,
            sign_valid: false,
        };
    }
    let mut gram = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            gram[i * k + j] = 0.5 * (sq[0][i + 1] + sq[0][j + 1] - sq[i + 1][j + 1]) / max_sq;
        }
    }
    let (ln_det, sign_valid) = match linalg::pivoted_log_det(gram, k, PIVOT_FLOOR) {
        Ok(ln_det) => (ln_det, true),
        Err(min_pivot) => {
            return SimplexVolume {
                log_volume: f64::NEG_INFINITY,
                sign_valid: min_pivot > 0.0,
            }
        }
    };
    // V² = (-1)^{k+1} CM / ((k!)² 2^k) = det(G) / (k!)²
    let ln_vsq_scaled = ln_det - 2.0 * ln_factorial(k);
    if ln_vsq_scaled <= VOLUME_SQ_UNDERFLOW.ln() {
        return SimplexVolume {
            log_volume: f64::NEG_INFINITY,
            sign_valid,
        };
    }
    // Lengths were divided by sqrt(max_sq); volume scales with length^k.
    SimplexVolume {
        log_volume: 0.5 * ln_vsq_scaled + 0.5 * (k as f64) * max_sq.ln(),
        sign_valid,
    }
}

pub fn log_simplex_volume(simplex: &Simplex, store: &VertexStore) -> Result<SimplexVolume> {
    log_volume_of_points(&store.points(simplex.vertex_ids())?)
}

/// `log(Σ exp(xᵢ))`, `-∞` for an empty or all-`-∞` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log of the summed volume of the simplexes of the complex.
///
/// 0-simplexes carry no measure in a complex and are skipped, so a complex of
/// bare modes reports the `-∞` sentinel.
pub fn log_complex_volume(complex: &SimplicialComplex) -> Result<f64> {
    if complex.simplexes.is_empty() {
        return Err(GeometryError::EmptyComplex);
    }
    let logs = complex
        .simplexes
        .iter()
        .filter(|s| s.order() > 0)
        .map(|s| log_simplex_volume(s, &complex.store).map(|v| v.log_volume))
        .collect::<Result<Vec<_>>>()?;
    Ok(log_sum_exp(&logs))
}

/// Distance from a point to an affine hull, and the gradient of the
/// log-volume of the simplex obtained by adding that point.
#[derive(Debug, Clone, PartialEq)]
pub struct HullDistance {
    pub distance: f64,
    pub grad: Vec<f64>,
    /// Orthogonal projection of the point onto the hull.
    pub projection: Vec<f64>,
}

/// Distance `h` from `theta` to the affine hull of `base` and
/// `∇_θ log V = (θ − proj(θ)) / h²`.
///
/// Adding `theta` to a (k−1)-simplex multiplies its volume by `h / k`, so
/// this gradient is exact for the log-volume of `base ∪ {theta}`.
pub fn hull_distance_and_grad(theta: &[f64], base: &[&[f64]]) -> Result<HullDistance> {
    let dim = check_points(base)?;
    if theta.len() != dim {
        return Err(GeometryError::DimensionMismatch {
            expected: dim,
            found: theta.len(),
        });
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite("theta".into()));
    }
    if log_volume_of_points(base)?.is_degenerate() {
        return Err(GeometryError::DegenerateBase);
    }

    let origin = base[0];
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(base.len() - 1);
    let mut scale = 0.0_f64;
    for p in &base[1..] {
        let mut e: Vec<f64> = p.iter().zip(origin).map(|(a, b)| a - b).collect();
        scale = scale.max(linalg::norm(&e));
        linalg::reject(&mut e, &basis);
        let n = linalg::norm(&e);
        if n <= HULL_DISTANCE_FLOOR * scale {
            return Err(GeometryError::DegenerateBase);
        }
        e.iter_mut().for_each(|x| *x /= n);
        basis.push(e);
    }

    let mut r: Vec<f64> = theta.iter().zip(origin).map(|(a, b)| a - b).collect();
    scale = scale.max(linalg::norm(&r));
    linalg::reject(&mut r, &basis);
    let h = linalg::norm(&r);
    if scale == 0.0 || h <= HULL_DISTANCE_FLOOR * scale {
        return Err(GeometryError::OnHull(h));
    }
    let projection = theta.iter().zip(&r).map(|(t, ri)| t - ri).collect();
    let grad = r.iter().map(|ri| ri / (h * h)).collect();
    Ok(HullDistance {
        distance: h,
        grad,
        projection,
    })
}

/// Flat-Dirichlet weights for `n` vertices from normalized `Exp(1)` draws.
pub fn sample_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> BarycentricWeights {
    let mut w: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter_mut().for_each(|x| *x /= total);
    } else {
        // Every draw underflowed to zero; astronomically unlikely.
        w.iter_mut().for_each(|x| *x = 1.0 / n as f64);
    }
    BarycentricWeights(w)
}

/// `Σ wᵢ pᵢ`.
pub fn combine(points: &[&[f64]], weights: &[f64]) -> ParamVector {
    let dim = points[0].len();
    let mut out = vec![0.0; dim];
    for (p, &w) in points.iter().zip(weights) {
        out.iter_mut().zip(p.iter()).for_each(|(o, x)| *o += w * x);
    }
    ParamVector(out)
}

pub fn sample_uniform<R: Rng + ?Sized>(
    simplex: &Simplex,
    store: &VertexStore,
    rng: &mut R,
) -> Result<(ParamVector, BarycentricWeights)> {
    let points = store.points(simplex.vertex_ids())?;
    let weights = sample_weights(points.len(), rng);
    Ok((combine(&points, &weights), weights))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSample {
    pub params: ParamVector,
    pub simplex_index: usize,
    pub weights: BarycentricWeights,
}

/// Draws `per_simplex` samples from every simplex of the complex, simplex by
/// simplex in order.
pub fn sample_from_complex<R: Rng + ?Sized>(
    complex: &SimplicialComplex,
    rng: &mut R,
    per_simplex: usize,
) -> Result<Vec<ComplexSample>> {
    if per_simplex == 0 {
        return Err(GeometryError::ZeroSamples);
    }
    if complex.simplexes.is_empty() {
        return Err(GeometryError::EmptyComplex);
    }
    let mut out = Vec::with_capacity(per_simplex * complex.simplexes.len());
    for (index, simplex) in complex.simplexes.iter().enumerate() {
        for _ in 0..per_simplex {
            let (params, weights) = sample_uniform(simplex, &complex.store, rng)?;
            out.push(ComplexSample {
                params,
                simplex_index: index,
                weights,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_of(points: &[&[f64]]) -> (VertexStore, Simplex) {
        let mut store = VertexStore::new();
        let mut ids = Vec::new();
        for (i, p) in points.iter().enumerate() {
            let id = VertexId(format!("v{i}"));
            store
                .insert(
                    id.clone(),
                    Vertex {
                        values: ParamVector(p.to_vec()),
                        role: Role::Mode,
                        trainable: false,
                    },
                )
                .unwrap();
            ids.push(id);
        }
        (store, Simplex::new(ids).unwrap())
    }

    #[test]
    fn coincident_points_have_zero_distance() {
        let (store, s) = store_of(&[&[1.0, 2.0], &[1.0, 2.0]]);
        let d = pairwise_sq_distances(&s, &store).unwrap();
        assert_eq!(d[0][1], 0.0);
        assert!(log_simplex_volume(&s, &store).unwrap().is_degenerate());
    }

    #[test]
    fn three_four_five() {
        let (store, s) = store_of(&[&[0.0, 0.0], &[3.0, 4.0]]);
        assert_eq!(pairwise_sq_distances(&s, &store).unwrap()[1][0], 25.0);
        let v = log_simplex_volume(&s, &store).unwrap();
        assert!((v.log_volume - 5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn zero_simplex_has_unit_volume() {
        let (store, s) = store_of(&[&[4.0, -1.0, 2.0]]);
        let v = log_simplex_volume(&s, &store).unwrap();
        assert_eq!(v.log_volume, 0.0);
        assert!(v.sign_valid);
    }

    #[test]
    fn unit_segment() {
        let (store, s) = store_of(&[&[0.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        assert!(log_simplex_volume(&s, &store).unwrap().log_volume.abs() < 1e-15);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let (store, s) = store_of(&[&[0.0, 0.0], &[1.0, 1.0], &[2.5, 2.5]]);
        assert!(log_simplex_volume(&s, &store).unwrap().is_degenerate());
        let (store, s) = store_of(&[&[0.3, -1.2, 0.7], &[1.1, 0.4, 2.2], &[2.7, 3.6, 5.2]]);
        assert!(log_simplex_volume(&s, &store).unwrap().is_degenerate());
    }

    #[test]
    fn non_finite_vertices_rejected() {
        let r = log_volume_of_points(&[&[0.0, f64::NAN], &[1.0, 0.0]]);
        assert!(matches!(r, Err(GeometryError::NonFinite(_))));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let r = sq_distance_matrix(&[&[0.0, 1.0], &[1.0]]);
        assert!(matches!(r, Err(GeometryError::DimensionMismatch { .. })));
        let mut store = VertexStore::new();
        let v = |n: usize| Vertex {
            values: ParamVector::zeros(n),
            role: Role::Mode,
            trainable: false,
        };
        store.insert("a".into(), v(2)).unwrap();
        assert!(store.insert("b".into(), v(3)).is_err());
        assert!(store.insert("a".into(), v(2)).is_err());
    }

    #[test]
    fn simplex_rejects_duplicates() {
        assert!(Simplex::from_ids(["a", "b", "a"]).is_err());
        assert!(Simplex::from_ids(Vec::<String>::new()).is_err());
    }

    #[test]
    fn complex_volume_of_points_only_is_sentinel() {
        let (store, _) = store_of(&[&[0.0], &[1.0]]);
        let complex = SimplicialComplex::new(
            store,
            vec![
                Simplex::from_ids(["v0"]).unwrap(),
                Simplex::from_ids(["v1"]).unwrap(),
            ],
        )
        .unwrap();
        assert_eq!(log_complex_volume(&complex).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn complex_rejects_unknown_ids() {
        let (store, _) = store_of(&[&[0.0]]);
        let r = SimplicialComplex::new(store, vec![Simplex::from_ids(["v0", "nope"]).unwrap()]);
        assert!(matches!(r, Err(GeometryError::UnknownVertex(_))));
    }

    #[test]
    fn hull_symmetric_case() {
        let hd = hull_distance_and_grad(&[0.0, 1.0], &[&[-1.0, 0.0], &[1.0, 0.0]]).unwrap();
        assert!((hd.distance - 1.0).abs() < 1e-15);
        assert!(hd.grad[0].abs() < 1e-15);
        assert!((hd.grad[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hull_point_on_hull_signals() {
        let r = hull_distance_and_grad(&[0.25, 0.0], &[&[-1.0, 0.0], &[1.0, 0.0]]);
        assert!(matches!(r, Err(GeometryError::OnHull(_))));
    }

    #[test]
    fn hull_degenerate_base_signals() {
        let r = hull_distance_and_grad(&[0.0, 1.0], &[&[1.0, 0.0], &[1.0, 0.0]]);
        assert!(matches!(r, Err(GeometryError::DegenerateBase)));
    }

    #[test]
    fn zero_simplex_sample_is_the_vertex() {
        let (store, s) = store_of(&[&[1.5, -2.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (p, w) = sample_uniform(&s, &store, &mut rng).unwrap();
        assert_eq!(&p[..], &[1.5, -2.0]);
        assert_eq!(&w[..], &[1.0]);
    }

    #[test]
    fn complex_sampling_quotas() {
        let (store, _) = store_of(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let complex = SimplicialComplex::new(
            store,
            vec![
                Simplex::from_ids(["v0", "v1"]).unwrap(),
                Simplex::from_ids(["v1", "v2", "v3"]).unwrap(),
                Simplex::from_ids(["v3"]).unwrap(),
            ],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples = sample_from_complex(&complex, &mut rng, 25).unwrap();
        assert_eq!(samples.len(), 75);
        for idx in 0..3 {
            assert_eq!(
                samples.iter().filter(|s| s.simplex_index == idx).count(),
                25
            );
        }
        let single = sample_from_complex(&complex, &mut rng, 5).unwrap();
        assert_eq!(single.iter().filter(|s| s.simplex_index == 0).count(), 5);
        assert!(sample_from_complex(&complex, &mut rng, 0).is_err());
        assert!(sample_from_complex(&SimplicialComplex::default(), &mut rng, 1).is_err());
    }

    #[test]
    fn zero_simplex_complex_samples_are_vertices() {
        let (store, _) = store_of(&[&[0.5, 0.0], &[1.0, 3.0]]);
        let complex = SimplicialComplex::new(
            store,
            vec![
                Simplex::from_ids(["v0"]).unwrap(),
                Simplex::from_ids(["v1"]).unwrap(),
            ],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = sample_from_complex(&complex, &mut rng, 3).unwrap();
        for s in samples {
            let v = complex
                .store
                .get(&complex.simplexes[s.simplex_index].vertex_ids()[0])
                .unwrap();
            assert_eq!(s.params, v.values);
        }
    }

    #[test]
    fn reduced_form_matches_bordered_determinant() {
        let pts: [&[f64]; 4] = [
            &[0.3, -1.0, 2.0],
            &[1.5, 0.2, -0.7],
            &[-0.4, 2.2, 0.9],
            &[1.1, 1.0, 1.8],
        ];
        let sq = sq_distance_matrix(&pts).unwrap();
        let k = 3;
        let cm = cayley_menger_determinant(&sq);
        let vsq = (-1.0_f64).powi(k + 1) * cm / (36.0 * 8.0);
        let lv = log_volume_from_sq_distances(&sq);
        assert!((lv.log_volume - 0.5 * vsq.ln()).abs() < 1e-12);
    }

    #[test]
    fn thin_high_order_simplex_is_not_degenerate() {
        // 10 vertices, long spine with heights of 1e-3: the bordered
        // determinant is far below round-off but every height is resolvable.
        let dim = 12;
        let mut pts = vec![vec![0.0; dim]; 10];
        pts[1][0] = 20.0;
        for (i, p) in pts.iter_mut().enumerate().skip(2) {
            p[0] = 10.0;
            p[i] = 1e-3;
        }
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let lv = log_volume_of_points(&refs).unwrap();
        // base segment 20, then heights 1e-3 for orders 2..9
        let mut expect = 20.0_f64.ln();
        for k in 2..=9 {
            expect += (1e-3_f64).ln() - (k as f64).ln();
        }
        assert!(!lv.is_degenerate());
        assert!(
            (lv.log_volume - expect).abs() < 1e-6,
            "{} vs {}",
            lv.log_volume,
            expect
        );
    }

    #[test]
    fn log_sum_exp_cases() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            f64::NEG_INFINITY
        );
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp(&[1000.0, f64::NEG_INFINITY]) - 1000.0).abs() < 1e-12);
    }
}
