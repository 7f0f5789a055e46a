//! JSON checkpoints for trained modes and complexes.
//!
//! Floats are written in shortest round-trip form and parsed exactly, so a
//! saved complex reloads bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::{
    GeometryError, ParamVector, Role, Simplex, SimplicialComplex, Vertex, VertexId, VertexStore,
};
use crate::netcore::{ModelSpec, NetError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint schema version {0}")]
    Version(u32),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("vertex {id} has {found} values, the model needs {expected}")]
    VertexLength {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("checkpoint was made for a different model spec")]
    SpecMismatch,
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Mode,
    Complex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexRecord {
    pub id: String,
    pub role: Role,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub kind: CheckpointKind,
    pub spec: ModelSpec,
    pub vertices: Vec<VertexRecord>,
    pub simplexes: Vec<Vec<String>>,
    /// Per-epoch records of the run that produced the checkpoint.
    pub history: Value,
    pub seeds: BTreeMap<String, u64>,
    /// The configuration the run was given.
    pub config: Value,
}

impl Checkpoint {
    /// A single trained mode stored as a 0-simplex.
    pub fn mode(
        spec: &ModelSpec,
        id: &str,
        params: &ParamVector,
        history: Value,
        seeds: BTreeMap<String, u64>,
        config: Value,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: CheckpointKind::Mode,
            spec: spec.clone(),
            vertices: vec![VertexRecord {
                id: id.into(),
                role: Role::Mode,
                values: params.0.clone(),
            }],
            simplexes: vec![vec![id.into()]],
            history,
            seeds,
            config,
        }
    }

    pub fn complex(
        spec: &ModelSpec,
        complex: &SimplicialComplex,
        history: Value,
        seeds: BTreeMap<String, u64>,
        config: Value,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: CheckpointKind::Complex,
            spec: spec.clone(),
            vertices: complex
                .store
                .iter()
                .map(|(id, v)| VertexRecord {
                    id: id.0.clone(),
                    role: v.role,
                    values: v.values.0.clone(),
                })
                .collect(),
            simplexes: complex
                .simplexes
                .iter()
                .map(|s| s.vertex_ids().iter().map(|id| id.0.clone()).collect())
                .collect(),
            history,
            seeds,
            config,
        }
    }

    /// Rebuilds the complex, validating every vertex and simplex.
    pub fn to_complex(&self) -> Result<SimplicialComplex> {
        self.spec.validate()?;
        let expected = self.spec.param_count();
        let mut store = VertexStore::new();
        for v in &self.vertices {
            if v.values.len() != expected {
                return Err(CheckpointError::VertexLength {
                    id: v.id.clone(),
                    expected,
                    found: v.values.len(),
                });
            }
            store.insert(
                VertexId(v.id.clone()),
                Vertex {
                    values: ParamVector(v.values.clone()),
                    role: v.role,
                    trainable: false,
                },
            )?;
        }
        let simplexes = self
            .simplexes
            .iter()
            .map(|ids| Simplex::new(ids.iter().map(|id| VertexId(id.clone())).collect()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(SimplicialComplex::new(store, simplexes)?)
    }

    /// Parameters of the vertex `id`.
    pub fn vertex(&self, id: &str) -> Option<ParamVector> {
        self.vertices
            .iter()
            .find(|v| v.id == id)
            .map(|v| ParamVector(v.values.clone()))
    }

    /// The first mode vertex.
    pub fn first_mode(&self) -> Option<ParamVector> {
        self.vertices
            .iter()
            .find(|v| v.role == Role::Mode)
            .map(|v| ParamVector(v.values.clone()))
    }

    pub fn require_spec(&self, spec: &ModelSpec) -> Result<()> {
        if &self.spec == spec {
            Ok(())
        } else {
            Err(CheckpointError::SpecMismatch)
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.schema_version != SCHEMA_VERSION {
            return Err(CheckpointError::Version(ck.schema_version));
        }
        ck.to_complex()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}
