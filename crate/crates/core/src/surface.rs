//! Loss over the plane through three parameter vectors.
//!
//! Grid point `(r_u, r_v)` is the model `c + r_u·u + r_v·v`. Rows of the loss
//! matrix follow `r_v`, columns follow `r_u`, both running from `−R` to `R`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::ParamVector;
use crate::linalg;
use crate::netcore::{self, Batch, ModelSpec, NetError};

pub const DEFAULT_MARGIN: f64 = 1.2;
pub const DEFAULT_RESOLUTION: usize = 41;
pub const SCHEMA_VERSION: u32 = 1;
/// Relative length below which the second direction counts as collinear.
const COLLINEAR_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SurfaceError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("the three points are collinear")]
    Collinear,
    #[error("points have {0} and {1} coordinates")]
    DimensionMismatch(usize, usize),
    #[error("resolution must be at least 2, got {0}")]
    Resolution(usize),
    #[error("margin must be positive and finite")]
    Margin,
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("json output: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SurfaceError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneBasis {
    pub c: ParamVector,
    pub u: ParamVector,
    pub v: ParamVector,
    /// Grid coordinates span `[−range, range]` on both axes.
    pub range: f64,
}

impl PlaneBasis {
    pub fn point(&self, r_u: f64, r_v: f64) -> ParamVector {
        ParamVector(
            self.c
                .iter()
                .zip(self.u.iter().zip(self.v.iter()))
                .map(|(c, (u, v))| c + r_u * u + r_v * v)
                .collect(),
        )
    }

    /// Grid coordinates along either axis.
    pub fn axis(&self, resolution: usize) -> Vec<f64> {
        let step = 2.0 * self.range / (resolution - 1) as f64;
        (0..resolution)
            .map(|i| {
                if i + 1 == resolution {
                    self.range
                } else {
                    -self.range + step * i as f64
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub r_u: f64,
    pub r_v: f64,
    pub residual: f64,
}

pub fn plane_basis(p0: &[f64], p1: &[f64], p2: &[f64], margin: f64) -> Result<PlaneBasis> {
    if p1.len() != p0.len() || p2.len() != p0.len() {
        return Err(SurfaceError::DimensionMismatch(
            p0.len(),
            p1.len().max(p2.len()),
        ));
    }
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(SurfaceError::Margin);
    }
    let d1: Vec<f64> = p1.iter().zip(p0).map(|(a, b)| a - b).collect();
    let n1 = linalg::norm(&d1);
    if n1 == 0.0 {
        return Err(SurfaceError::Collinear);
    }
    let u: Vec<f64> = d1.iter().map(|x| x / n1).collect();
    let mut v: Vec<f64> = p2.iter().zip(p0).map(|(a, b)| a - b).collect();
    let n2_raw = linalg::norm(&v);
    linalg::reject(&mut v, std::slice::from_ref(&u));
    let n2 = linalg::norm(&v);
    if n2 <= COLLINEAR_TOL * n1.max(n2_raw) {
        return Err(SurfaceError::Collinear);
    }
    v.iter_mut().for_each(|x| *x /= n2);
    let c: Vec<f64> = (0..p0.len())
        .map(|i| (p0[i] + p1[i] + p2[i]) / 3.0)
        .collect();
    let mut basis = PlaneBasis {
        c: ParamVector(c),
        u: ParamVector(u),
        v: ParamVector(v),
        range: 1.0,
    };
    let extent = [p0, p1, p2]
        .iter()
        .map(|p| {
            let q = project(&basis, p);
            q.r_u.abs().max(q.r_v.abs())
        })
        .fold(0.0, f64::max);
    basis.range = margin * extent;
    Ok(basis)
}

pub fn project(basis: &PlaneBasis, p: &[f64]) -> Projection {
    let d: Vec<f64> = p.iter().zip(basis.c.iter()).map(|(a, b)| a - b).collect();
    let r_u = linalg::dot(&d, &basis.u);
    let r_v = linalg::dot(&d, &basis.v);
    let residual = d
        .iter()
        .zip(basis.u.iter().zip(basis.v.iter()))
        .map(|(x, (u, v))| (x - r_u * u - r_v * v).powi(2))
        .sum::<f64>()
        .sqrt();
    Projection { r_u, r_v, residual }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub label: String,
    pub r_u: f64,
    pub r_v: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub basis: PlaneBasis,
    pub resolution: usize,
    /// Row-major, `resolution × resolution`, row index follows `r_v`.
    pub losses: Vec<f64>,
    pub markers: Vec<Marker>,
}

impl SurfaceGrid {
    pub fn loss_at(&self, row: usize, col: usize) -> f64 {
        self.losses[row * self.resolution + col]
    }

    pub fn add_marker(&mut self, label: impl Into<String>, p: &[f64]) {
        let q = project(&self.basis, p);
        self.markers.push(Marker {
            label: label.into(),
            r_u: q.r_u,
            r_v: q.r_v,
            residual: q.residual,
        });
    }

    /// Loss matrix with an `r_v\r_u` corner, the `r_u` axis across the first
    /// row and the `r_v` axis down the first column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let axis = self.basis.axis(self.resolution);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["r_v\\r_u".to_string()];
        header.extend(axis.iter().map(|x| format!("{x:?}")));
        w.write_record(&header)?;
        for (row, r_v) in axis.iter().enumerate() {
            let mut rec = vec![format!("{r_v:?}")];
            rec.extend((0..self.resolution).map(|col| format!("{:?}", self.loss_at(row, col))));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn sidecar(&self, grid_file: &str) -> SurfaceSidecar {
        let finite = self.losses.iter().copied().filter(|l| l.is_finite());
        SurfaceSidecar {
            schema_version: SCHEMA_VERSION,
            kind: "surface".into(),
            grid_file: grid_file.into(),
            resolution: self.resolution,
            range: self.basis.range,
            dim: self.basis.c.len(),
            loss_min: finite.clone().fold(f64::INFINITY, f64::min),
            loss_max: finite.fold(f64::NEG_INFINITY, f64::max),
            markers: self.markers.clone(),
            basis: self.basis.clone(),
        }
    }
}

/// Metadata written next to the grid CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSidecar {
    pub schema_version: u32,
    pub kind: String,
    pub grid_file: String,
    pub resolution: usize,
    pub range: f64,
    pub dim: usize,
    pub loss_min: f64,
    pub loss_max: f64,
    pub markers: Vec<Marker>,
    pub basis: PlaneBasis,
}

/// Full-dataset loss at every grid point.
pub fn grid_losses(
    basis: &PlaneBasis,
    resolution: usize,
    spec: &ModelSpec,
    dataset: &Batch,
) -> Result<SurfaceGrid> {
    if resolution < 2 {
        return Err(SurfaceError::Resolution(resolution));
    }
    let axis = basis.axis(resolution);
    let mut losses = Vec::with_capacity(resolution * resolution);
    for &r_v in &axis {
        for &r_u in &axis {
            losses.push(netcore::loss(spec, &basis.point(r_u, r_v), dataset)?);
        }
    }
    Ok(SurfaceGrid {
        basis: basis.clone(),
        resolution,
        losses,
        markers: Vec::new(),
    })
}
