//! Points, tangent coordinates and retractions for the two manifolds the
//! attitude problem lives on: the unit quaternions `Q` and Euclidean `Rᵐ`.
//!
//! Tangent vectors are carried as coordinates in an orthonormal frame. On
//! `Q` the frame at `q` is `E_i(q) = q · e_i` with `e_i` the pure basis
//! quaternions; on `Rᵐ` it is the standard basis. Ambient 4-vectors only
//! appear at the boundary with [`crate::quat`].

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::quat::{quat_exp, quat_log, Quaternion, Vec3};

/// Inner products with the base point above this are not tangent.
pub const TANGENT_TOL: f64 = 1e-6;

/// `R_q(v) = q · exp(v)` with `v` in frame coordinates at `q`.
pub fn retract_q(q: Quaternion, coords: Vec3) -> Quaternion {
    q * quat_exp(coords)
}

/// Frame coordinates at `q` of the tangent vector retracting onto `p`:
/// `log(q⁻¹ · p)`. Exactly inverts [`retract_q`] on `‖v‖ < π`.
pub fn inv_retract_q(q: Quaternion, p: Quaternion) -> Result<Vec3> {
    quat_log(q.conjugate() * p)
}

/// Coordinates of the ambient tangent vector `v` in the frame `q · e_i`.
pub fn frame_coords_q(q: Quaternion, v: Quaternion) -> Result<Vec3> {
    let inner = q.dot(v);
    if inner.abs() > TANGENT_TOL {
        return Err(Error::NotTangent { inner });
    }
    Ok((q.conjugate() * v).vector())
}

/// `Σ cⁱ E_i(q) = q · (0, c)`.
pub fn frame_reconstruct_q(q: Quaternion, coords: Vec3) -> Quaternion {
    q * Quaternion::pure(coords)
}

pub fn retract_euclidean(u: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
    if u.len() != xi.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: xi.len(),
        });
    }
    Ok(u.iter().zip(xi).map(|(a, b)| a + b).collect())
}

pub fn inv_retract_euclidean(u: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    if u.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: p.len(),
        });
    }
    Ok(p.iter().zip(u).map(|(a, b)| a - b).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum ManifoldPoint {
    Quaternion(Quaternion),
    Euclidean(DVector<f64>),
}

impl ManifoldPoint {
    pub fn dim(&self) -> usize {
        match self {
            ManifoldPoint::Quaternion(_) => 3,
            ManifoldPoint::Euclidean(v) => v.len(),
        }
    }

    pub fn retract(&self, coords: &DVector<f64>) -> Result<ManifoldPoint> {
        if coords.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: coords.len(),
            });
        }
        Ok(match self {
            ManifoldPoint::Quaternion(q) => {
                ManifoldPoint::Quaternion(retract_q(*q, Vec3::new(coords[0], coords[1], coords[2])))
            }
            ManifoldPoint::Euclidean(u) => ManifoldPoint::Euclidean(u + coords),
        })
    }

    pub fn inv_retract(&self, p: &ManifoldPoint) -> Result<DVector<f64>> {
        match (self, p) {
            (ManifoldPoint::Quaternion(q), ManifoldPoint::Quaternion(p)) => {
                let v = inv_retract_q(*q, *p)?;
                Ok(DVector::from_column_slice(v.as_slice()))
            }
            (ManifoldPoint::Euclidean(u), ManifoldPoint::Euclidean(p)) => {
                Ok(DVector::from_vec(inv_retract_euclidean(u.as_slice(), p.as_slice())?))
            }
            _ => Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: p.dim(),
            }),
        }
    }
}

/// A tangent vector given by its frame coordinates at `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentCoords {
    pub base: ManifoldPoint,
    pub coords: DVector<f64>,
}

impl TangentCoords {
    pub fn new(base: ManifoldPoint, coords: DVector<f64>) -> Result<Self> {
        if coords.len() != base.dim() {
            return Err(Error::DimensionMismatch {
                expected: base.dim(),
                got: coords.len(),
            });
        }
        Ok(TangentCoords { base, coords })
    }

    pub fn zero(base: ManifoldPoint) -> Self {
        let n = base.dim();
        TangentCoords {
            base,
            coords: DVector::zeros(n),
        }
    }
}

/// Element-wise retraction on a product manifold.
pub fn product_retract(
    traj: &[ManifoldPoint],
    perturbations: &[TangentCoords],
) -> Result<Vec<ManifoldPoint>> {
    if traj.len() != perturbations.len() {
        return Err(Error::DimensionMismatch {
            expected: traj.len(),
            got: perturbations.len(),
        });
    }
    traj.iter()
        .zip(perturbations)
        .enumerate()
        .map(|(index, (x, v))| {
            if *x != v.base {
                return Err(Error::BasePointMismatch { index });
            }
            x.retract(&v.coords)
        })
        .collect()
}
