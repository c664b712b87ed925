//! Virtual rigid body geometry.
//!
//! A formation is a base configuration of points `c_i` (zero centroid) mapped
//! into the world by `q_i = R(phi) diag(s) c_i + t`. Everything here is a pure
//! function of its inputs.

use nalgebra::{Matrix2, SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Default floor on the scale components.
pub const DEFAULT_SCALE_MIN: f64 = 1e-3;

/// Tolerance on the centroid of a recentered base configuration.
pub const CENTROID_TOLERANCE: f64 = 1e-9;

/// Condition number above which `J J^T` is treated as singular.
const MAX_GRAM_CONDITION: f64 = 1e12;

pub type Vec2 = Vector2<f64>;
pub type Vec5 = SVector<f64, 5>;
/// 2x5 Jacobian of a transformed point with respect to `(phi, s_x, s_y, t_x, t_y)`.
pub type JacobianMatrix = SMatrix<f64, 2, 5>;
pub type PseudoInverse = SMatrix<f64, 5, 2>;

/// Formation parameters `(phi, s_x, s_y, t_x, t_y)`.
///
/// `phi` is deliberately not wrapped to `[-pi, pi]` so that consensus can
/// average it as a plain real number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormationParams {
    pub phi: f64,
    pub scale: Vec2,
    pub translation: Vec2,
}

impl FormationParams {
    pub fn new(phi: f64, scale: Vec2, translation: Vec2) -> Result<Self, GeometryError> {
        Self::with_scale_min(phi, scale, translation, DEFAULT_SCALE_MIN)
    }

    pub fn with_scale_min(
        phi: f64,
        scale: Vec2,
        translation: Vec2,
        scale_min: f64,
    ) -> Result<Self, GeometryError> {
        let params = Self {
            phi,
            scale,
            translation,
        };
        if !params.as_vector().iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if scale.x <= scale_min || scale.y <= scale_min {
            return Err(GeometryError::ScaleBelowFloor {
                scale: [scale.x, scale.y],
                floor: scale_min,
            });
        }
        Ok(params)
    }

    /// Identity transform: no rotation, unit scale, no translation.
    pub fn identity() -> Self {
        Self {
            phi: 0.0,
            scale: Vec2::new(1.0, 1.0),
            translation: Vec2::zeros(),
        }
    }

    pub fn from_vector(v: &Vec5) -> Self {
        Self {
            phi: v[0],
            scale: Vec2::new(v[1], v[2]),
            translation: Vec2::new(v[3], v[4]),
        }
    }

    pub fn as_vector(&self) -> Vec5 {
        Vec5::from([
            self.phi,
            self.scale.x,
            self.scale.y,
            self.translation.x,
            self.translation.y,
        ])
    }

    pub fn rotation(&self) -> Matrix2<f64> {
        rotation(self.phi)
    }
}

impl Default for FormationParams {
    fn default() -> Self {
        Self::identity()
    }
}

pub fn rotation(phi: f64) -> Matrix2<f64> {
    let (sin, cos) = phi.sin_cos();
    Matrix2::new(cos, -sin, sin, cos)
}

/// Per-robot base points with zero centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseConfiguration {
    points: Vec<Vec2>,
}

impl BaseConfiguration {
    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Vec2 {
        self.points[index]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Shifts every point by the centroid so the configuration rotates about its
/// center.
pub fn recenter_base(points: &[Vec2]) -> Result<BaseConfiguration, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::EmptyConfiguration);
    }
    if !points.iter().all(|p| p.x.is_finite() && p.y.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let centroid = points.iter().sum::<Vec2>() / points.len() as f64;
    let shifted: Vec<Vec2> = points.iter().map(|p| p - centroid).collect();
    for (i, a) in shifted.iter().enumerate() {
        for (j, b) in shifted.iter().enumerate().skip(i + 1) {
            if a == b {
                return Err(GeometryError::DuplicatePoints {
                    first: i,
                    second: j,
                });
            }
        }
    }
    Ok(BaseConfiguration { points: shifted })
}

/// `R(phi) diag(s) c + t`.
pub fn transform_point(eta: &FormationParams, c: &Vec2) -> Vec2 {
    eta.rotation() * c.component_mul(&eta.scale) + eta.translation
}

/// Analytic Jacobian of [`transform_point`] with respect to the parameter
/// vector.
pub fn jacobian(eta: &FormationParams, c: &Vec2) -> JacobianMatrix {
    let (sin, cos) = eta.phi.sin_cos();
    let (sx, sy) = (eta.scale.x, eta.scale.y);
    JacobianMatrix::from_row_slice(&[
        -sin * sx * c.x - cos * sy * c.y,
        cos * c.x,
        -sin * c.y,
        1.0,
        0.0,
        cos * sx * c.x - sin * sy * c.y,
        sin * c.x,
        cos * c.y,
        0.0,
        1.0,
    ])
}

/// Right Moore-Penrose pseudo-inverse `J^T (J J^T)^-1`.
pub fn pseudo_inverse(j: &JacobianMatrix) -> Result<PseudoInverse, GeometryError> {
    let gram: Matrix2<f64> = j * j.transpose();
    // Closed-form 2x2 symmetric eigenvalues for the condition estimate.
    let half_trace = 0.5 * (gram.m11 + gram.m22);
    let det = gram.m11 * gram.m22 - gram.m12 * gram.m21;
    let gap = (half_trace * half_trace - det).max(0.0).sqrt();
    let (lo, hi) = (half_trace - gap, half_trace + gap);
    if !(lo > 0.0) || hi / lo > MAX_GRAM_CONDITION {
        return Err(GeometryError::DegenerateJacobian {
            condition: if lo > 0.0 { hi / lo } else { f64::INFINITY },
        });
    }
    let inv = Matrix2::new(gram.m22, -gram.m12, -gram.m21, gram.m11) / det;
    Ok(j.transpose() * inv)
}
