//! Pinhole camera model shared by every residual block.
//!
//! Camera frame convention: x right, y down, z forward (optical axis).
//! With an upright camera, gravity points towards +y in this frame.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point2D = Vector2<f64>;
pub type Point3D = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("point has non-positive depth z = {z}")]
    NonPositiveDepth { z: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Distortion-free pinhole intrinsics: focal length and principal point in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Focal length in pixels.
    pub f: f64,
    /// Principal point (c_x, c_y) in pixels.
    pub c: Point2D,
    /// Image size (width, height) in pixels, used for validation and defaults.
    pub image_size: Option<(f64, f64)>,
}

impl CameraIntrinsics {
    pub fn new(f: f64, cx: f64, cy: f64) -> Result<Self, CameraError> {
        let k = Self {
            f,
            c: Vector2::new(cx, cy),
            image_size: None,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn with_image_size(mut self, width: f64, height: f64) -> Self {
        self.image_size = Some((width, height));
        self
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.f.is_finite() && self.f > 0.0) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "focal length must be positive and finite, got {}",
                self.f
            )));
        }
        if !(self.c.x.is_finite() && self.c.y.is_finite()) {
            return Err(CameraError::InvalidIntrinsics(
                "principal point must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Projects a camera-frame 3D point to pixel coordinates.
pub fn project(p: &Point3D, k: &CameraIntrinsics) -> Result<Point2D, CameraError> {
    if !(p.z > 0.0) {
        return Err(CameraError::NonPositiveDepth { z: p.z });
    }
    Ok(Vector2::new(
        k.f * p.x / p.z + k.c.x,
        k.f * p.y / p.z + k.c.y,
    ))
}

/// Projection for a focal length that is itself an unknown of the solve.
/// Same model as [`project`], with `f` supplied separately.
pub fn project_with_focal(p: &Point3D, f: f64, c: &Point2D) -> Result<Point2D, CameraError> {
    if !(p.z > 0.0) {
        return Err(CameraError::NonPositiveDepth { z: p.z });
    }
    Ok(Vector2::new(f * p.x / p.z + c.x, f * p.y / p.z + c.y))
}

/// Jacobian of the projection w.r.t. the 3D point, rows (du, dv), columns (dX, dY, dZ).
/// Caller guarantees z > 0.
pub fn projection_jacobian_point(p: &Point3D, f: f64) -> nalgebra::Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    nalgebra::Matrix2x3::new(
        f * iz,
        0.0,
        -f * p.x * iz * iz,
        0.0,
        f * iz,
        -f * p.y * iz * iz,
    )
}

/// Derivative of the projection w.r.t. the focal length.
pub fn projection_jacobian_focal(p: &Point3D) -> Point2D {
    Vector2::new(p.x / p.z, p.y / p.z)
}

/// Unit ray through pixel `q`, i.e. normalized ((q_x - c_x)/f, (q_y - c_y)/f, 1).
/// `depth * backproject_ray(project(p)) / ray.z` recovers any `p` with z > 0.
pub fn backproject_ray(q: &Point2D, k: &CameraIntrinsics) -> Point3D {
    let d = Vector3::new((q.x - k.c.x) / k.f, (q.y - k.c.y) / k.f, 1.0);
    d / d.norm()
}

/// Point at depth `z` along the pixel's viewing ray (z component equals `z` exactly).
pub fn backproject_at_depth(q: &Point2D, k: &CameraIntrinsics, z: f64) -> Point3D {
    Vector3::new((q.x - k.c.x) / k.f * z, (q.y - k.c.y) / k.f * z, z)
}
