//! Ideal pinhole camera model: projection, pixel normalization, and center
//! back-projection.
//!
//! Axis convention used throughout the crate (KITTI camera frame): x right,
//! y down, z forward. Pixels are continuous real values; nothing in the
//! pipeline rounds to an integer grid, and projected pixels may fall outside
//! the physical image bounds.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics: focal lengths and principal point, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cu: f64,
    pub cv: f64,
}

impl CameraIntrinsics {
    /// Build intrinsics, rejecting non-positive focal lengths.
    pub fn new(fx: f64, fy: f64, cu: f64, cv: f64) -> Result<Self> {
        if !(fx > 0.0) || !(fy > 0.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx = {fx}, fy = {fy})"
            )));
        }
        Ok(Self { fx, fy, cu, cv })
    }
}

/// A continuous pixel position (column `u`, row `v`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// A pixel with the principal point removed and focal length divided out.
///
/// For a point at depth `z`, the normalized coordinates equal `x/z` and `y/z`
/// in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPixel {
    pub u: f64,
    pub v: f64,
}

/// Project a camera-frame point to the image plane.
///
/// `u = fx * x / z + cu`, `v = fy * y / z + cv`. The point must be strictly
/// in front of the camera.
pub fn project_point(p_cam: &Vector3<f64>, k: &CameraIntrinsics) -> Result<Pixel> {
    let z = p_cam.z;
    if !(z > 0.0) {
        return Err(Error::BehindCamera { z });
    }
    Ok(Pixel {
        u: k.fx * p_cam.x / z + k.cu,
        v: k.fy * p_cam.y / z + k.cv,
    })
}

/// Remove the principal point and divide out the focal lengths.
pub fn normalize_pixel(p: Pixel, k: &CameraIntrinsics) -> NormalizedPixel {
    NormalizedPixel {
        u: (p.u - k.cu) / k.fx,
        v: (p.v - k.cv) / k.fy,
    }
}

/// Recover the camera-frame `(x, y)` of a point from its projected pixel and
/// a known depth `z > 0`.
pub fn backproject_center(center: Pixel, z: f64, k: &CameraIntrinsics) -> Result<(f64, f64)> {
    if !(z > 0.0) {
        return Err(Error::NonPositiveDepth { z });
    }
    Ok((
        (center.u - k.cu) * z / k.fx,
        (center.v - k.cv) * z / k.fy,
    ))
}
