//! 3D cuboid geometry: object frame, yaw rotation, keypoint layout, and
//! vertical-line pixel heights.
//!
//! The object frame has its origin at the geometric center of the box (not
//! the KITTI bottom center — see [`crate::kitti::label_to_box`] for the
//! conversion). Roll and pitch are fixed at zero; orientation is a single
//! yaw rotation about the camera y axis.
//!
//! # Vertex index order
//!
//! The 8 vertices are indexed so that indices 0–3 lie on the bottom face
//! (`y = +h/2`; y points down) and 4–7 on the top face (`y = -h/2`), walking
//! the footprint rectangle in a fixed perimeter order:
//!
//! | perimeter index | x      | z      |
//! |-----------------|--------|--------|
//! | 0               | `+l/2` | `+w/2` |
//! | 1               | `+l/2` | `-w/2` |
//! | 2               | `-l/2` | `-w/2` |
//! | 3               | `-l/2` | `+w/2` |
//!
//! Vertex `i` and vertex `(i + 2) mod 4` within the same face are diagonal
//! partners, and corner vertical line `j` (j = 0..4) connects bottom vertex
//! `j` to top vertex `j + 4`, which share the same `(x, z)` footprint. The
//! diagonal line pairs are therefore (0, 2) and (1, 3); their camera-frame
//! depths sum to twice the center depth at any yaw.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{project_point, CameraIntrinsics, Pixel};
use crate::error::{Error, Result};

/// Box dimensions in meters: height, width, length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dimensions {
    pub h: f64,
    pub w: f64,
    pub l: f64,
}

impl Dimensions {
    pub fn new(h: f64, w: f64, l: f64) -> Result<Self> {
        if !(h > 0.0 && w > 0.0 && l > 0.0) {
            return Err(Error::InvalidBox(format!(
                "dimensions must be positive (h = {h}, w = {w}, l = {l})"
            )));
        }
        Ok(Self { h, w, l })
    }
}

/// A 3D cuboid in the camera frame: geometric center, dimensions, and yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    /// Geometric center `(x, y, z)` in meters, camera frame.
    pub center: Vector3<f64>,
    pub dims: Dimensions,
    /// Yaw angle in radians (rotation about the camera y axis).
    pub yaw: f64,
}

impl Box3D {
    pub fn new(center: Vector3<f64>, dims: Dimensions, yaw: f64) -> Result<Self> {
        if !(center.z > 0.0) {
            return Err(Error::InvalidBox(format!(
                "box center must be in front of the camera (z = {})",
                center.z
            )));
        }
        Ok(Self { center, dims, yaw })
    }
}

/// Rotation about the y axis by `theta`:
/// rows `(cos, 0, sin)`, `(0, 1, 0)`, `(-sin, 0, cos)`.
pub fn rotation_matrix(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// The 8 object-frame vertices of a box with the given dimensions, in the
/// documented index order (bottom face 0–3, top face 4–7).
pub fn box_vertices_object_frame(dims: &Dimensions) -> [Vector3<f64>; 8] {
    let (hx, hy, hz) = (dims.l / 2.0, dims.h / 2.0, dims.w / 2.0);
    // Footprint perimeter order for (x, z) signs.
    const PERIM: [(f64, f64); 4] = [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)];
    let mut out = [Vector3::zeros(); 8];
    for (j, &(sx, sz)) in PERIM.iter().enumerate() {
        out[j] = Vector3::new(sx * hx, hy, sz * hz); // bottom (y down: +h/2)
        out[j + 4] = Vector3::new(sx * hx, -hy, sz * hz); // top
    }
    out
}

/// Transform an object-frame point into the camera frame:
/// `P_cam = R(yaw) * P_obj + center`.
pub fn object_to_camera(p_obj: &Vector3<f64>, b: &Box3D) -> Vector3<f64> {
    rotation_matrix(b.yaw) * p_obj + b.center
}

/// The ten projected keypoints of a box plus its projected 3D center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectKeypoints {
    /// Projected vertices in the documented index order.
    pub vertices: [Pixel; 8],
    /// Projection of the top face center `(0, -h/2, 0)`.
    pub top_center: Pixel,
    /// Projection of the bottom face center `(0, +h/2, 0)`.
    pub bottom_center: Pixel,
    /// Projection of the geometric center.
    pub center_3d_projected: Pixel,
}

/// Pixel heights of the four corner vertical lines and the center line.
///
/// `corners[j]` is the height of corner line `j` (bottom vertex `j` to top
/// vertex `j + 4`); `center` is the height of the center vertical line.
/// Diagonal line pairs are `(corners[0], corners[2])` and
/// `(corners[1], corners[3])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerticalHeights {
    pub corners: [f64; 4],
    pub center: f64,
}

/// Project a box's keypoints and measure its vertical-line pixel heights.
///
/// Fails with [`Error::BoxNotProjectable`] if any vertex lies at or behind
/// the camera plane.
pub fn project_box(b: &Box3D, k: &CameraIntrinsics) -> Result<(ObjectKeypoints, VerticalHeights)> {
    let verts_obj = box_vertices_object_frame(&b.dims);
    let mut verts_px = [Pixel::new(0.0, 0.0); 8];
    for (i, v) in verts_obj.iter().enumerate() {
        let cam = object_to_camera(v, b);
        if !(cam.z > 0.0) {
            return Err(Error::BoxNotProjectable { index: i, z: cam.z });
        }
        verts_px[i] = project_point(&cam, k)?;
    }

    let hy = b.dims.h / 2.0;
    let top_center = project_point(&object_to_camera(&Vector3::new(0.0, -hy, 0.0), b), k)?;
    let bottom_center = project_point(&object_to_camera(&Vector3::new(0.0, hy, 0.0), b), k)?;
    let center_3d_projected = project_point(&b.center, k)?;

    let mut corners = [0.0; 4];
    for j in 0..4 {
        corners[j] = verts_px[j].v - verts_px[j + 4].v;
    }
    let heights = VerticalHeights {
        corners,
        center: bottom_center.v - top_center.v,
    };

    Ok((
        ObjectKeypoints {
            vertices: verts_px,
            top_center,
            bottom_center,
            center_3d_projected,
        },
        heights,
    ))
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Convert an observation angle `alpha` to the yaw angle, given the object's
/// lateral position `x` and depth `z > 0`: `yaw = alpha + atan2(x, z)`.
pub fn alpha_to_yaw(alpha: f64, x: f64, z: f64) -> f64 {
    wrap_angle(alpha + x.atan2(z))
}

/// Inverse of [`alpha_to_yaw`]: `alpha = yaw - atan2(x, z)`.
pub fn yaw_to_alpha(yaw: f64, x: f64, z: f64) -> f64 {
    wrap_angle(yaw - x.atan2(z))
}
