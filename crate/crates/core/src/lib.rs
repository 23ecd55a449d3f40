//! Network-free geometric core of diverse monocular depth estimation for 3D
//! object detection: a 20-way depth solving system, robust iterative
//! selection and inverse-variance fusion, 3D geometry confidence, a seeded
//! synthetic-scene simulator, a KITTI-annotation round-trip harness, and the
//! evaluation machinery behind the `multidepth` CLI.
//!
//! Conventions shared by every module: camera frame with x right, y down,
//! z forward; angles in radians; lengths in meters; pixels continuous.

// Guards are written `!(x > 0.0)` so NaN inputs fail them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod confidence;
pub mod cuboid;
mod error;
pub mod eval;
pub mod fusion;
pub mod kitti;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
