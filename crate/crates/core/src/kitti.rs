//! KITTI 3D-detection annotation parsing and perfect-annotation round trips
//! through the solver.
//!
//! Label format: one object per line, 15 whitespace-separated fields (16
//! with an optional score):
//!
//! ```text
//! type truncated occluded alpha  bbox(4)  h w l  x y z  rotation_y [score]
//! ```
//!
//! Dimensions are `(h, w, l)` and the location is the *bottom center* of the
//! box in the camera frame. Calibration files carry `KEY: v0 v1 ... v11`
//! lines; intrinsics come from the `P2` projection matrix as
//! `fx = P2[0][0]`, `fy = P2[1][1]`, `cu = P2[0][2]`, `cv = P2[1][2]`. The
//! small stereo-baseline translation in `P2[0][3]`/`P2[1][3]` is dropped —
//! a known approximation, since the solver works with a pure intrinsic
//! matrix.

use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::cuboid::{Box3D, Dimensions};
use crate::error::{Error, Result};
use crate::fusion::select_and_combine;
use crate::solver::{solve_all, ObjectObservation, NUM_DEPTHS};
use nalgebra::Vector3;

/// One parsed KITTI label line. Sentinel values (DontCare entries) are
/// preserved verbatim; see [`label_to_box`] for localizability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KittiLabel {
    pub category: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    /// 2D box `(left, top, right, bottom)` in pixels.
    pub bbox2d: [f64; 4],
    /// `(h, w, l)` in meters.
    pub dims: (f64, f64, f64),
    /// Bottom-center `(x, y, z)` in meters, camera frame.
    pub location: (f64, f64, f64),
    pub rotation_y: f64,
    pub score: Option<f64>,
}

/// A KITTI calibration file, reduced to the left color camera's projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KittiCalib {
    /// Row-major 3x4 projection matrix.
    pub p2: [[f64; 4]; 3],
}

impl KittiCalib {
    /// Intrinsics extracted from P2 (translation column dropped).
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.p2[0][0], self.p2[1][1], self.p2[0][2], self.p2[1][2])
    }
}

fn parse_field<T: std::str::FromStr>(
    fields: &[&str],
    idx: usize,
    line: usize,
) -> Result<T> {
    fields[idx].parse().map_err(|_| Error::LabelParse {
        line,
        field: idx,
        message: format!("cannot parse {:?}", fields[idx]),
    })
}

/// Parse one label line. `line_no` is used only for error context.
pub fn parse_label_line(line: &str, line_no: usize) -> Result<KittiLabel> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 15 && fields.len() != 16 {
        return Err(Error::LabelParse {
            line: line_no,
            field: fields.len(),
            message: format!("expected 15 or 16 fields, got {}", fields.len()),
        });
    }
    let num = |idx: usize| parse_field::<f64>(&fields, idx, line_no);
    Ok(KittiLabel {
        category: fields[0].to_string(),
        truncated: num(1)?,
        occluded: parse_field(&fields, 2, line_no)?,
        alpha: num(3)?,
        bbox2d: [num(4)?, num(5)?, num(6)?, num(7)?],
        dims: (num(8)?, num(9)?, num(10)?),
        location: (num(11)?, num(12)?, num(13)?),
        rotation_y: num(14)?,
        score: if fields.len() == 16 {
            Some(num(15)?)
        } else {
            None
        },
    })
}

/// Parse a whole label file. Every non-empty line either yields a label or
/// fails the parse with its 1-based line number; nothing is dropped
/// silently.
pub fn parse_labels(text: &str) -> Result<Vec<KittiLabel>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_label_line(l, i + 1))
        .collect()
}

/// Format a label back into the file format at the conventional two-decimal
/// precision. Parse/format round trips preserve values to that precision.
pub fn format_label(label: &KittiLabel) -> String {
    let mut s = format!(
        "{} {:.2} {} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2}",
        label.category,
        label.truncated,
        label.occluded,
        label.alpha,
        label.bbox2d[0],
        label.bbox2d[1],
        label.bbox2d[2],
        label.bbox2d[3],
        label.dims.0,
        label.dims.1,
        label.dims.2,
        label.location.0,
        label.location.1,
        label.location.2,
        label.rotation_y,
    );
    if let Some(score) = label.score {
        s.push_str(&format!(" {score:.2}"));
    }
    s
}

/// Parse a calibration file: finds the `P2:` line and reads 12 reals.
/// Unrelated lines (P0, R0_rect, Tr_velo_to_cam, ...) are ignored.
pub fn parse_calib(text: &str) -> Result<KittiCalib> {
    for line in text.lines() {
        let Some(rest) = line.strip_prefix("P2:") else {
            continue;
        };
        let values: Vec<&str> = rest.split_whitespace().collect();
        if values.len() != 12 {
            return Err(Error::CalibParse(format!(
                "P2 must have 12 values, got {}",
                values.len()
            )));
        }
        let mut p2 = [[0.0; 4]; 3];
        for (i, v) in values.iter().enumerate() {
            p2[i / 4][i % 4] = v.parse().map_err(|_| {
                Error::CalibParse(format!("cannot parse P2 value {i} ({v:?})"))
            })?;
        }
        let calib = KittiCalib { p2 };
        if !(calib.p2[0][0] > 0.0 && calib.p2[1][1] > 0.0) {
            return Err(Error::CalibParse("P2 focal lengths must be positive".into()));
        }
        return Ok(calib);
    }
    Err(Error::CalibParse("no P2 line found".into()))
}

/// Convert a label to a solver box: the bottom-center location moves up by
/// `h/2` to the geometric center (`y` points down, so up is `-h/2`).
/// Sentinel labels (non-positive dims or depth) are not localizable.
pub fn label_to_box(label: &KittiLabel) -> Result<Box3D> {
    let (h, w, l) = label.dims;
    let (x, y, z) = label.location;
    if !(h > 0.0 && w > 0.0 && l > 0.0) {
        return Err(Error::NonLocalizable(format!(
            "sentinel dimensions ({h}, {w}, {l})"
        )));
    }
    if !(z > 0.0) {
        return Err(Error::NonLocalizable(format!("sentinel or behind-camera depth {z}")));
    }
    Box3D::new(
        Vector3::new(x, y - h / 2.0, z),
        Dimensions::new(h, w, l)?,
        label.rotation_y,
    )
}

/// Inverse of [`label_to_box`] for the geometric fields: bottom-center
/// location, `(h, w, l)`, and `rotation_y`.
pub fn box_to_label_fields(b: &Box3D) -> ((f64, f64, f64), (f64, f64, f64), f64) {
    (
        (b.center.x, b.center.y + b.dims.h / 2.0, b.center.z),
        (b.dims.h, b.dims.w, b.dims.l),
        b.yaw,
    )
}

/// Per-label result of a perfect-annotation round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundtripRecord {
    /// Index of the label within the input list.
    pub index: usize,
    pub category: String,
    pub z_true: f64,
    pub combined_depth: f64,
    pub abs_error: f64,
    /// Per-source absolute error, indexed by source; `None` where the
    /// estimate was degenerate.
    pub per_source_error: [Option<f64>; NUM_DEPTHS],
    pub n_valid: usize,
    pub iterations: usize,
}

/// Outcome of [`roundtrip_eval`]: one record per localizable label plus the
/// count of skipped (sentinel) labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundtripOutcome {
    pub records: Vec<RoundtripRecord>,
    pub skipped: usize,
}

/// For every localizable label: rebuild the box, synthesize its exact
/// observation, solve all candidate depths, fuse, and report the errors.
/// Non-localizable labels (DontCare and friends) are skipped and counted.
pub fn roundtrip_eval(labels: &[KittiLabel], calib: &KittiCalib) -> Result<RoundtripOutcome> {
    let k = calib.intrinsics()?;
    let mut records = Vec::new();
    let mut skipped = 0usize;
    for (index, label) in labels.iter().enumerate() {
        let b = match label_to_box(label) {
            Ok(b) => b,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let obs = ObjectObservation::exact(&b, &k)?;
        let estimates = solve_all(&obs, &k);
        let fused = select_and_combine(&estimates)?;
        let z_true = b.center.z;
        let mut per_source_error = [None; NUM_DEPTHS];
        for e in estimates.iter().filter(|e| e.valid) {
            per_source_error[e.source.index()] = Some((e.value - z_true).abs());
        }
        records.push(RoundtripRecord {
            index,
            category: label.category.clone(),
            z_true,
            combined_depth: fused.combined_depth,
            abs_error: (fused.combined_depth - z_true).abs(),
            per_source_error,
            n_valid: estimates.iter().filter(|e| e.valid).count(),
            iterations: fused.iterations,
        });
    }
    Ok(RoundtripOutcome { records, skipped })
}
