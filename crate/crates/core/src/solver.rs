//! The multi-hypothesis depth solver: 20 candidate depths per object — 16
//! from decoupled keypoint constraints, 1 direct, 3 from vertical-line
//! heights — plus the coupled least-squares (PnP) baseline.
//!
//! Each keypoint constraint relates an object-frame point `(xo, yo, zo)` and
//! its observed pixel to the center depth. With `a = xo*sin(yaw) - zo*cos(yaw)`
//! and normalized pixel coordinates, the column constraint reads
//!
//! ```text
//! (u - u_c) * z = a*u + xo*cos(yaw) + zo*sin(yaw)
//! ```
//!
//! and the row constraint
//!
//! ```text
//! (v - v_c) * z = a*v + yo
//! ```
//!
//! so each of the 8 box vertices yields two independent depths. Denominators
//! below [`EPS_NORMALIZED`] (and pixel heights below [`EPS_PIXEL_HEIGHT`])
//! are treated as degenerate: the estimate is marked invalid rather than
//! clamped, since a near-zero denominator amplifies observation noise
//! without bound. Non-positive solved depths are invalid as well.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{normalize_pixel, CameraIntrinsics, NormalizedPixel, Pixel};
use crate::cuboid::{box_vertices_object_frame, project_box, Box3D, Dimensions, ObjectKeypoints, VerticalHeights};
use crate::error::{Error, Result};

/// Degeneracy threshold for keypoint-constraint denominators, in normalized
/// pixel units.
pub const EPS_NORMALIZED: f64 = 1e-6;

/// Degeneracy threshold for pixel heights, in pixels.
pub const EPS_PIXEL_HEIGHT: f64 = 0.5;

/// Number of candidate depths produced per object.
pub const NUM_DEPTHS: usize = 20;

/// The three depth-solving strategy families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyFamily {
    /// Direct depth regression ("E").
    #[serde(rename = "E")]
    Direct,
    /// Depth from physical and pixel height ("H").
    #[serde(rename = "H")]
    Height,
    /// Depth from decoupled keypoint constraints ("K").
    #[serde(rename = "K")]
    Keypoint,
}

impl StrategyFamily {
    pub fn letter(self) -> char {
        match self {
            StrategyFamily::Direct => 'E',
            StrategyFamily::Height => 'H',
            StrategyFamily::Keypoint => 'K',
        }
    }
}

/// Provenance tag of a candidate depth. The 20 sources have a fixed order
/// (see [`DepthSource::index`]) so experiment configurations can reference
/// strategies by stable index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DepthSource {
    /// Direct depth passthrough.
    Direct,
    /// Center vertical line height.
    HeightCenter,
    /// Average over the diagonal corner-line pair (0, 2).
    HeightCorner02,
    /// Average over the diagonal corner-line pair (1, 3).
    HeightCorner13,
    /// Column constraint of vertex `i` (0..8).
    KeypointU(usize),
    /// Row constraint of vertex `i` (0..8).
    KeypointV(usize),
}

impl DepthSource {
    /// Fixed order: direct, the three heights, the 8 column constraints,
    /// then the 8 row constraints.
    pub fn index(self) -> usize {
        match self {
            DepthSource::Direct => 0,
            DepthSource::HeightCenter => 1,
            DepthSource::HeightCorner02 => 2,
            DepthSource::HeightCorner13 => 3,
            DepthSource::KeypointU(i) => 4 + i,
            DepthSource::KeypointV(i) => 12 + i,
        }
    }

    pub fn from_index(idx: usize) -> Option<Self> {
        match idx {
            0 => Some(DepthSource::Direct),
            1 => Some(DepthSource::HeightCenter),
            2 => Some(DepthSource::HeightCorner02),
            3 => Some(DepthSource::HeightCorner13),
            4..=11 => Some(DepthSource::KeypointU(idx - 4)),
            12..=19 => Some(DepthSource::KeypointV(idx - 12)),
            _ => None,
        }
    }

    /// All 20 sources in index order.
    pub fn all() -> [DepthSource; NUM_DEPTHS] {
        let mut out = [DepthSource::Direct; NUM_DEPTHS];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = DepthSource::from_index(i).unwrap();
        }
        out
    }

    pub fn family(self) -> StrategyFamily {
        match self {
            DepthSource::Direct => StrategyFamily::Direct,
            DepthSource::HeightCenter
            | DepthSource::HeightCorner02
            | DepthSource::HeightCorner13 => StrategyFamily::Height,
            DepthSource::KeypointU(_) | DepthSource::KeypointV(_) => StrategyFamily::Keypoint,
        }
    }
}

impl std::fmt::Display for DepthSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DepthSource::Direct => write!(f, "direct"),
            DepthSource::HeightCenter => write!(f, "h_center"),
            DepthSource::HeightCorner02 => write!(f, "h_corner02"),
            DepthSource::HeightCorner13 => write!(f, "h_corner13"),
            DepthSource::KeypointU(i) => write!(f, "kp_u{i}"),
            DepthSource::KeypointV(i) => write!(f, "kp_v{i}"),
        }
    }
}

/// Reported standard deviations of the observed quantities.
///
/// `dims` holds per-dimension sigmas in `(h, w, l)` order so corruption of a
/// single dimension can be reflected honestly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationSigmas {
    /// Projected-center pixel error (pixels).
    pub center: f64,
    /// Keypoint pixel error (pixels).
    pub keypoint: f64,
    /// Vertical-line pixel-height error (pixels).
    pub height: f64,
    /// Dimension errors `(h, w, l)` (meters).
    pub dims: [f64; 3],
    /// Yaw error (radians).
    pub yaw: f64,
    /// Direct depth error (meters, absolute).
    pub direct_depth: f64,
}

impl ObservationSigmas {
    pub fn zero() -> Self {
        Self {
            center: 0.0,
            keypoint: 0.0,
            height: 0.0,
            dims: [0.0; 3],
            yaw: 0.0,
            direct_depth: 0.0,
        }
    }
}

/// The per-object quantities a detector would supply: projected center,
/// keypoints, pixel heights, dimensions, yaw, a direct depth, and the
/// reported standard deviation of each quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectObservation {
    pub center_px: Pixel,
    pub keypoints: ObjectKeypoints,
    pub heights: VerticalHeights,
    pub dims: Dimensions,
    pub yaw: f64,
    pub direct_depth: f64,
    pub sigmas: ObservationSigmas,
    /// Optional per-estimate sigmas, indexed by [`DepthSource::index`].
    /// When present they override the sigma-assignment policy.
    #[serde(default)]
    pub depth_sigmas: Option<[f64; NUM_DEPTHS]>,
}

impl ObjectObservation {
    /// The exact (noise-free) observation of a box: every quantity computed
    /// from the projection geometry, all sigmas zero.
    pub fn exact(b: &Box3D, k: &CameraIntrinsics) -> Result<Self> {
        let (keypoints, heights) = project_box(b, k)?;
        Ok(Self {
            center_px: keypoints.center_3d_projected,
            keypoints,
            heights,
            dims: b.dims,
            yaw: b.yaw,
            direct_depth: b.center.z,
            sigmas: ObservationSigmas::zero(),
            depth_sigmas: None,
        })
    }
}

/// One candidate depth. `valid` implies a finite positive value and sigma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthEstimate {
    pub value: f64,
    pub sigma: f64,
    pub source: DepthSource,
    pub valid: bool,
}

impl DepthEstimate {
    fn invalid(source: DepthSource) -> Self {
        Self {
            value: 0.0,
            sigma: 0.0,
            source,
            valid: false,
        }
    }
}

fn keypoint_coefficient(vertex_obj: &Vector3<f64>, theta: f64) -> f64 {
    vertex_obj.x * theta.sin() - vertex_obj.z * theta.cos()
}

/// Depth from the column constraint of one keypoint. `None` when the
/// denominator `|u - u_c|` is degenerate; the returned depth may still be
/// non-positive (the caller decides validity).
pub fn depth_from_keypoint_u(
    kp: NormalizedPixel,
    center: NormalizedPixel,
    vertex_obj: &Vector3<f64>,
    theta: f64,
) -> Option<f64> {
    let den = kp.u - center.u;
    if den.abs() < EPS_NORMALIZED {
        return None;
    }
    let a = keypoint_coefficient(vertex_obj, theta);
    let num = a * kp.u + vertex_obj.x * theta.cos() + vertex_obj.z * theta.sin();
    Some(num / den)
}

/// Depth from the row constraint of one keypoint. `None` when `|v - v_c|`
/// is degenerate.
pub fn depth_from_keypoint_v(
    kp: NormalizedPixel,
    center: NormalizedPixel,
    vertex_obj: &Vector3<f64>,
    theta: f64,
) -> Option<f64> {
    let den = kp.v - center.v;
    if den.abs() < EPS_NORMALIZED {
        return None;
    }
    let a = keypoint_coefficient(vertex_obj, theta);
    Some((a * kp.v + vertex_obj.y) / den)
}

/// Depth from a physical height and its pixel height: `z = fy * h / h_px`.
/// `None` when the pixel height is degenerate.
pub fn depth_from_height(h_phys: f64, h_pix: f64, fy: f64) -> Option<f64> {
    if h_pix < EPS_PIXEL_HEIGHT {
        return None;
    }
    Some(fy * h_phys / h_pix)
}

/// Average of the two depths implied by an opposite corner-line pair. Exact
/// at any yaw for a noiseless box, by the diagonal depth-sum identity.
pub fn depth_from_corner_pair(h_phys: f64, h_pix_a: f64, h_pix_b: f64, fy: f64) -> Option<f64> {
    let za = depth_from_height(h_phys, h_pix_a, fy)?;
    let zb = depth_from_height(h_phys, h_pix_b, fy)?;
    Some((za + zb) / 2.0)
}

/// Solve all 20 candidate depths for one observation.
///
/// The output always has exactly 20 entries in fixed source order; degenerate
/// or non-positive solutions carry `valid = false`. Sigmas come from
/// `obs.depth_sigmas` when present, otherwise every estimate gets a unit
/// sigma (uniform weights) until a sigma policy overwrites it — see
/// [`crate::sim::SigmaAssigner`].
pub fn solve_all(obs: &ObjectObservation, k: &CameraIntrinsics) -> [DepthEstimate; NUM_DEPTHS] {
    let center_n = normalize_pixel(obs.center_px, k);
    let verts_obj = box_vertices_object_frame(&obs.dims);

    let mut raw = [None::<f64>; NUM_DEPTHS];
    raw[DepthSource::Direct.index()] = Some(obs.direct_depth);
    raw[DepthSource::HeightCenter.index()] =
        depth_from_height(obs.dims.h, obs.heights.center, k.fy);
    raw[DepthSource::HeightCorner02.index()] = depth_from_corner_pair(
        obs.dims.h,
        obs.heights.corners[0],
        obs.heights.corners[2],
        k.fy,
    );
    raw[DepthSource::HeightCorner13.index()] = depth_from_corner_pair(
        obs.dims.h,
        obs.heights.corners[1],
        obs.heights.corners[3],
        k.fy,
    );
    for i in 0..8 {
        let kp_n = normalize_pixel(obs.keypoints.vertices[i], k);
        raw[DepthSource::KeypointU(i).index()] =
            depth_from_keypoint_u(kp_n, center_n, &verts_obj[i], obs.yaw);
        raw[DepthSource::KeypointV(i).index()] =
            depth_from_keypoint_v(kp_n, center_n, &verts_obj[i], obs.yaw);
    }

    let mut out = [DepthEstimate::invalid(DepthSource::Direct); NUM_DEPTHS];
    for (idx, slot) in out.iter_mut().enumerate() {
        let source = DepthSource::from_index(idx).unwrap();
        let sigma = match &obs.depth_sigmas {
            Some(s) => s[idx],
            None => 1.0,
        };
        *slot = match raw[idx] {
            Some(z) if z > 0.0 && z.is_finite() && sigma > 0.0 && sigma.is_finite() => {
                DepthEstimate {
                    value: z,
                    sigma,
                    source,
                    valid: true,
                }
            }
            _ => DepthEstimate::invalid(source),
        };
    }
    out
}

/// Solve the full translation `(x, y, z)` from keypoint correspondences by
/// stacking the coupled constraints and minimizing the squared residual.
///
/// Each correspondence `(pixel, object-frame point)` contributes the rows
/// `(-1, 0, u) . T = u*a + xo*cos + zo*sin` and `(0, -1, v) . T = v*a + yo`.
/// The stack is reduced to its 3x3 normal equations and solved through a
/// symmetric eigendecomposition, which doubles as the rank check. At least
/// two correspondences are required; a rank-deficient (or hopelessly
/// ill-conditioned) stack is an error.
pub fn pnp_least_squares(
    correspondences: &[(Pixel, Vector3<f64>)],
    theta: f64,
    k: &CameraIntrinsics,
) -> Result<Vector3<f64>> {
    let n = correspondences.len();
    if n < 2 {
        return Err(Error::DegeneratePnp(format!(
            "need at least 2 keypoints, got {n}"
        )));
    }
    let (sin_t, cos_t) = theta.sin_cos();
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for (px, p_obj) in correspondences {
        let np = normalize_pixel(*px, k);
        let coeff = p_obj.x * sin_t - p_obj.z * cos_t;
        let rows = [
            (
                Vector3::new(-1.0, 0.0, np.u),
                np.u * coeff + p_obj.x * cos_t + p_obj.z * sin_t,
            ),
            (Vector3::new(0.0, -1.0, np.v), np.v * coeff + p_obj.y),
        ];
        for (row, rhs) in rows {
            ata += row * row.transpose();
            atb += row * rhs;
        }
    }

    let eig = ata.symmetric_eigen();
    let l_max = eig.eigenvalues.max();
    let l_min = eig.eigenvalues.min();
    // Eigenvalues of the normal matrix are squared singular values; this
    // cuts off at a condition number of 1e6 on the stacked system.
    if !(l_min > l_max * 1e-12) {
        return Err(Error::DegeneratePnp(format!(
            "stacked system is rank deficient (normal-matrix eigenvalues {:?})",
            eig.eigenvalues.as_slice()
        )));
    }
    let inv_scaled = eig.eigenvectors.transpose() * atb;
    let sol = eig.eigenvectors * inv_scaled.component_div(&eig.eigenvalues);
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(700.0, 700.0, 600.0, 200.0).unwrap()
    }

    fn sample_box() -> Box3D {
        Box3D::new(
            Vector3::new(0.0, 0.0, 10.0),
            Dimensions::new(2.0, 2.0, 4.0).unwrap(),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn keypoint_u_hand_evaluation() {
        // Vertex (2, 1, 1) on a box centered at (0, 0, 10), zero yaw:
        // the vertex sits at (2, 1, 11), so u = 2/11 and the coefficient
        // a = -zo = -1. Expected depth: (-2/11 + 2) / (2/11) = 10.
        let kp = NormalizedPixel {
            u: 2.0 / 11.0,
            v: 1.0 / 11.0,
        };
        let center = NormalizedPixel { u: 0.0, v: 0.0 };
        let z = depth_from_keypoint_u(kp, center, &Vector3::new(2.0, 1.0, 1.0), 0.0).unwrap();
        assert_relative_eq!(z, 10.0, max_relative = 1e-12);
    }

    #[test]
    fn keypoint_v_hand_evaluation() {
        let kp = NormalizedPixel {
            u: 2.0 / 11.0,
            v: 1.0 / 11.0,
        };
        let center = NormalizedPixel { u: 0.0, v: 0.0 };
        let z = depth_from_keypoint_v(kp, center, &Vector3::new(2.0, 1.0, 1.0), 0.0).unwrap();
        assert_relative_eq!(z, 10.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_denominator_is_degenerate() {
        let c = NormalizedPixel { u: 0.1, v: 0.2 };
        assert!(depth_from_keypoint_u(c, c, &Vector3::new(0.0, 1.0, 0.0), 0.3).is_none());
        assert!(depth_from_keypoint_v(c, c, &Vector3::new(0.0, 0.0, 0.0), 0.3).is_none());
    }

    #[test]
    fn height_arithmetic() {
        assert_relative_eq!(depth_from_height(2.0, 140.0, 700.0).unwrap(), 10.0);
        assert_relative_eq!(depth_from_height(1.5, 70.0, 700.0).unwrap(), 15.0);
    }

    #[test]
    fn doubling_pixel_height_halves_depth() {
        let z1 = depth_from_height(2.0, 100.0, 700.0).unwrap();
        let z2 = depth_from_height(2.0, 200.0, 700.0).unwrap();
        assert_relative_eq!(z1, 2.0 * z2, max_relative = 1e-15);
    }

    #[test]
    fn tiny_pixel_height_is_degenerate() {
        assert!(depth_from_height(2.0, 0.4, 700.0).is_none());
        assert!(depth_from_height(2.0, -3.0, 700.0).is_none());
    }

    #[test]
    fn corner_pair_equal_heights_match_single_line() {
        let pair = depth_from_corner_pair(2.0, 140.0, 140.0, 700.0).unwrap();
        assert_relative_eq!(pair, depth_from_height(2.0, 140.0, 700.0).unwrap());
    }

    #[test]
    fn corner_pair_symmetric_about_center_depth() {
        // Lines at depths 8 and 12 average to 10.
        let z = depth_from_corner_pair(2.0, 175.0, 1400.0 / 12.0, 700.0).unwrap();
        assert_relative_eq!(z, 10.0, max_relative = 1e-12);
    }

    #[test]
    fn corner_pair_degenerate_if_either_line_degenerate() {
        assert!(depth_from_corner_pair(2.0, 0.1, 140.0, 700.0).is_none());
        assert!(depth_from_corner_pair(2.0, 140.0, 0.1, 700.0).is_none());
    }

    #[test]
    fn solve_all_has_fixed_length_and_order() {
        let obs = ObjectObservation::exact(&sample_box(), &k()).unwrap();
        let estimates = solve_all(&obs, &k());
        assert_eq!(estimates.len(), NUM_DEPTHS);
        for (i, e) in estimates.iter().enumerate() {
            assert_eq!(e.source.index(), i);
        }
    }

    #[test]
    fn noiseless_observation_recovers_depth_everywhere() {
        let b = Box3D::new(
            Vector3::new(1.5, -0.3, 17.0),
            Dimensions::new(1.6, 1.8, 4.2).unwrap(),
            0.9,
        )
        .unwrap();
        let obs = ObjectObservation::exact(&b, &k()).unwrap();
        for e in solve_all(&obs, &k()).iter().filter(|e| e.valid) {
            assert_relative_eq!(e.value, b.center.z, max_relative = 1e-9);
        }
    }

    #[test]
    fn center_column_degeneracy_only_hits_that_estimate() {
        // Zero yaw, on-axis box: no vertex column coincides with the center
        // column, so an artificial coincidence must be injected.
        let b = sample_box();
        let mut obs = ObjectObservation::exact(&b, &k()).unwrap();
        let baseline = solve_all(&obs, &k());
        obs.keypoints.vertices[3].u = obs.center_px.u;
        let estimates = solve_all(&obs, &k());
        let idx = DepthSource::KeypointU(3).index();
        assert!(!estimates[idx].valid);
        for (i, (e, b)) in estimates.iter().zip(baseline.iter()).enumerate() {
            if i != idx && b.valid {
                assert!(e.valid, "estimate {i} should be unaffected");
            }
        }
    }

    #[test]
    fn pnp_recovers_translation_from_eight_vertices() {
        let b = Box3D::new(
            Vector3::new(-2.0, 0.7, 23.0),
            Dimensions::new(1.5, 1.7, 3.9).unwrap(),
            -1.3,
        )
        .unwrap();
        let obs = ObjectObservation::exact(&b, &k()).unwrap();
        let verts = box_vertices_object_frame(&b.dims);
        let corr: Vec<_> = obs
            .keypoints
            .vertices
            .iter()
            .copied()
            .zip(verts.iter().copied())
            .collect();
        let t = pnp_least_squares(&corr, b.yaw, &k()).unwrap();
        assert_relative_eq!(t, b.center, max_relative = 1e-8);
    }

    #[test]
    fn pnp_exact_with_two_keypoints() {
        let b = sample_box();
        let obs = ObjectObservation::exact(&b, &k()).unwrap();
        let verts = box_vertices_object_frame(&b.dims);
        let corr = vec![
            (obs.keypoints.vertices[0], verts[0]),
            (obs.keypoints.vertices[6], verts[6]),
        ];
        let t = pnp_least_squares(&corr, b.yaw, &k()).unwrap();
        assert!((t - b.center).norm() < 1e-8 * b.center.norm());
    }

    #[test]
    fn pnp_single_keypoint_is_rank_deficient() {
        let b = sample_box();
        let obs = ObjectObservation::exact(&b, &k()).unwrap();
        let verts = box_vertices_object_frame(&b.dims);
        let corr = vec![(obs.keypoints.vertices[0], verts[0])];
        assert!(matches!(
            pnp_least_squares(&corr, b.yaw, &k()),
            Err(Error::DegeneratePnp(_))
        ));
    }

    #[test]
    fn observation_supplied_sigmas_override_the_default() {
        let mut obs = ObjectObservation::exact(&sample_box(), &k()).unwrap();
        let mut sigmas = [0.5; NUM_DEPTHS];
        sigmas[3] = 2.5;
        sigmas[7] = 0.0; // non-positive sigma invalidates that estimate
        obs.depth_sigmas = Some(sigmas);
        let estimates = solve_all(&obs, &k());
        assert_eq!(estimates[0].sigma, 0.5);
        assert_eq!(estimates[3].sigma, 2.5);
        assert!(!estimates[7].valid);
    }

    #[test]
    fn source_index_round_trip() {
        for i in 0..NUM_DEPTHS {
            assert_eq!(DepthSource::from_index(i).unwrap().index(), i);
        }
        assert!(DepthSource::from_index(NUM_DEPTHS).is_none());
    }

    #[test]
    fn source_families() {
        assert_eq!(DepthSource::Direct.family(), StrategyFamily::Direct);
        assert_eq!(DepthSource::HeightCenter.family(), StrategyFamily::Height);
        assert_eq!(DepthSource::KeypointU(5).family(), StrategyFamily::Keypoint);
        let n_by_family = |f: StrategyFamily| {
            DepthSource::all()
                .iter()
                .filter(|s| s.family() == f)
                .count()
        };
        assert_eq!(n_by_family(StrategyFamily::Direct), 1);
        assert_eq!(n_by_family(StrategyFamily::Height), 3);
        assert_eq!(n_by_family(StrategyFamily::Keypoint), 16);
    }
}
