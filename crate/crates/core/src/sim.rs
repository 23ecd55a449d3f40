//! Deterministic synthetic scenes standing in for a trained detector:
//! ground-truth boxes, exact observations, configurable Gaussian noise,
//! sigma-assignment policies, and assumption-collapse injection.
//!
//! Everything is seeded. Per-object generator streams are derived from
//! `(master seed, stream tag, object index)` with a splitmix-style mix, so
//! results are independent of iteration order and the same configuration
//! always reproduces the same scene bit for bit.
//!
//! Scene configurations are read from JSON (see [`SceneConfig`]); generated
//! scenes serialize to JSON with [`scene_to_json`] for fixture reuse.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::camera::{normalize_pixel, CameraIntrinsics, Pixel};
use crate::cuboid::{box_vertices_object_frame, Box3D, Dimensions};
use crate::error::{Error, Result};
use crate::solver::{
    depth_from_height, depth_from_keypoint_u, depth_from_keypoint_v, DepthEstimate, DepthSource,
    ObjectObservation, ObservationSigmas, NUM_DEPTHS,
};

/// Vertical position of the ground plane in the camera frame (y points
/// down). Boxes rest on it: the center sits at `GROUND_PLANE_Y - h/2`.
pub const GROUND_PLANE_Y: f64 = 1.65;

/// Attempts per object before scene generation gives up on an impossible
/// configuration.
pub const RESAMPLE_BUDGET: usize = 100;

/// Step for central finite differences in the propagated-sigma policy, in
/// each input's natural unit (pixels, meters, radians).
pub const FD_STEP: f64 = 1e-4;

/// Lower bound on assigned sigmas; keeps zero-noise configurations usable
/// by the fusion stage, which requires positive variances.
pub const SIGMA_FLOOR: f64 = 1e-9;

/// Objects in the seeded calibration batch used by the calibrated sigma
/// policy.
pub const CALIBRATION_BATCH: usize = 1000;

const STREAM_GENERATE: u64 = 0;
const STREAM_PERTURB: u64 = 1;
const STREAM_COLLAPSE: u64 = 2;
const STREAM_CALIBRATE: u64 = 3;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derive an independent sub-seed from a master seed, a stream tag, and an
/// element index.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(
        master
            ^ stream.wrapping_mul(0xA076_1D64_78BD_642F)
            ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15),
    )
}

/// Inclusive sampling ranges for the three box dimensions, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimRanges {
    pub h: (f64, f64),
    pub w: (f64, f64),
    pub l: (f64, f64),
}

/// A synthetic scene specification. All ranges are `(min, max)` with
/// `min <= max`; a degenerate range pins the quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub n_objects: usize,
    /// Center depth range, meters.
    pub depth_range: (f64, f64),
    pub dim_ranges: DimRanges,
    /// Yaw range, radians.
    pub yaw_range: (f64, f64),
    /// Lateral (x) placement range, meters. Vertical placement is not
    /// sampled: boxes rest on the ground plane at [`GROUND_PLANE_Y`].
    pub lateral_range: (f64, f64),
    pub intrinsics: CameraIntrinsics,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_objects: 200,
            depth_range: (4.0, 60.0),
            dim_ranges: DimRanges {
                h: (1.2, 2.2),
                w: (1.5, 2.0),
                l: (3.0, 5.0),
            },
            yaw_range: (-std::f64::consts::PI, std::f64::consts::PI),
            lateral_range: (-10.0, 10.0),
            intrinsics: CameraIntrinsics {
                fx: 700.0,
                fy: 700.0,
                cu: 600.0,
                cv: 200.0,
            },
            seed: 17,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_objects == 0 {
            return Err(Error::InvalidConfig("n_objects must be >= 1".into()));
        }
        let ranges = [
            ("depth_range", self.depth_range),
            ("dim_ranges.h", self.dim_ranges.h),
            ("dim_ranges.w", self.dim_ranges.w),
            ("dim_ranges.l", self.dim_ranges.l),
            ("yaw_range", self.yaw_range),
            ("lateral_range", self.lateral_range),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be a finite (min, max) pair with min <= max, got ({lo}, {hi})"
                )));
            }
        }
        for (name, (lo, _)) in [
            ("depth_range", self.depth_range),
            ("dim_ranges.h", self.dim_ranges.h),
            ("dim_ranges.w", self.dim_ranges.w),
            ("dim_ranges.l", self.dim_ranges.l),
        ] {
            if !(lo > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} minimum must be > 0")));
            }
        }
        if !(self.intrinsics.fx > 0.0 && self.intrinsics.fy > 0.0) {
            return Err(Error::InvalidConfig("intrinsics focal lengths must be > 0".into()));
        }
        Ok(())
    }
}

/// Sigma-assignment policy for the 20 candidate depths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// First-order delta method: central finite differences of each depth
    /// formula with respect to each noisy input.
    Propagated,
    /// Per-source RMSE measured on a separate seeded calibration batch.
    Calibrated,
    /// The same fixed sigma for every estimate (uniform weights).
    Fixed(f64),
}

/// Gaussian observation-noise model plus the sigma-reporting policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Projected-center pixel noise (pixels).
    pub std_center: f64,
    /// Keypoint pixel noise (pixels).
    pub std_keypoint: f64,
    /// Vertical-line pixel-height noise (pixels).
    pub std_height: f64,
    /// Dimension noise (meters), applied to h, w, l independently.
    pub std_dims: f64,
    /// Yaw noise (radians).
    pub std_yaw: f64,
    /// Direct-depth noise: meters, or a fraction of the true depth when
    /// `direct_depth_relative` is set.
    pub std_direct_depth: f64,
    pub direct_depth_relative: bool,
    pub sigma_mode: SigmaMode,
    /// Multiplier on every reported sigma; 1.0 means well calibrated.
    pub miscalibration_factor: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            std_center: 0.5,
            std_keypoint: 1.0,
            std_height: 1.5,
            std_dims: 0.08,
            std_yaw: 0.03,
            std_direct_depth: 0.08,
            direct_depth_relative: true,
            sigma_mode: SigmaMode::Propagated,
            miscalibration_factor: 1.0,
        }
    }
}

impl NoiseModel {
    /// A model with every std zero (exact observations pass through).
    pub fn noiseless() -> Self {
        Self {
            std_center: 0.0,
            std_keypoint: 0.0,
            std_height: 0.0,
            std_dims: 0.0,
            std_yaw: 0.0,
            std_direct_depth: 0.0,
            direct_depth_relative: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stds = [
            self.std_center,
            self.std_keypoint,
            self.std_height,
            self.std_dims,
            self.std_yaw,
            self.std_direct_depth,
        ];
        if stds.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig("noise stds must be finite and >= 0".into()));
        }
        if !(self.miscalibration_factor > 0.0) {
            return Err(Error::InvalidConfig("miscalibration_factor must be > 0".into()));
        }
        if let SigmaMode::Fixed(s) = self.sigma_mode {
            if !(s > 0.0) {
                return Err(Error::InvalidConfig("fixed sigma must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// A ground-truth box together with the observation the solver consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub truth: Box3D,
    pub obs: ObjectObservation,
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Generate a scene of boxes sampled uniformly from the configured ranges,
/// each paired with its exact observation. Boxes that are not fully
/// projectable are resampled, up to [`RESAMPLE_BUDGET`] attempts per object.
pub fn generate_scene(cfg: &SceneConfig) -> Result<Vec<SceneObject>> {
    cfg.validate()?;
    let k = cfg.intrinsics;
    let mut out = Vec::with_capacity(cfg.n_objects);
    for i in 0..cfg.n_objects {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_GENERATE, i as u64));
        let mut placed = false;
        for _ in 0..RESAMPLE_BUDGET {
            let z = sample_range(&mut rng, cfg.depth_range);
            let x = sample_range(&mut rng, cfg.lateral_range);
            let h = sample_range(&mut rng, cfg.dim_ranges.h);
            let w = sample_range(&mut rng, cfg.dim_ranges.w);
            let l = sample_range(&mut rng, cfg.dim_ranges.l);
            let yaw = sample_range(&mut rng, cfg.yaw_range);
            let y = GROUND_PLANE_Y - h / 2.0;
            let truth = Box3D {
                center: Vector3::new(x, y, z),
                dims: Dimensions { h, w, l },
                yaw,
            };
            if let Ok(obs) = ObjectObservation::exact(&truth, &k) {
                out.push(SceneObject { truth, obs });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::ResampleBudgetExhausted {
                index: i,
                budget: RESAMPLE_BUDGET,
            });
        }
    }
    Ok(out)
}

/// Add zero-mean Gaussian noise to every observed quantity and record the
/// corresponding reported sigmas.
///
/// The draw order is fixed (center, vertices, face centers, heights, dims,
/// yaw, direct depth), and a standard-normal variate is consumed for every
/// slot even at zero std, so a given `(observation, seed)` pair always maps
/// to the same output regardless of which stds are enabled.
pub fn perturb(obs: &ObjectObservation, noise: &NoiseModel, seed: u64) -> ObjectObservation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |std: f64| -> f64 {
        let n: f64 = rng.sample(StandardNormal);
        n * std
    };

    let mut out = obs.clone();
    out.center_px.u += draw(noise.std_center);
    out.center_px.v += draw(noise.std_center);
    for v in out.keypoints.vertices.iter_mut() {
        v.u += draw(noise.std_keypoint);
        v.v += draw(noise.std_keypoint);
    }
    out.keypoints.top_center.u += draw(noise.std_keypoint);
    out.keypoints.top_center.v += draw(noise.std_keypoint);
    out.keypoints.bottom_center.u += draw(noise.std_keypoint);
    out.keypoints.bottom_center.v += draw(noise.std_keypoint);
    // The projected-center keypoint is the same estimate as center_px.
    out.keypoints.center_3d_projected = out.center_px;

    for c in out.heights.corners.iter_mut() {
        *c += draw(noise.std_height);
    }
    out.heights.center += draw(noise.std_height);

    out.dims.h = (out.dims.h + draw(noise.std_dims)).max(1e-3);
    out.dims.w = (out.dims.w + draw(noise.std_dims)).max(1e-3);
    out.dims.l = (out.dims.l + draw(noise.std_dims)).max(1e-3);
    out.yaw += draw(noise.std_yaw);

    let sigma_direct = if noise.direct_depth_relative {
        noise.std_direct_depth * obs.direct_depth
    } else {
        noise.std_direct_depth
    };
    out.direct_depth += draw(sigma_direct);

    out.sigmas = ObservationSigmas {
        center: noise.std_center,
        keypoint: noise.std_keypoint,
        height: noise.std_height,
        dims: [noise.std_dims; 3],
        yaw: noise.std_yaw,
        direct_depth: sigma_direct,
    };
    out
}

/// Perturb every object in a scene with per-object seeds derived from the
/// master seed. Ground-truth boxes are left untouched.
pub fn perturb_scene(scene: &[SceneObject], noise: &NoiseModel, master_seed: u64) -> Vec<SceneObject> {
    scene
        .iter()
        .enumerate()
        .map(|(i, so)| SceneObject {
            truth: so.truth,
            obs: perturb(&so.obs, noise, derive_seed(master_seed, STREAM_PERTURB, i as u64)),
        })
        .collect()
}

/// Serialize a scene to pretty JSON for fixture reuse.
pub fn scene_to_json(scene: &[SceneObject]) -> String {
    serde_json::to_string_pretty(scene).expect("scene serialization cannot fail")
}

/// Load a scene previously written by [`scene_to_json`].
pub fn scene_from_json(text: &str) -> Result<Vec<SceneObject>> {
    serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("scene JSON: {e}")))
}

// ---------------------------------------------------------------------------
// Sigma assignment
// ---------------------------------------------------------------------------

fn central_diff<F: Fn(f64) -> Option<f64>>(f: F, x0: f64) -> Option<f64> {
    match (f(x0 + FD_STEP), f(x0 - FD_STEP)) {
        (Some(hi), Some(lo)) => Some((hi - lo) / (2.0 * FD_STEP)),
        (Some(hi), None) => f(x0).map(|mid| (hi - mid) / FD_STEP),
        (None, Some(lo)) => f(x0).map(|mid| (mid - lo) / FD_STEP),
        (None, None) => None,
    }
}

#[derive(Default)]
struct DeltaVar(f64);

impl DeltaVar {
    fn add<F: Fn(f64) -> Option<f64>>(&mut self, std: f64, x0: f64, f: F) {
        if std > 0.0 {
            if let Some(d) = central_diff(f, x0) {
                self.0 += (d * std) * (d * std);
            }
        }
    }

    fn sigma(self) -> f64 {
        self.0.sqrt()
    }
}

/// Assigns per-estimate sigmas according to the configured policy.
///
/// For the calibrated policy the constructor runs a seeded batch of
/// [`CALIBRATION_BATCH`] objects drawn from the same scene statistics
/// (separate seed stream) and records per-source RMSE against ground truth.
pub struct SigmaAssigner {
    noise: NoiseModel,
    intrinsics: CameraIntrinsics,
    calibrated: Option<[Option<f64>; NUM_DEPTHS]>,
}

impl SigmaAssigner {
    pub fn new(noise: &NoiseModel, cfg: &SceneConfig) -> Result<Self> {
        noise.validate()?;
        let calibrated = match noise.sigma_mode {
            SigmaMode::Calibrated => Some(Self::calibrate(noise, cfg)?),
            _ => None,
        };
        Ok(Self {
            noise: *noise,
            intrinsics: cfg.intrinsics,
            calibrated,
        })
    }

    fn calibrate(noise: &NoiseModel, cfg: &SceneConfig) -> Result<[Option<f64>; NUM_DEPTHS]> {
        let mut cal_cfg = cfg.clone();
        cal_cfg.n_objects = CALIBRATION_BATCH;
        cal_cfg.seed = derive_seed(cfg.seed, STREAM_CALIBRATE, 0);
        let scene = generate_scene(&cal_cfg)?;
        let noisy = perturb_scene(&scene, noise, cal_cfg.seed);

        let mut sq_sums = [0.0; NUM_DEPTHS];
        let mut counts = [0usize; NUM_DEPTHS];
        for so in &noisy {
            let estimates = crate::solver::solve_all(&so.obs, &cal_cfg.intrinsics);
            for e in estimates.iter().filter(|e| e.valid) {
                let err = e.value - so.truth.center.z;
                sq_sums[e.source.index()] += err * err;
                counts[e.source.index()] += 1;
            }
        }
        let mut table = [None; NUM_DEPTHS];
        for i in 0..NUM_DEPTHS {
            if counts[i] > 0 {
                table[i] = Some((sq_sums[i] / counts[i] as f64).sqrt());
            }
        }
        Ok(table)
    }

    /// Overwrite the sigma of every valid estimate according to the policy.
    ///
    /// Observations carrying explicit `depth_sigmas` are left untouched —
    /// caller-supplied per-estimate sigmas take precedence. Estimates whose
    /// sigma cannot be determined are marked invalid; invalid estimates get
    /// no sigma.
    pub fn assign(&self, obs: &ObjectObservation, estimates: &mut [DepthEstimate; NUM_DEPTHS]) {
        if obs.depth_sigmas.is_some() {
            return;
        }
        for e in estimates.iter_mut() {
            if !e.valid {
                e.sigma = 0.0;
                continue;
            }
            let raw = match self.noise.sigma_mode {
                SigmaMode::Fixed(s) => Some(s),
                SigmaMode::Calibrated => self.calibrated.as_ref().expect("calibrated table")
                    [e.source.index()],
                SigmaMode::Propagated => self.propagated_sigma(obs, e.source),
            };
            match raw {
                Some(r) if r.is_finite() => {
                    e.sigma = self.noise.miscalibration_factor * r.max(SIGMA_FLOOR);
                    if !(e.sigma > 0.0 && e.sigma.is_finite()) {
                        e.valid = false;
                        e.sigma = 0.0;
                    }
                }
                _ => {
                    e.valid = false;
                    e.sigma = 0.0;
                }
            }
        }
    }

    fn propagated_sigma(&self, obs: &ObjectObservation, source: DepthSource) -> Option<f64> {
        let k = &self.intrinsics;
        let s = &obs.sigmas;
        let d = obs.dims;
        match source {
            // The direct estimate is an identity map of its input.
            DepthSource::Direct => Some(s.direct_depth),
            DepthSource::HeightCenter => {
                let hp = obs.heights.center;
                let mut acc = DeltaVar::default();
                acc.add(s.dims[0], d.h, |x| depth_from_height(x, hp, k.fy));
                acc.add(s.height, hp, |x| depth_from_height(d.h, x, k.fy));
                Some(acc.sigma())
            }
            DepthSource::HeightCorner02 | DepthSource::HeightCorner13 => {
                let (ia, ib) = if source == DepthSource::HeightCorner02 {
                    (0, 2)
                } else {
                    (1, 3)
                };
                let (ha, hb) = (obs.heights.corners[ia], obs.heights.corners[ib]);
                let pair = |h: f64, a: f64, b: f64| -> Option<f64> {
                    Some((depth_from_height(h, a, k.fy)? + depth_from_height(h, b, k.fy)?) / 2.0)
                };
                let mut acc = DeltaVar::default();
                acc.add(s.dims[0], d.h, |x| pair(x, ha, hb));
                acc.add(s.height, ha, |x| pair(d.h, x, hb));
                acc.add(s.height, hb, |x| pair(d.h, ha, x));
                Some(acc.sigma())
            }
            DepthSource::KeypointU(i) => {
                let kp = obs.keypoints.vertices[i];
                let c = obs.center_px;
                let eval = |kp_u: f64, c_u: f64, w: f64, l: f64, yaw: f64| -> Option<f64> {
                    let vertex = box_vertices_object_frame(&Dimensions { h: d.h, w, l })[i];
                    let kpn = normalize_pixel(Pixel::new(kp_u, kp.v), k);
                    let cn = normalize_pixel(Pixel::new(c_u, c.v), k);
                    depth_from_keypoint_u(kpn, cn, &vertex, yaw)
                };
                let mut acc = DeltaVar::default();
                acc.add(s.keypoint, kp.u, |x| eval(x, c.u, d.w, d.l, obs.yaw));
                acc.add(s.center, c.u, |x| eval(kp.u, x, d.w, d.l, obs.yaw));
                acc.add(s.dims[1], d.w, |x| eval(kp.u, c.u, x, d.l, obs.yaw));
                acc.add(s.dims[2], d.l, |x| eval(kp.u, c.u, d.w, x, obs.yaw));
                acc.add(s.yaw, obs.yaw, |x| eval(kp.u, c.u, d.w, d.l, x));
                Some(acc.sigma())
            }
            DepthSource::KeypointV(i) => {
                let kp = obs.keypoints.vertices[i];
                let c = obs.center_px;
                let eval = |kp_v: f64, c_v: f64, h: f64, w: f64, l: f64, yaw: f64| -> Option<f64> {
                    let vertex = box_vertices_object_frame(&Dimensions { h, w, l })[i];
                    let kpn = normalize_pixel(Pixel::new(kp.u, kp_v), k);
                    let cn = normalize_pixel(Pixel::new(c.u, c_v), k);
                    depth_from_keypoint_v(kpn, cn, &vertex, yaw)
                };
                let mut acc = DeltaVar::default();
                acc.add(s.keypoint, kp.v, |x| eval(x, c.v, d.h, d.w, d.l, obs.yaw));
                acc.add(s.center, c.v, |x| eval(kp.v, x, d.h, d.w, d.l, obs.yaw));
                acc.add(s.dims[0], d.h, |x| eval(kp.v, c.v, x, d.w, d.l, obs.yaw));
                acc.add(s.dims[1], d.w, |x| eval(kp.v, c.v, d.h, x, d.l, obs.yaw));
                acc.add(s.dims[2], d.l, |x| eval(kp.v, c.v, d.h, d.w, x, obs.yaw));
                acc.add(s.yaw, obs.yaw, |x| eval(kp.v, c.v, d.h, d.w, d.l, x));
                Some(acc.sigma())
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Assumption collapse
// ---------------------------------------------------------------------------

/// Which observed quantity a collapse corrupts. Unknown tags in a JSON
/// config fail at parse time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollapseTarget {
    DirectDepth,
    PhysicalHeight,
    Keypoints,
    PixelHeights,
    CenterPixel,
    Yaw,
}

impl CollapseTarget {
    /// The depth sources whose value depends on the corrupted quantity.
    pub fn affected_sources(self) -> Vec<DepthSource> {
        let heights = [
            DepthSource::HeightCenter,
            DepthSource::HeightCorner02,
            DepthSource::HeightCorner13,
        ];
        let keypoints_u = (0..8).map(DepthSource::KeypointU);
        let keypoints_v = (0..8).map(DepthSource::KeypointV);
        match self {
            CollapseTarget::DirectDepth => vec![DepthSource::Direct],
            CollapseTarget::PixelHeights => heights.to_vec(),
            // Physical height enters the three height depths and, through
            // the vertical half-extent, the row constraints.
            CollapseTarget::PhysicalHeight => {
                heights.iter().copied().chain(keypoints_v).collect()
            }
            CollapseTarget::Keypoints | CollapseTarget::CenterPixel | CollapseTarget::Yaw => {
                keypoints_u.chain(keypoints_v).collect()
            }
        }
    }
}

impl std::fmt::Display for CollapseTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CollapseTarget::DirectDepth => "direct_depth",
            CollapseTarget::PhysicalHeight => "physical_height",
            CollapseTarget::Keypoints => "keypoints",
            CollapseTarget::PixelHeights => "pixel_heights",
            CollapseTarget::CenterPixel => "center_pixel",
            CollapseTarget::Yaw => "yaw",
        };
        f.write_str(s)
    }
}

/// How the targeted quantity is corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    /// Multiply by the factor.
    Scale(f64),
    /// Add the offset (in the quantity's natural unit).
    Offset(f64),
}

impl std::fmt::Display for Corruption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Corruption::Scale(m) => write!(f, "scale:{m}"),
            Corruption::Offset(o) => write!(f, "offset:{o}"),
        }
    }
}

impl Corruption {
    fn apply(self, v: f64) -> f64 {
        match self {
            Corruption::Scale(m) => v * m,
            Corruption::Offset(o) => v + o,
        }
    }
}

/// A deterministic assumption-collapse: corrupt one quantity on a fraction
/// of the objects. With `honest_sigma` the reported sigma of the corrupted
/// quantity is inflated by the actual corruption magnitude (in quadrature),
/// the way a calibrated uncertainty would account for it; otherwise the
/// sigma is left unchanged and silently over-trusts the corrupted value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseSpec {
    pub target: CollapseTarget,
    pub corruption: Corruption,
    /// Share of objects affected, in `[0, 1]`.
    pub fraction: f64,
    pub honest_sigma: bool,
}

impl CollapseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::InvalidConfig(format!(
                "collapse fraction {} not in [0, 1]",
                self.fraction
            )));
        }
        Ok(())
    }
}

fn inflate(sigma: f64, delta: f64) -> f64 {
    (sigma * sigma + delta * delta).sqrt()
}

/// Corrupt the selected fraction of objects in place and return the affected
/// indices (sorted). Selection is a seeded shuffle, so the same
/// `(scene, spec, seed)` always corrupts the same objects.
pub fn inject_collapse(
    scene: &mut [SceneObject],
    spec: &CollapseSpec,
    seed: u64,
) -> Result<Vec<usize>> {
    spec.validate()?;
    let n = scene.len();
    let n_affected = (spec.fraction * n as f64).round() as usize;
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_COLLAPSE, 0));
    use rand::seq::SliceRandom;
    indices.shuffle(&mut rng);
    let mut affected: Vec<usize> = indices.into_iter().take(n_affected).collect();
    affected.sort_unstable();

    for &i in &affected {
        let obs = &mut scene[i].obs;
        match spec.target {
            CollapseTarget::DirectDepth => {
                let old = obs.direct_depth;
                obs.direct_depth = spec.corruption.apply(old);
                if spec.honest_sigma {
                    obs.sigmas.direct_depth =
                        inflate(obs.sigmas.direct_depth, obs.direct_depth - old);
                }
            }
            CollapseTarget::PhysicalHeight => {
                let old = obs.dims.h;
                obs.dims.h = spec.corruption.apply(old).max(1e-3);
                if spec.honest_sigma {
                    obs.sigmas.dims[0] = inflate(obs.sigmas.dims[0], obs.dims.h - old);
                }
            }
            CollapseTarget::Keypoints => {
                let mut sq = 0.0;
                let mut count = 0usize;
                {
                    let mut corrupt = |p: &mut Pixel| {
                        for c in [&mut p.u, &mut p.v] {
                            let old = *c;
                            *c = spec.corruption.apply(old);
                            sq += (*c - old) * (*c - old);
                            count += 1;
                        }
                    };
                    for v in obs.keypoints.vertices.iter_mut() {
                        corrupt(v);
                    }
                    corrupt(&mut obs.keypoints.top_center);
                    corrupt(&mut obs.keypoints.bottom_center);
                }
                if spec.honest_sigma && count > 0 {
                    obs.sigmas.keypoint =
                        inflate(obs.sigmas.keypoint, (sq / count as f64).sqrt());
                }
            }
            CollapseTarget::PixelHeights => {
                let mut sq = 0.0;
                for h in obs
                    .heights
                    .corners
                    .iter_mut()
                    .chain(std::iter::once(&mut obs.heights.center))
                {
                    let old = *h;
                    *h = spec.corruption.apply(old);
                    sq += (*h - old) * (*h - old);
                }
                if spec.honest_sigma {
                    obs.sigmas.height = inflate(obs.sigmas.height, (sq / 5.0).sqrt());
                }
            }
            CollapseTarget::CenterPixel => {
                let old = obs.center_px;
                obs.center_px.u = spec.corruption.apply(old.u);
                obs.center_px.v = spec.corruption.apply(old.v);
                obs.keypoints.center_3d_projected = obs.center_px;
                if spec.honest_sigma {
                    let du = obs.center_px.u - old.u;
                    let dv = obs.center_px.v - old.v;
                    obs.sigmas.center =
                        inflate(obs.sigmas.center, ((du * du + dv * dv) / 2.0).sqrt());
                }
            }
            CollapseTarget::Yaw => {
                let old = obs.yaw;
                obs.yaw = spec.corruption.apply(old);
                if spec.honest_sigma {
                    obs.sigmas.yaw = inflate(obs.sigmas.yaw, obs.yaw - old);
                }
            }
        }
    }
    Ok(affected)
}
