//! Metrics and the experiment harness: oracle selection, MAE, strategy
//! ablations, fusion-baseline comparisons, collapse-recovery statistics, and
//! deterministic CSV/JSON report emission.
//!
//! Report columns, in fixed order:
//! `subset, fusion_mode, mae_combined, mae_oracle, rejection_rate,
//! mean_iterations, collapse_recovery`. `rejection_rate` and
//! `mean_iterations` are only meaningful for the iterative mode and are 0
//! elsewhere; `collapse_recovery` is empty unless the row came from a
//! collapse experiment. Rows are computed over the objects that produced at
//! least one valid estimate within the row's subset.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fuse, select_and_combine};
use crate::sim::{
    generate_scene, inject_collapse, perturb_scene, CollapseSpec, NoiseModel, SceneConfig,
    SceneObject, SigmaAssigner,
};
use crate::solver::{solve_all, DepthEstimate, StrategyFamily, NUM_DEPTHS};
use crate::cuboid::Box3D;

/// Quantile level used as the recovery threshold in collapse experiments.
pub const RECOVERY_QUANTILE: f64 = 0.95;

/// A non-empty set of strategy families selecting a subset of the 20
/// candidate sources.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StrategySubset {
    pub families: BTreeSet<StrategyFamily>,
}

impl StrategySubset {
    pub fn new<I: IntoIterator<Item = StrategyFamily>>(families: I) -> Result<Self> {
        let families: BTreeSet<_> = families.into_iter().collect();
        if families.is_empty() {
            return Err(Error::InvalidConfig("strategy subset must be non-empty".into()));
        }
        Ok(Self { families })
    }

    pub fn contains(&self, family: StrategyFamily) -> bool {
        self.families.contains(&family)
    }

    /// Canonical label in E, H, K order, e.g. "EH".
    pub fn label(&self) -> String {
        let mut s = String::new();
        for f in [
            StrategyFamily::Direct,
            StrategyFamily::Height,
            StrategyFamily::Keypoint,
        ] {
            if self.contains(f) {
                s.push(f.letter());
            }
        }
        s
    }
}

/// How the candidate depths of one object are reduced to a single value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionMode {
    /// Value of the minimum-variance estimate.
    Hard,
    /// Unweighted average of the valid values.
    Mean,
    /// Inverse-variance fusion over all valid estimates, no selection.
    Weighted,
    /// As `Weighted`, but the reported variance is the minimum member
    /// variance instead of the fused one (interpretation; affects
    /// confidence, not the combined value).
    Min,
    /// Iterative 3-sigma selection, then fusion of the survivors.
    Iterative,
    /// Ground-truth-assisted pick of the most accurate candidate; an upper
    /// bound, not a deployable strategy.
    Oracle,
}

impl FusionMode {
    pub const ALL: [FusionMode; 6] = [
        FusionMode::Hard,
        FusionMode::Mean,
        FusionMode::Weighted,
        FusionMode::Min,
        FusionMode::Iterative,
        FusionMode::Oracle,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FusionMode::Hard => "Hard",
            FusionMode::Mean => "Mean",
            FusionMode::Weighted => "Weighted",
            FusionMode::Min => "Min",
            FusionMode::Iterative => "Iterative",
            FusionMode::Oracle => "Oracle",
        }
    }
}

/// One report row; see the module docs for column semantics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub subset: String,
    pub fusion_mode: String,
    pub mae_combined: f64,
    pub mae_oracle: f64,
    pub rejection_rate: f64,
    pub mean_iterations: f64,
    pub collapse_recovery: Option<f64>,
}

/// A deterministic experiment report: optional embedded configuration plus
/// the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// The full effective configuration of the run, embedded so any result
    /// is reproducible from the report alone.
    pub config: Option<serde_json::Value>,
    pub rows: Vec<EvalRow>,
}

/// Pick the estimate closest to the true depth; ties break toward the
/// lowest source index. Only valid estimates participate.
pub fn oracle_select(estimates: &[DepthEstimate], z_true: f64) -> Result<&DepthEstimate> {
    estimates
        .iter()
        .filter(|e| e.valid)
        .min_by(|a, b| {
            (a.value - z_true)
                .abs()
                .total_cmp(&(b.value - z_true).abs())
                .then(a.source.index().cmp(&b.source.index()))
        })
        .ok_or(Error::EmptyInput("oracle_select"))
}

/// Mean absolute error over index-aligned pairs.
pub fn mae(values: &[f64], truths: &[f64]) -> Result<f64> {
    if values.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: values.len(),
            right: truths.len(),
        });
    }
    if values.is_empty() {
        return Err(Error::EmptyInput("mae"));
    }
    Ok(values
        .iter()
        .zip(truths)
        .map(|(v, t)| (v - t).abs())
        .sum::<f64>()
        / values.len() as f64)
}

/// A ground-truth box with its solved-and-sigma'd candidate depths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedObject {
    pub truth: Box3D,
    pub estimates: [DepthEstimate; NUM_DEPTHS],
}

/// Solve and assign sigmas for every object of an already-built scene.
pub fn solve_scene(scene: &[SceneObject], assigner: &SigmaAssigner, cfg: &SceneConfig) -> Vec<PreparedObject> {
    scene
        .iter()
        .map(|so| {
            let mut estimates = solve_all(&so.obs, &cfg.intrinsics);
            assigner.assign(&so.obs, &mut estimates);
            PreparedObject {
                truth: so.truth,
                estimates,
            }
        })
        .collect()
}

/// Full pipeline: generate, perturb, solve, assign sigmas.
pub fn prepare_objects(cfg: &SceneConfig, noise: &NoiseModel) -> Result<Vec<PreparedObject>> {
    let scene = generate_scene(cfg)?;
    let noisy = perturb_scene(&scene, noise, cfg.seed);
    let assigner = SigmaAssigner::new(noise, cfg)?;
    Ok(solve_scene(&noisy, &assigner, cfg))
}

fn subset_estimates(obj: &PreparedObject, subset: &StrategySubset) -> Vec<DepthEstimate> {
    obj.estimates
        .iter()
        .filter(|e| subset.contains(e.source.family()))
        .copied()
        .collect()
}

struct ModeOutcome {
    value: f64,
    rejected: usize,
    valid: usize,
    iterations: usize,
}

fn combine_with_mode(
    estimates: &[DepthEstimate],
    mode: FusionMode,
    z_true: f64,
) -> Result<ModeOutcome> {
    let valid: Vec<&DepthEstimate> = estimates.iter().filter(|e| e.valid).collect();
    if valid.is_empty() {
        return Err(Error::NoUsableDepth);
    }
    let n_valid = valid.len();
    let outcome = |value| ModeOutcome {
        value,
        rejected: 0,
        valid: n_valid,
        iterations: 0,
    };
    match mode {
        FusionMode::Hard => {
            let best = valid
                .iter()
                .min_by(|a, b| {
                    (a.sigma * a.sigma)
                        .total_cmp(&(b.sigma * b.sigma))
                        .then(a.source.index().cmp(&b.source.index()))
                })
                .expect("non-empty");
            Ok(outcome(best.value))
        }
        FusionMode::Mean => {
            let sum: f64 = valid.iter().map(|e| e.value).sum();
            Ok(outcome(sum / n_valid as f64))
        }
        FusionMode::Weighted | FusionMode::Min => {
            let (means, vars): (Vec<f64>, Vec<f64>) = valid
                .iter()
                .map(|e| (e.value, e.sigma * e.sigma))
                .unzip();
            let (mu, _) = fuse(&means, &vars)?;
            Ok(outcome(mu))
        }
        FusionMode::Iterative => {
            let r = select_and_combine(estimates)?;
            Ok(ModeOutcome {
                value: r.combined_depth,
                rejected: r.rejected.len(),
                valid: n_valid,
                iterations: r.iterations,
            })
        }
        FusionMode::Oracle => Ok(outcome(oracle_select(estimates, z_true)?.value)),
    }
}

/// Evaluate every `(subset, fusion mode)` cell over the prepared objects.
/// The report has exactly `subsets.len() * modes.len()` rows, in input
/// order.
pub fn run_ablation(
    objects: &[PreparedObject],
    subsets: &[StrategySubset],
    modes: &[FusionMode],
) -> Result<EvalReport> {
    if objects.is_empty() {
        return Err(Error::EmptyInput("run_ablation"));
    }
    let mut rows = Vec::with_capacity(subsets.len() * modes.len());
    for subset in subsets {
        for &mode in modes {
            let mut combined = Vec::new();
            let mut oracle = Vec::new();
            let mut truths = Vec::new();
            let mut rejected = 0usize;
            let mut valid = 0usize;
            let mut iterations = 0usize;
            let mut fused_objects = 0usize;
            for obj in objects {
                let estimates = subset_estimates(obj, subset);
                let z_true = obj.truth.center.z;
                let Ok(out) = combine_with_mode(&estimates, mode, z_true) else {
                    continue; // no valid estimate in this subset
                };
                combined.push(out.value);
                oracle.push(oracle_select(&estimates, z_true)?.value);
                truths.push(z_true);
                rejected += out.rejected;
                valid += out.valid;
                iterations += out.iterations;
                fused_objects += 1;
            }
            if fused_objects == 0 {
                return Err(Error::NoUsableDepth);
            }
            rows.push(EvalRow {
                subset: subset.label(),
                fusion_mode: mode.label().to_string(),
                mae_combined: mae(&combined, &truths)?,
                mae_oracle: mae(&oracle, &truths)?,
                rejection_rate: if valid > 0 {
                    rejected as f64 / valid as f64
                } else {
                    0.0
                },
                mean_iterations: iterations as f64 / fused_objects as f64,
                collapse_recovery: None,
            });
        }
    }
    Ok(EvalReport { config: None, rows })
}

/// Recovery statistics for one collapse scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseOutcome {
    /// Objects corrupted by the collapse.
    pub affected: usize,
    /// Fraction of affected objects whose combined-depth error stayed below
    /// the uncorrupted pipeline's error quantile ([`RECOVERY_QUANTILE`]).
    /// Defined as 1.0 when nothing was affected.
    pub recovery_rate: f64,
    /// Fraction of (affected object, affected source) pairs where the
    /// corrupted source was rejected or already invalid.
    pub rejection_accuracy: f64,
    /// Fraction of valid unaffected estimates rejected on affected objects.
    pub false_rejection_rate: f64,
    /// Combined-depth MAE over affected objects, corrupted pipeline.
    pub mae_affected: f64,
    /// Combined-depth MAE over the same objects, uncorrupted pipeline.
    pub mae_uncorrupted: f64,
    /// The error quantile of the uncorrupted pipeline used as the recovery
    /// threshold.
    pub q95_uncorrupted: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    // Nearest-rank on a sorted slice.
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Run the collapse experiment: perturb a scene, corrupt the target quantity
/// on a fraction of the objects, and compare the iterative pipeline against
/// its uncorrupted twin on the same seed.
pub fn collapse_recovery(
    cfg: &SceneConfig,
    noise: &NoiseModel,
    spec: &CollapseSpec,
) -> Result<CollapseOutcome> {
    let scene = generate_scene(cfg)?;
    let noisy = perturb_scene(&scene, noise, cfg.seed);
    let mut corrupted = noisy.clone();
    let affected = inject_collapse(&mut corrupted, spec, cfg.seed)?;
    let assigner = SigmaAssigner::new(noise, cfg)?;

    let clean_objects = solve_scene(&noisy, &assigner, cfg);
    let bad_objects = solve_scene(&corrupted, &assigner, cfg);

    let mut clean_errors = Vec::with_capacity(clean_objects.len());
    for obj in &clean_objects {
        let r = select_and_combine(&obj.estimates)?;
        clean_errors.push((r.combined_depth - obj.truth.center.z).abs());
    }
    let mut sorted = clean_errors.clone();
    sorted.sort_by(f64::total_cmp);
    let q95 = quantile(&sorted, RECOVERY_QUANTILE);

    if affected.is_empty() {
        return Ok(CollapseOutcome {
            affected: 0,
            recovery_rate: 1.0,
            rejection_accuracy: 1.0,
            false_rejection_rate: 0.0,
            mae_affected: 0.0,
            mae_uncorrupted: 0.0,
            q95_uncorrupted: q95,
        });
    }

    let affected_sources: BTreeSet<usize> = spec
        .target
        .affected_sources()
        .into_iter()
        .map(|s| s.index())
        .collect();

    let mut recovered = 0usize;
    let mut rejected_hits = 0usize;
    let mut rejected_total = 0usize;
    let mut false_rejections = 0usize;
    let mut clean_valid = 0usize;
    let mut combined_bad = Vec::with_capacity(affected.len());
    let mut combined_clean = Vec::with_capacity(affected.len());
    let mut truths = Vec::with_capacity(affected.len());
    for &i in &affected {
        let obj = &bad_objects[i];
        let z_true = obj.truth.center.z;
        let r = select_and_combine(&obj.estimates)?;
        let err = (r.combined_depth - z_true).abs();
        if err < q95 {
            recovered += 1;
        }
        combined_bad.push(r.combined_depth);
        combined_clean.push({
            let rc = select_and_combine(&clean_objects[i].estimates)?;
            rc.combined_depth
        });
        truths.push(z_true);

        let rejected_set: BTreeSet<usize> = r.rejected.iter().map(|s| s.index()).collect();
        let invalid_set: BTreeSet<usize> = r.invalid.iter().map(|s| s.index()).collect();
        for &s in &affected_sources {
            rejected_total += 1;
            if rejected_set.contains(&s) || invalid_set.contains(&s) {
                rejected_hits += 1;
            }
        }
        for e in obj.estimates.iter().filter(|e| e.valid) {
            if !affected_sources.contains(&e.source.index()) {
                clean_valid += 1;
                if rejected_set.contains(&e.source.index()) {
                    false_rejections += 1;
                }
            }
        }
    }

    Ok(CollapseOutcome {
        affected: affected.len(),
        recovery_rate: recovered as f64 / affected.len() as f64,
        rejection_accuracy: rejected_hits as f64 / rejected_total.max(1) as f64,
        false_rejection_rate: false_rejections as f64 / clean_valid.max(1) as f64,
        mae_affected: mae(&combined_bad, &truths)?,
        mae_uncorrupted: mae(&combined_clean, &truths)?,
        q95_uncorrupted: q95,
    })
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

pub const REPORT_HEADER: &str =
    "subset,fusion_mode,mae_combined,mae_oracle,rejection_rate,mean_iterations,collapse_recovery";

/// Render the report as CSV: an optional `# config:` preamble, the fixed
/// header, then one row per configuration. Identical reports render to
/// identical bytes.
pub fn report_to_csv(report: &EvalReport) -> String {
    let mut out = String::new();
    if let Some(config) = &report.config {
        out.push_str("# config: ");
        out.push_str(&serde_json::to_string(config).expect("config serialization"));
        out.push('\n');
    }
    out.push_str(REPORT_HEADER);
    out.push('\n');
    for row in &report.rows {
        let recovery = row
            .collapse_recovery
            .map(|r| r.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.subset,
            row.fusion_mode,
            row.mae_combined,
            row.mae_oracle,
            row.rejection_rate,
            row.mean_iterations,
            recovery
        ));
    }
    out
}

/// Render the report (config and rows) as pretty JSON.
pub fn report_to_json(report: &EvalReport) -> String {
    serde_json::to_string_pretty(report).expect("report serialization")
}

/// Write the CSV rendering of a report to a file.
pub fn emit_report(report: &EvalReport, path: &Path) -> Result<()> {
    write_text(path, &report_to_csv(report))
}

/// Write text to a file, wrapping I/O failures with the path.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(text.as_bytes()).map_err(io_err)
}
