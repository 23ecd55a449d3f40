//! Acceptance suite: one test per release criterion, each printing a PASS
//! line (visible with `--nocapture`). Criterion 9 (CLI byte-identical
//! re-runs) lives in the CLI crate's own acceptance suite.

use std::time::Instant;

use multidepth::cuboid::box_vertices_object_frame;
use multidepth::confidence::{
    box_uncertainty_loss, breakdown, conditional_3d_confidence, uncertainty_loss, VertexNorm,
};
use multidepth::eval::{
    collapse_recovery, mae, prepare_objects, run_ablation, FusionMode,
    StrategySubset,
};
use multidepth::fusion::{fuse, fusion_weights, select_and_combine};
use multidepth::kitti::{parse_calib, parse_labels, roundtrip_eval};
use multidepth::sim::{
    generate_scene, inject_collapse, perturb_scene, CollapseSpec, CollapseTarget, Corruption,
    NoiseModel, SceneConfig, SigmaAssigner,
};
use multidepth::solver::{
    pnp_least_squares, solve_all, DepthEstimate, DepthSource, StrategyFamily, NUM_DEPTHS,
};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_err(value: f64, truth: f64) -> f64 {
    (value - truth).abs() / truth.abs()
}

/// Criterion 1: over 10^4 seeded random boxes, every valid candidate depth,
/// the PnP depth, and the combined depth equal ground truth within 1e-6
/// relative, in under 10 seconds.
#[test]
fn acceptance_01_noiseless_exactness() {
    let cfg = SceneConfig {
        n_objects: 10_000,
        seed: 2024,
        ..SceneConfig::default()
    };
    let start = Instant::now();
    let scene = generate_scene(&cfg).unwrap();
    let mut checked_estimates = 0usize;
    for so in &scene {
        let z_true = so.truth.center.z;
        let estimates = solve_all(&so.obs, &cfg.intrinsics);
        for e in estimates.iter().filter(|e| e.valid) {
            assert!(
                rel_err(e.value, z_true) < 1e-6,
                "{}: {} vs {}",
                e.source,
                e.value,
                z_true
            );
            checked_estimates += 1;
        }
        let verts = box_vertices_object_frame(&so.truth.dims);
        let corr: Vec<_> = so
            .obs
            .keypoints
            .vertices
            .iter()
            .copied()
            .zip(verts.iter().copied())
            .collect();
        let t = pnp_least_squares(&corr, so.truth.yaw, &cfg.intrinsics).unwrap();
        assert!(rel_err(t.z, z_true) < 1e-6, "pnp {} vs {}", t.z, z_true);

        let fused = select_and_combine(&estimates).unwrap();
        assert!(
            rel_err(fused.combined_depth, z_true) < 1e-6,
            "combined {} vs {}",
            fused.combined_depth,
            z_true
        );
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "noiseless sweep took {elapsed:?}"
    );
    println!(
        "ACCEPTANCE PASS: 1 noiseless exactness ({} objects, {} estimates, {:.2?})",
        scene.len(),
        checked_estimates,
        elapsed
    );
}

/// Criterion 2: fusion algebra over 10^5 random positive-variance sets, in
/// under 5 seconds. Weight sums are checked to 1e-12 absolute; the
/// closed-form variance identity to 1e-12 relative.
#[test]
fn acceptance_02_fusion_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let start = Instant::now();
    for _ in 0..100_000 {
        let n = rng.random_range(1..=20usize);
        let means: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..100.0)).collect();
        let variances: Vec<f64> = (0..n)
            .map(|_| 10f64.powf(rng.random_range(-4.0..2.0)))
            .collect();

        let weights = fusion_weights(&variances).unwrap();
        let total: f64 = weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12, "weight sum {total}");

        let (mu, var) = fuse(&means, &variances).unwrap();
        let harmonic = 1.0 / variances.iter().map(|v| 1.0 / v).sum::<f64>();
        assert!(
            (var - harmonic).abs() <= 1e-12 * harmonic,
            "variance identity {var} vs {harmonic}"
        );
        let min_var = variances.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(var <= min_var * (1.0 + 1e-12));
        let (lo, hi) = means
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| {
                (lo.min(m), hi.max(m))
            });
        assert!(mu >= lo - 1e-9 && mu <= hi + 1e-9, "mean {mu} outside hull");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "fusion sweep took {elapsed:?}");
    println!("ACCEPTANCE PASS: 2 fusion algebra (100000 sets, {elapsed:.2?})");
}

/// Criterion 3: the hand-traced selection fixture behaves exactly as traced.
#[test]
fn acceptance_03_selection_trace_fixture() {
    let estimates: Vec<DepthEstimate> = [(10.0, 0.1), (10.1, 0.1), (9.9, 0.1), (50.0, 0.1)]
        .iter()
        .enumerate()
        .map(|(i, &(value, sigma))| DepthEstimate {
            value,
            sigma,
            source: DepthSource::from_index(i).unwrap(),
            valid: true,
        })
        .collect();
    let r = select_and_combine(&estimates).unwrap();
    assert!(
        (r.combined_depth - 10.0).abs() < 1e-12,
        "z_c = {}",
        r.combined_depth
    );
    assert_eq!(r.rejected, vec![DepthSource::from_index(3).unwrap()]);
    assert_eq!(r.iterations, 2);
    assert_eq!(r.selected.len(), 3);
    println!("ACCEPTANCE PASS: 3 selection trace fixture");
}

/// Frozen oracle MAEs for the default seed, recorded on first build as a
/// regression fixture (criterion 4).
const ORACLE_MAE_E: f64 = 2.033_278_551_584_066;
const ORACLE_MAE_EH: f64 = 0.663_854_671_469_472_7;
const ORACLE_MAE_EHK: f64 = 0.141_742_312_948_371_95;

/// Criterion 4: oracle MAE is non-increasing across the candidate-set chain
/// {E} ⊂ {E,H} ⊂ {E,H,K}, with strict decrease on the shipped default seed.
#[test]
fn acceptance_04_oracle_monotonicity() {
    let cfg = SceneConfig::default();
    let noise = NoiseModel::default();
    let objects = prepare_objects(&cfg, &noise).unwrap();
    // The superset argument compares per-object minima, so every object
    // must contribute to all three rows; the direct estimate is the
    // narrowest subset and must be valid everywhere.
    assert!(objects
        .iter()
        .all(|o| o.estimates[DepthSource::Direct.index()].valid));
    let subsets = vec![
        StrategySubset::new([StrategyFamily::Direct]).unwrap(),
        StrategySubset::new([StrategyFamily::Direct, StrategyFamily::Height]).unwrap(),
        StrategySubset::new([
            StrategyFamily::Direct,
            StrategyFamily::Height,
            StrategyFamily::Keypoint,
        ])
        .unwrap(),
    ];
    let report = run_ablation(&objects, &subsets, &[FusionMode::Oracle]).unwrap();
    let maes: Vec<f64> = report.rows.iter().map(|r| r.mae_oracle).collect();
    println!(
        "oracle MAE: E = {:.12}, EH = {:.12}, EHK = {:.12}",
        maes[0], maes[1], maes[2]
    );
    // Superset property: deterministic, not merely statistical.
    assert!(maes[0] >= maes[1] && maes[1] >= maes[2]);
    // Strict decrease on the shipped default seed.
    assert!(maes[0] > maes[1] && maes[1] > maes[2]);
    // Regression fixture.
    for (got, frozen) in maes.iter().zip([ORACLE_MAE_E, ORACLE_MAE_EH, ORACLE_MAE_EHK]) {
        assert!(
            (got - frozen).abs() <= 1e-9 * frozen,
            "oracle MAE drifted: {got} vs frozen {frozen}"
        );
    }
    println!("ACCEPTANCE PASS: 4 oracle monotonicity");
}

/// Criterion 5: a 5x direct-depth corruption with honest sigma, separated
/// from the honest set by more than 6 sigma, is rejected on 100% of the
/// affected objects, and the combined MAE on those objects stays within 10%
/// of the uncorrupted pipeline.
#[test]
fn acceptance_05_collapse_robustness() {
    let cfg = SceneConfig {
        n_objects: 400,
        ..SceneConfig::default()
    };
    let noise = NoiseModel::default();
    let spec = CollapseSpec {
        target: CollapseTarget::DirectDepth,
        corruption: Corruption::Scale(5.0),
        fraction: 0.5,
        honest_sigma: true,
    };

    let scene = generate_scene(&cfg).unwrap();
    let noisy = perturb_scene(&scene, &noise, cfg.seed);
    let mut corrupted = noisy.clone();
    let affected = inject_collapse(&mut corrupted, &spec, cfg.seed).unwrap();
    assert_eq!(affected.len(), 200);
    let assigner = SigmaAssigner::new(&noise, &cfg).unwrap();

    let mut combined_corrupted = Vec::new();
    let mut combined_clean = Vec::new();
    for &i in &affected {
        let mut estimates = solve_all(&corrupted[i].obs, &cfg.intrinsics);
        assigner.assign(&corrupted[i].obs, &mut estimates);
        let fused = select_and_combine(&estimates).unwrap();

        // Premise of the constructed separation: the corrupted value sits
        // more than 6 sigma outside the honest set.
        let direct = estimates[DepthSource::Direct.index()];
        assert!(direct.valid, "corrupted direct estimate should still be valid");
        let separation =
            (direct.value - fused.combined_depth).abs() / fused.combined_variance.sqrt();
        assert!(separation > 6.0, "separation only {separation:.1} sigma");

        assert!(
            fused.rejected.contains(&DepthSource::Direct),
            "object {i}: corrupted direct estimate not rejected"
        );
        combined_corrupted.push(fused.combined_depth);

        let mut clean = solve_all(&noisy[i].obs, &cfg.intrinsics);
        assigner.assign(&noisy[i].obs, &mut clean);
        combined_clean.push(select_and_combine(&clean).unwrap().combined_depth);
    }
    let truths: Vec<f64> = affected
        .iter()
        .map(|&i| corrupted[i].truth.center.z)
        .collect();
    let mae_corrupted = mae(&combined_corrupted, &truths).unwrap();
    let mae_clean = mae(&combined_clean, &truths).unwrap();
    assert!(
        (mae_corrupted - mae_clean).abs() <= 0.10 * mae_clean,
        "MAE drifted more than 10%: corrupted {mae_corrupted} vs clean {mae_clean}"
    );

    // Cross-check via the harness-level statistics.
    let outcome = collapse_recovery(&cfg, &noise, &spec).unwrap();
    assert_eq!(outcome.affected, 200);
    assert_eq!(outcome.rejection_accuracy, 1.0);

    println!(
        "ACCEPTANCE PASS: 5 collapse robustness (MAE {mae_corrupted:.4} vs {mae_clean:.4}, recovery {:.3})",
        outcome.recovery_rate
    );
}

fn grid_argmin<F: Fn(f64) -> f64>(lo: f64, hi: f64, points: usize, f: F) -> f64 {
    let ratio = (hi / lo).powf(1.0 / (points - 1) as f64);
    let mut best_x = lo;
    let mut best_v = f64::INFINITY;
    let mut x = lo;
    for _ in 0..points {
        let v = f(x);
        if v < best_v {
            best_v = v;
            best_x = x;
        }
        x *= ratio;
    }
    best_x
}

/// Criterion 6: grid search confirms both uncertainty losses are minimized
/// at sigma = error magnitude, within 1e-3 relative, over 10^3 random pairs.
#[test]
fn acceptance_06_loss_calculus() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..1000 {
        let e: f64 = 10f64.powf(rng.random_range(-3.0..1.0));
        let p_star = rng.random_range(-10.0..10.0);
        let p = p_star + if case % 2 == 0 { e } else { -e };
        let argmin = grid_argmin(e / 4.0, e * 4.0, 4001, |s| {
            uncertainty_loss(p, p_star, s).unwrap()
        });
        assert!(
            (argmin - e).abs() <= 1e-3 * e,
            "scalar loss argmin {argmin} vs error {e}"
        );

        // Box loss: spread the same total error across the 8 vertices.
        let gt = [Vector3::zeros(); 8];
        let mut est = gt;
        let mut total = 0.0;
        for v in est.iter_mut() {
            let d = rng.random_range(0.0..e);
            v.x = d;
            total += d;
        }
        if total < 1e-6 {
            continue;
        }
        let argmin_b = grid_argmin(total / 4.0, total * 4.0, 4001, |s| {
            box_uncertainty_loss(&est, &gt, s, VertexNorm::L1).unwrap()
        });
        assert!(
            (argmin_b - total).abs() <= 1e-3 * total,
            "box loss argmin {argmin_b} vs total deviation {total}"
        );
    }
    println!("ACCEPTANCE PASS: 6 loss calculus (1000 pairs)");
}

/// Criterion 7: confidence outputs stay in [0, 1] for valid inputs; the
/// hand-evaluated blend matches to 1e-4.
#[test]
fn acceptance_07_confidence_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let var_c = 10f64.powf(rng.random_range(-4.0..2.0));
        let var_b = 10f64.powf(rng.random_range(-4.0..2.0));
        let p_2d = rng.random_range(0.0..1.0);
        let b = breakdown(var_c, var_b, p_2d).unwrap();
        for v in [b.d_c, b.d_b, b.p_3d_given_2d, b.p_2d, b.p_m] {
            assert!((0.0..=1.0).contains(&v), "{b:?}");
        }
        assert!((b.p_m - b.p_3d_given_2d * b.p_2d).abs() < 1e-15);
    }
    let p = conditional_3d_confidence(0.1, 10.0).unwrap();
    assert!((p - 0.8911).abs() < 1e-4, "blend {p}");
    println!("ACCEPTANCE PASS: 7 confidence bounds");
}

/// Criterion 8: the shipped KITTI fixtures parse bit-exactly to their
/// documented field values and round-trip through the solver to better than
/// 1e-6 relative depth error.
#[test]
fn acceptance_08_kitti_fixtures() {
    let base = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/kitti");
    let mut localizable = 0usize;
    for stem in ["000001", "000002"] {
        let labels =
            parse_labels(&std::fs::read_to_string(format!("{base}/label_2/{stem}.txt")).unwrap())
                .unwrap();
        let calib =
            parse_calib(&std::fs::read_to_string(format!("{base}/calib/{stem}.txt")).unwrap())
                .unwrap();
        let out = roundtrip_eval(&labels, &calib).unwrap();
        assert_eq!(out.skipped, 1, "{stem}: exactly the DontCare line skips");
        assert_eq!(out.records.len(), labels.len() - 1);
        for r in &out.records {
            assert!(
                r.abs_error < 1e-6 * r.z_true,
                "{stem} label {}: combined error {}",
                r.index,
                r.abs_error
            );
            assert_eq!(
                r.n_valid, NUM_DEPTHS,
                "{stem} label {}: degenerate estimates on a non-degenerate label",
                r.index
            );
        }
        localizable += out.records.len();
    }

    // Bit-exact field values of the first fixture line.
    let labels = parse_labels(
        &std::fs::read_to_string(format!("{base}/label_2/000001.txt")).unwrap(),
    )
    .unwrap();
    let car = &labels[0];
    assert_eq!(car.category, "Car");
    assert_eq!(car.truncated, 0.00);
    assert_eq!(car.occluded, 0);
    assert_eq!(car.alpha, -1.58);
    assert_eq!(car.bbox2d, [587.01, 173.33, 614.12, 200.12]);
    assert_eq!(car.dims, (1.65, 1.67, 3.64));
    assert_eq!(car.location, (-0.65, 1.71, 46.70));
    assert_eq!(car.rotation_y, -1.59);
    let calib = parse_calib(
        &std::fs::read_to_string(format!("{base}/calib/000001.txt")).unwrap(),
    )
    .unwrap();
    let k = calib.intrinsics().unwrap();
    assert_eq!((k.fx, k.fy, k.cu, k.cv), (721.5377, 721.5377, 609.5593, 172.854));

    println!("ACCEPTANCE PASS: 8 kitti fixtures ({localizable} localizable labels)");
}
