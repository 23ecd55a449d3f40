//! Experiment driver for the multidepth library.
//!
//! Every subcommand reads a JSON configuration, runs one experiment
//! end-to-end, writes a CSV (or JSON) report whose header embeds the full
//! effective configuration — including resolved seeds — and prints a
//! one-line summary to stdout. Identical configurations produce
//! byte-identical reports.
//!
//! Exit codes: 0 success, 1 configuration/runtime errors, 2 usage errors.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use multidepth::confidence::{box_uncertainty_loss, uncertainty_loss, VertexNorm};
use multidepth::eval::{
    collapse_recovery, prepare_objects, report_to_csv, report_to_json, run_ablation, write_text,
    FusionMode, StrategySubset,
};
use multidepth::fusion::select_and_combine;
use multidepth::kitti::{parse_calib, parse_labels, roundtrip_eval};
use multidepth::sim::{
    generate_scene, perturb_scene, scene_to_json, CollapseSpec, NoiseModel, SceneConfig,
    SigmaAssigner,
};
use multidepth::solver::solve_all;

/// Environment variable naming the default output directory.
const OUT_DIR_ENV: &str = "MULTIDEPTH_OUT_DIR";

#[derive(Parser)]
#[command(name = "multidepth", version, about = "Depth-solving experiment driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Report path; defaults to `$MULTIDEPTH_OUT_DIR/<command>.<ext>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configuration's scene seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Report format.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scene, solve and fuse every object, report per-object depths.
    Simulate(CommonArgs),
    /// Strategy-subset x fusion-mode ablation grid.
    Ablate(CommonArgs),
    /// Assumption-collapse robustness statistics.
    Collapse(CommonArgs),
    /// Round-trip KITTI annotations through the solver.
    KittiRoundtrip(CommonArgs),
    /// Grid-search verification of the uncertainty-loss minimizer.
    LossesCheck(CommonArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => run_command(args, "simulate", cmd_simulate),
        Command::Ablate(args) => run_command(args, "ablate", cmd_ablate),
        Command::Collapse(args) => run_command(args, "collapse", cmd_collapse),
        Command::KittiRoundtrip(args) => run_command(args, "kitti-roundtrip", cmd_kitti),
        Command::LossesCheck(args) => run_command(args, "losses-check", cmd_losses),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

/// A rendered report plus its one-line summary.
struct CommandOutput {
    csv: String,
    json: String,
    summary: String,
}

fn run_command(
    args: &CommonArgs,
    name: &str,
    f: fn(&CommonArgs) -> Result<CommandOutput>,
) -> Result<()> {
    let out = f(args)?;
    let path = output_path(args, name);
    let text = match args.format {
        Format::Csv => &out.csv,
        Format::Json => &out.json,
    };
    write_text(&path, text).with_context(|| format!("writing report to {}", path.display()))?;
    println!("{name}: {} -> {}", out.summary, path.display());
    Ok(())
}

fn output_path(args: &CommonArgs, name: &str) -> PathBuf {
    if let Some(out) = &args.out {
        return out.clone();
    }
    let dir = std::env::var(OUT_DIR_ENV).unwrap_or_else(|_| ".".to_string());
    let ext = match args.format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    Path::new(&dir).join(format!("{name}.{ext}"))
}

fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn config_value<T: Serialize>(config: &T) -> serde_json::Value {
    serde_json::to_value(config).expect("config serialization")
}

/// Render a generic table: `# config:` preamble, header, one line per row.
fn table_csv(config: &serde_json::Value, header: &str, rows: &[String]) -> String {
    let mut out = format!("# config: {config}\n{header}\n");
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    out
}

fn table_json<T: Serialize>(config: &serde_json::Value, rows: &[T]) -> String {
    serde_json::to_string_pretty(&serde_json::json!({
        "config": config,
        "rows": rows,
    }))
    .expect("report serialization")
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct SimulateConfig {
    #[serde(default)]
    scene: SceneConfig,
    #[serde(default)]
    noise: NoiseModel,
    /// When set, the perturbed scene is also written here as JSON for
    /// fixture reuse.
    #[serde(default)]
    export_path: Option<PathBuf>,
}

#[derive(Serialize)]
struct SimulateRow {
    index: usize,
    z_true: f64,
    combined_depth: f64,
    abs_error: f64,
    n_valid: usize,
    n_selected: usize,
    n_rejected: usize,
    iterations: usize,
}

fn cmd_simulate(args: &CommonArgs) -> Result<CommandOutput> {
    let mut cfg: SimulateConfig = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.scene.seed = seed;
    }
    let scene = generate_scene(&cfg.scene)?;
    let noisy = perturb_scene(&scene, &cfg.noise, cfg.scene.seed);
    if let Some(path) = &cfg.export_path {
        write_text(path, &scene_to_json(&noisy))
            .with_context(|| format!("exporting scene to {}", path.display()))?;
    }
    let assigner = SigmaAssigner::new(&cfg.noise, &cfg.scene)?;

    let mut rows = Vec::with_capacity(noisy.len());
    let mut abs_errors = Vec::with_capacity(noisy.len());
    for (index, so) in noisy.iter().enumerate() {
        let mut estimates = solve_all(&so.obs, &cfg.scene.intrinsics);
        assigner.assign(&so.obs, &mut estimates);
        let fused = select_and_combine(&estimates)?;
        let z_true = so.truth.center.z;
        let abs_error = (fused.combined_depth - z_true).abs();
        abs_errors.push(abs_error);
        rows.push(SimulateRow {
            index,
            z_true,
            combined_depth: fused.combined_depth,
            abs_error,
            n_valid: estimates.iter().filter(|e| e.valid).count(),
            n_selected: fused.selected.len(),
            n_rejected: fused.rejected.len(),
            iterations: fused.iterations,
        });
    }
    let mae = abs_errors.iter().sum::<f64>() / abs_errors.len().max(1) as f64;

    let config = config_value(&cfg);
    let header = "index,z_true,combined_depth,abs_error,n_valid,n_selected,n_rejected,iterations";
    let csv_rows: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{}",
                r.index,
                r.z_true,
                r.combined_depth,
                r.abs_error,
                r.n_valid,
                r.n_selected,
                r.n_rejected,
                r.iterations
            )
        })
        .collect();
    Ok(CommandOutput {
        csv: table_csv(&config, header, &csv_rows),
        json: table_json(&config, &rows),
        summary: format!("{} rows, MAE {mae:.4} m", rows.len()),
    })
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct AblateConfig {
    #[serde(default)]
    scene: SceneConfig,
    #[serde(default)]
    noise: NoiseModel,
    subsets: Vec<StrategySubset>,
    fusion_modes: Vec<FusionMode>,
}

fn cmd_ablate(args: &CommonArgs) -> Result<CommandOutput> {
    let mut cfg: AblateConfig = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.scene.seed = seed;
    }
    if cfg.subsets.iter().any(|s| s.families.is_empty()) {
        bail!("strategy subsets must be non-empty");
    }
    if cfg.subsets.is_empty() || cfg.fusion_modes.is_empty() {
        bail!("need at least one subset and one fusion mode");
    }
    let objects = prepare_objects(&cfg.scene, &cfg.noise)?;
    let mut report = run_ablation(&objects, &cfg.subsets, &cfg.fusion_modes)?;
    report.config = Some(config_value(&cfg));

    let best = report
        .rows
        .iter()
        .min_by(|a, b| a.mae_combined.total_cmp(&b.mae_combined))
        .expect("non-empty report");
    let summary = format!(
        "{} rows, best MAE {:.4} m ({}/{})",
        report.rows.len(),
        best.mae_combined,
        best.subset,
        best.fusion_mode
    );
    Ok(CommandOutput {
        csv: report_to_csv(&report),
        json: report_to_json(&report),
        summary,
    })
}

// ---------------------------------------------------------------------------
// collapse
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CollapseConfig {
    #[serde(default)]
    scene: SceneConfig,
    #[serde(default)]
    noise: NoiseModel,
    collapses: Vec<CollapseSpec>,
}

#[derive(Serialize)]
struct CollapseRow {
    target: String,
    corruption: String,
    fraction: f64,
    honest_sigma: bool,
    affected: usize,
    recovery_rate: f64,
    rejection_accuracy: f64,
    false_rejection_rate: f64,
    mae_affected: f64,
    mae_uncorrupted: f64,
    q95_uncorrupted: f64,
}

fn cmd_collapse(args: &CommonArgs) -> Result<CommandOutput> {
    let mut cfg: CollapseConfig = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.scene.seed = seed;
    }
    let mut rows = Vec::with_capacity(cfg.collapses.len());
    for spec in &cfg.collapses {
        let outcome = collapse_recovery(&cfg.scene, &cfg.noise, spec)?;
        rows.push(CollapseRow {
            target: spec.target.to_string(),
            corruption: spec.corruption.to_string(),
            fraction: spec.fraction,
            honest_sigma: spec.honest_sigma,
            affected: outcome.affected,
            recovery_rate: outcome.recovery_rate,
            rejection_accuracy: outcome.rejection_accuracy,
            false_rejection_rate: outcome.false_rejection_rate,
            mae_affected: outcome.mae_affected,
            mae_uncorrupted: outcome.mae_uncorrupted,
            q95_uncorrupted: outcome.q95_uncorrupted,
        });
    }
    let mean_recovery =
        rows.iter().map(|r| r.recovery_rate).sum::<f64>() / rows.len().max(1) as f64;
    let mean_mae =
        rows.iter().map(|r| r.mae_affected).sum::<f64>() / rows.len().max(1) as f64;

    let config = config_value(&cfg);
    let header = "target,corruption,fraction,honest_sigma,affected,recovery_rate,\
                  rejection_accuracy,false_rejection_rate,mae_affected,mae_uncorrupted,q95_uncorrupted";
    let csv_rows: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.target,
                r.corruption,
                r.fraction,
                r.honest_sigma,
                r.affected,
                r.recovery_rate,
                r.rejection_accuracy,
                r.false_rejection_rate,
                r.mae_affected,
                r.mae_uncorrupted,
                r.q95_uncorrupted
            )
        })
        .collect();
    Ok(CommandOutput {
        csv: table_csv(&config, header, &csv_rows),
        json: table_json(&config, &rows),
        summary: format!(
            "{} rows, mean recovery {mean_recovery:.3}, affected MAE {mean_mae:.4} m",
            rows.len()
        ),
    })
}

// ---------------------------------------------------------------------------
// kitti-roundtrip
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct KittiConfig {
    /// A label file, or a directory of `.txt` label files.
    label_path: PathBuf,
    /// A calibration file, or a directory matched to labels by file stem.
    calib_path: PathBuf,
}

#[derive(Serialize)]
struct KittiRow {
    file: String,
    index: usize,
    category: String,
    z_true: f64,
    combined_depth: f64,
    abs_error: f64,
    rel_error: f64,
    n_valid: usize,
    iterations: usize,
}

fn file_pairs(cfg: &KittiConfig) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    if cfg.label_path.is_dir() {
        let mut stems: Vec<String> = std::fs::read_dir(&cfg.label_path)
            .with_context(|| format!("listing {}", cfg.label_path.display()))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .collect();
        stems.sort();
        stems
            .into_iter()
            .map(|stem| {
                let label = cfg.label_path.join(format!("{stem}.txt"));
                let calib = cfg.calib_path.join(format!("{stem}.txt"));
                if !calib.exists() {
                    bail!("no calibration for {stem} at {}", calib.display());
                }
                Ok((stem, label, calib))
            })
            .collect()
    } else {
        let stem = cfg
            .label_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(vec![(stem, cfg.label_path.clone(), cfg.calib_path.clone())])
    }
}

fn cmd_kitti(args: &CommonArgs) -> Result<CommandOutput> {
    let cfg: KittiConfig = load_config(&args.config)?;
    let mut rows = Vec::new();
    let mut skipped = 0usize;
    let mut max_rel: f64 = 0.0;
    for (stem, label_path, calib_path) in file_pairs(&cfg)? {
        let labels = parse_labels(
            &std::fs::read_to_string(&label_path)
                .with_context(|| format!("reading {}", label_path.display()))?,
        )
        .with_context(|| format!("parsing {}", label_path.display()))?;
        let calib = parse_calib(
            &std::fs::read_to_string(&calib_path)
                .with_context(|| format!("reading {}", calib_path.display()))?,
        )
        .with_context(|| format!("parsing {}", calib_path.display()))?;
        let out = roundtrip_eval(&labels, &calib)?;
        skipped += out.skipped;
        for r in out.records {
            let rel_error = r.abs_error / r.z_true;
            max_rel = max_rel.max(rel_error);
            rows.push(KittiRow {
                file: stem.clone(),
                index: r.index,
                category: r.category,
                z_true: r.z_true,
                combined_depth: r.combined_depth,
                abs_error: r.abs_error,
                rel_error,
                n_valid: r.n_valid,
                iterations: r.iterations,
            });
        }
    }
    let config = config_value(&cfg);
    let header =
        "file,index,category,z_true,combined_depth,abs_error,rel_error,n_valid,iterations";
    let csv_rows: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                r.file,
                r.index,
                r.category,
                r.z_true,
                r.combined_depth,
                r.abs_error,
                r.rel_error,
                r.n_valid,
                r.iterations
            )
        })
        .collect();
    Ok(CommandOutput {
        csv: table_csv(&config, header, &csv_rows),
        json: table_json(&config, &rows),
        summary: format!(
            "{} objects ({skipped} skipped), max rel error {max_rel:.2e}",
            rows.len()
        ),
    })
}

// ---------------------------------------------------------------------------
// losses-check
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct LossesConfig {
    n_pairs: usize,
    seed: u64,
    grid_points: usize,
    /// The grid spans `[magnitude / span_factor, magnitude * span_factor]`.
    span_factor: f64,
    /// Largest tolerated relative gap between argmin and error magnitude.
    tolerance: f64,
}

impl Default for LossesConfig {
    fn default() -> Self {
        Self {
            n_pairs: 1000,
            seed: 6,
            grid_points: 4001,
            span_factor: 4.0,
            tolerance: 1e-3,
        }
    }
}

#[derive(Serialize)]
struct LossRow {
    case: usize,
    kind: &'static str,
    error_magnitude: f64,
    argmin_sigma: f64,
    rel_gap: f64,
}

fn grid_argmin<F: Fn(f64) -> f64>(lo: f64, hi: f64, points: usize, f: F) -> f64 {
    let ratio = (hi / lo).powf(1.0 / (points - 1) as f64);
    let mut best = (f64::INFINITY, lo);
    let mut x = lo;
    for _ in 0..points {
        let v = f(x);
        if v < best.0 {
            best = (v, x);
        }
        x *= ratio;
    }
    best.1
}

fn cmd_losses(args: &CommonArgs) -> Result<CommandOutput> {
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};

    let mut cfg: LossesConfig = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.grid_points < 2 || cfg.span_factor <= 1.0 {
        bail!("grid_points must be >= 2 and span_factor > 1");
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::with_capacity(2 * cfg.n_pairs);
    let mut max_gap: f64 = 0.0;
    for case in 0..cfg.n_pairs {
        let e: f64 = 10f64.powf(rng.random_range(-3.0..1.0));
        let p_star: f64 = rng.random_range(-10.0..10.0);
        let p = p_star + if case % 2 == 0 { e } else { -e };
        let argmin = grid_argmin(
            e / cfg.span_factor,
            e * cfg.span_factor,
            cfg.grid_points,
            |s| uncertainty_loss(p, p_star, s).expect("positive sigma"),
        );
        let gap = (argmin - e).abs() / e;
        max_gap = max_gap.max(gap);
        rows.push(LossRow {
            case,
            kind: "point",
            error_magnitude: e,
            argmin_sigma: argmin,
            rel_gap: gap,
        });

        let gt = [Vector3::zeros(); 8];
        let mut est = gt;
        let mut total = 0.0;
        for v in est.iter_mut() {
            let d = rng.random_range(0.0..e);
            v.x = d;
            total += d;
        }
        if total <= 0.0 {
            continue;
        }
        let argmin_b = grid_argmin(
            total / cfg.span_factor,
            total * cfg.span_factor,
            cfg.grid_points,
            |s| box_uncertainty_loss(&est, &gt, s, VertexNorm::L1).expect("positive sigma"),
        );
        let gap_b = (argmin_b - total).abs() / total;
        max_gap = max_gap.max(gap_b);
        rows.push(LossRow {
            case,
            kind: "box",
            error_magnitude: total,
            argmin_sigma: argmin_b,
            rel_gap: gap_b,
        });
    }

    let config = config_value(&cfg);
    let header = "case,kind,error_magnitude,argmin_sigma,rel_gap";
    let csv_rows: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{}",
                r.case, r.kind, r.error_magnitude, r.argmin_sigma, r.rel_gap
            )
        })
        .collect();
    let output = CommandOutput {
        csv: table_csv(&config, header, &csv_rows),
        json: table_json(&config, &rows),
        summary: format!("{} rows, max rel gap {max_gap:.2e}", rows.len()),
    };
    if max_gap > cfg.tolerance {
        // Write the report anyway so the failure can be inspected.
        let path = output_path(args, "losses-check");
        let text = match args.format {
            Format::Csv => &output.csv,
            Format::Json => &output.json,
        };
        write_text(&path, text)?;
        bail!(
            "loss minimizer drifted: max rel gap {max_gap:.2e} > {:.2e}",
            cfg.tolerance
        );
    }
    Ok(output)
}
