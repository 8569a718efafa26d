//! Command-line interface: generate / refine / detect-outliers / evaluate /
//! rank-check.
//!
//! Exit codes: 0 success; 2 invalid flags or unreadable/invalid input files;
//! 3 scene generation failure; 4 no usable view pair; 5 grid shape mismatch.

use std::path::PathBuf;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

/// Prints a line to stdout, ignoring broken pipes (e.g. piping into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

use crate::constraints::{build_gamma, build_lambda, rank_residual};
use crate::error::{Error, Result};
use crate::formats::{
    entry_ids, read_correspondences, write_correspondences, ConfigEcho, RunReport, StageReport,
};
use crate::grid::ObservationGrid;
use crate::normalize::NormTransform;
use crate::outliers::recognize_outliers;
use crate::pipeline::{compute_errors, main_refine, RefineConfig};
use crate::selfest::SubsetSampler;
use crate::synth::{corrupt, generate_scene, CorruptionSpec};

#[derive(Parser)]
#[command(
    name = "mvcorr",
    version,
    about = "Refine noisy multi-view point correspondences via rank constraints"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: ground-truth and corrupted correspondences.
    Generate(GenerateArgs),
    /// Run the staged refinement pipeline on a correspondence file.
    Refine(RefineArgs),
    /// Flag outliers without re-estimating or keeping refinements.
    DetectOutliers(DetectArgs),
    /// Compare an estimated correspondence file against ground truth.
    Evaluate(EvaluateArgs),
    /// Report rank-deficiency residuals of the constraint matrices.
    RankCheck(RankCheckArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of world points (M).
    #[arg(long)]
    points: usize,
    /// Number of views (N).
    #[arg(long)]
    views: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaussian noise standard deviation in pixels.
    #[arg(long, conflicts_with = "target_mean_error")]
    sigma: Option<f64>,
    /// Choose sigma so the mean per-point error equals this many pixels.
    #[arg(long)]
    target_mean_error: Option<f64>,
    /// Fraction of observed entries to displace as gross outliers.
    #[arg(long, default_value_t = 0.0)]
    outlier_rate: f64,
    /// Outlier displacement magnitude range, pixels (min,max).
    #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = vec![150.0, 300.0])]
    outlier_offset: Vec<f64>,
    /// Fraction of entries to mark missing.
    #[arg(long, default_value_t = 0.0)]
    missing_rate: f64,
    #[arg(long)]
    out_truth: PathBuf,
    #[arg(long)]
    out_noisy: PathBuf,
    /// Injected-outlier manifest path (default: <out-noisy>.manifest.json).
    #[arg(long)]
    out_manifest: Option<PathBuf>,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Per-stage outlier thresholds in pixels, strictly decreasing.
    #[arg(long, value_delimiter = ',', num_args = 1.., default_values_t = vec![60.0, 40.0, 20.0])]
    thresholds: Vec<f64>,
    /// Number of stages; must match the threshold count.
    #[arg(long, default_value_t = 3)]
    kappa: usize,
    #[arg(long, default_value_t = 10)]
    inner_iters: usize,
    /// Cap on sampled subsets per estimation context.
    #[arg(long, default_value_t = 100)]
    subset_cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write a JSON run report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    input: PathBuf,
    /// Outlier threshold in pixels.
    #[arg(long, default_value_t = 60.0)]
    theta: f64,
    #[arg(long, default_value_t = 10)]
    inner_iters: usize,
    /// Write the working grid (flagged entries masked) here.
    #[arg(long)]
    out_working: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct RankCheckArgs {
    #[arg(long)]
    input: PathBuf,
    /// Also report residuals for this ground-truth file.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Cap on sampled 6-point blocks for the multi-view matrix.
    #[arg(long, default_value_t = 20)]
    subset_cap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `std::env::args` and dispatches; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(&args),
        Command::Refine(args) => cmd_refine(&args),
        Command::DetectOutliers(args) => cmd_detect_outliers(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::RankCheck(args) => cmd_rank_check(&args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::GenerationFailure { .. } => 3,
        Error::NoUsablePairs => 4,
        Error::ShapeMismatch(_) => 5,
        _ => 2,
    }
}

fn offset_pair(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() != 2 || values[0] > values[1] || values[0] < 0.0 {
        return Err(Error::ShapeError(format!(
            "--outlier-offset needs min,max with 0 <= min <= max, got {values:?}"
        )));
    }
    Ok((values[0], values[1]))
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let sigma = match (args.sigma, args.target_mean_error) {
        (Some(s), _) => s,
        (None, Some(mean)) => {
            if mean < 0.0 {
                return Err(Error::ShapeError(format!(
                    "--target-mean-error must be nonnegative, got {mean}"
                )));
            }
            CorruptionSpec::sigma_for_mean_error(mean)
        }
        (None, None) => 0.0,
    };
    let scene = generate_scene(args.points, args.views, args.seed)?;
    let spec = CorruptionSpec {
        sigma,
        outlier_rate: args.outlier_rate,
        outlier_offset: offset_pair(&args.outlier_offset)?,
        missing_rate: args.missing_rate,
        // Decorrelate the corruption stream from the scene stream.
        seed: args.seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
        image_size: scene.image_size,
    };
    let corrupted = corrupt(&scene.grid, &spec)?;
    write_correspondences(&args.out_truth, &scene.grid)?;
    write_correspondences(&args.out_noisy, &corrupted.grid)?;

    let mut report = RunReport::new("generate", args.points, args.views);
    report.seed = Some(args.seed);
    report.injected_outliers = Some(entry_ids(&corrupted.injected));
    report.clamp_events = Some(corrupted.clamp_events);
    let manifest_path = args.out_manifest.clone().unwrap_or_else(|| {
        let mut s = args.out_noisy.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    });
    report.write(&manifest_path)?;

    say!(
        "generated {} points x {} views (seed {}); sigma {:.3} px, {} injected outliers, {} clamped",
        args.points,
        args.views,
        args.seed,
        sigma,
        corrupted.injected.len(),
        corrupted.clamp_events,
    );
    Ok(())
}

/// Attaches a point-count hint when no view pair has enough co-observed
/// points, so undersized grids get an actionable message.
fn diagnose_no_pairs(e: Error, grid: &ObservationGrid) -> Error {
    if matches!(e, Error::NoUsablePairs) && grid.points() < 9 {
        eprintln!(
            "note: insufficient points — every view pair needs at least 9 co-observed points, \
             but the grid has only {} points per view",
            grid.points()
        );
    }
    e
}

fn cmd_refine(args: &RefineArgs) -> Result<()> {
    let start = Instant::now();
    let config = RefineConfig {
        kappa: args.kappa,
        thresholds: args.thresholds.clone(),
        inner_iters: args.inner_iters,
        subset_cap: args.subset_cap,
        seed: args.seed,
    };
    config.validate()?;
    let grid = read_correspondences(&args.input)?;
    let outcome = main_refine(&grid, &config).map_err(|e| diagnose_no_pairs(e, &grid))?;
    write_correspondences(&args.output, &outcome.grid)?;

    let flagged: usize = outcome.stages.iter().map(|s| s.outliers.len()).sum();
    if let Some(path) = &args.report {
        let mut report = RunReport::new("refine", grid.points(), grid.views());
        report.seed = Some(args.seed);
        report.config = Some(ConfigEcho {
            kappa: config.kappa,
            thresholds: config.thresholds.clone(),
            inner_iters: config.inner_iters,
            subset_cap: config.subset_cap,
            seed: config.seed,
        });
        report.stages = Some(
            outcome
                .stages
                .iter()
                .map(|s| StageReport {
                    stage: s.stage,
                    threshold: s.threshold,
                    outliers: entry_ids(&s.outliers),
                    truncated: s.recognition_truncated,
                    unrecoverable: entry_ids(&s.unrecoverable),
                })
                .collect(),
        );
        report.mean_change_from_input =
            Some(compute_errors(&outcome.grid, &grid)?.correspondence_error);
        report.timing_ms = Some(start.elapsed().as_secs_f64() * 1e3);
        report.write(path)?;
    }
    say!(
        "refined {} points x {} views in {} stages; {} entries flagged",
        grid.points(),
        grid.views(),
        outcome.stages.len(),
        flagged,
    );
    Ok(())
}

fn cmd_detect_outliers(args: &DetectArgs) -> Result<()> {
    let start = Instant::now();
    let grid = read_correspondences(&args.input)?;
    let rec = recognize_outliers(&grid, args.theta, args.inner_iters)
        .map_err(|e| diagnose_no_pairs(e, &grid))?;
    for id in entry_ids(&rec.outliers) {
        say!("outlier: point {} view {}", id.point_id, id.view_id);
    }
    say!(
        "{} outliers at threshold {}{}",
        rec.outliers.len(),
        args.theta,
        if rec.truncated { " (truncated)" } else { "" },
    );
    if let Some(path) = &args.out_working {
        write_correspondences(path, &rec.working)?;
    }
    if let Some(path) = &args.report {
        let mut report = RunReport::new("detect-outliers", grid.points(), grid.views());
        report.outliers = Some(entry_ids(&rec.outliers));
        report.truncated = Some(rec.truncated);
        report.timing_ms = Some(start.elapsed().as_secs_f64() * 1e3);
        report.write(path)?;
    }
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let estimate = read_correspondences(&args.estimate)?;
    let truth = read_correspondences(&args.truth)?;
    let errors = compute_errors(&estimate, &truth)?;
    say!(
        "entries evaluated: {}\ncorrespondence error: {:.6} px\nmedian error: {:.6} px",
        errors.entries_evaluated, errors.correspondence_error, errors.median_error,
    );
    for (n, e) in errors.image_errors.iter().enumerate() {
        match e {
            Some(v) => say!("view {}: {:.6} px", n + 1, v),
            None => say!("view {}: no common entries", n + 1),
        }
    }
    say!("histogram (10 px bins): {:?}", errors.histogram);
    if let Some(path) = &args.report {
        let mut report = RunReport::new("evaluate", estimate.points(), estimate.views());
        report.entries_evaluated = Some(errors.entries_evaluated);
        report.correspondence_error = Some(errors.correspondence_error);
        report.median_error = Some(errors.median_error);
        report.image_errors = Some(errors.image_errors.clone());
        report.histogram_10px = Some(errors.histogram.clone());
        report.write(path)?;
    }
    Ok(())
}

fn rank_check_one(label: &str, grid: &ObservationGrid, cap: usize, seed: u64) {
    let mut gamma_max: f64 = 0.0;
    for n1 in 0..grid.views() {
        for n2 in n1 + 1..grid.views() {
            let co = grid.co_observed(n1, n2);
            if co.len() < 9 {
                continue;
            }
            let a: Vec<_> = co.iter().map(|&m| grid.get(n1, m).unwrap()).collect();
            let b: Vec<_> = co.iter().map(|&m| grid.get(n2, m).unwrap()).collect();
            let ta = NormTransform::fit(&a);
            let tb = NormTransform::fit(&b);
            let pairs: Vec<_> = a
                .iter()
                .zip(&b)
                .map(|(&pa, &pb)| (ta.forward(pa), tb.forward(pb)))
                .collect();
            let residual = build_gamma(&pairs)
                .and_then(|g| rank_residual(&g, 8))
                .unwrap_or(f64::NAN);
            say!("{label} gamma pair ({},{}): {residual:.3e}", n1 + 1, n2 + 1);
            gamma_max = gamma_max.max(residual);
        }
    }
    say!("{label} gamma max: {gamma_max:.3e}");

    let all_views: Vec<usize> = (0..grid.views()).collect();
    let sampler = SubsetSampler::new(seed, cap);
    let mut lambda_max: f64 = 0.0;
    let mut blocks = 0;
    if grid.points() >= 6 && grid.views() >= 5 {
        for subset in sampler.subsets(grid.points(), 6, &[0xC0DE]) {
            let ids: [usize; 6] = [
                subset[0], subset[1], subset[2], subset[3], subset[4], subset[5],
            ];
            let residual = match build_lambda(grid, &ids, &all_views)
                .and_then(|l| rank_residual(&l, 4))
            {
                Ok(r) => r,
                Err(_) => continue,
            };
            let ids_1: Vec<usize> = ids.iter().map(|&m| m + 1).collect();
            say!("{label} lambda block {ids_1:?}: {residual:.3e}");
            lambda_max = lambda_max.max(residual);
            blocks += 1;
        }
    }
    if blocks > 0 {
        say!("{label} lambda max: {lambda_max:.3e}");
    } else {
        say!("{label} lambda: no usable 6-point blocks (needs >= 6 points and >= 5 views)");
    }
}

fn cmd_rank_check(args: &RankCheckArgs) -> Result<()> {
    let grid = read_correspondences(&args.input)?;
    rank_check_one("input", &grid, args.subset_cap, args.seed);
    if let Some(path) = &args.truth {
        let truth = read_correspondences(path)?;
        rank_check_one("truth", &truth, args.subset_cap, args.seed);
    }
    Ok(())
}
