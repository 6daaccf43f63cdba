//! Command line front end: `fdr fit|sure|bands|simulate --config <path>`.
//!
//! Every run writes its artifacts plus a manifest embedding the fully
//! resolved configuration; pointing `--config` at that manifest replays
//! the run. Exit codes: 0 success (including flagged non-convergence),
//! 2 configuration errors, 3 input and output errors, 4 solver or
//! resampling failures.

mod config;

use clap::{Args, Parser, Subcommand};
use config::{load_config, BandMethod, Manifest, RunConfig};
use fdr_core::grid::{bin_points, GridSpec, PointCloud};
use fdr_core::inference::{conformal_bands, subsample_bands};
use fdr_core::segmentation::{extract_jump_set, FdrEstimate};
use fdr_core::simulate::run_monte_carlo;
use fdr_core::solver::{solve, SolveReport};
use fdr_core::sure::sure_search;
use fdr_core::{FdrError, Result};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "fdr", version, about = "Free-discontinuity regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the surface and jump set from a CSV point cloud.
    Fit(CommonArgs),
    /// Search the two hyperparameters by unbiased risk estimation.
    Sure(CommonArgs),
    /// Fit, then wrap the estimate in uncertainty bands.
    Bands(CommonArgs),
    /// Run the synthetic Monte Carlo protocol and tabulate metrics.
    Simulate(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration, or the manifest.json of a previous run.
    #[arg(long)]
    config: PathBuf,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread count override; 0 uses all cores.
    #[arg(long)]
    workers: Option<usize>,
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    });
}

fn exit_code(e: &FdrError) -> i32 {
    match e {
        FdrError::BadConfig(_) | FdrError::GridMismatch(_) | FdrError::ShapeMismatch => 2,
        FdrError::Io(_)
        | FdrError::Csv(_)
        | FdrError::EmptyCloud
        | FdrError::NonFiniteInput(_) => 3,
        _ => 4,
    }
}

fn run(cli: Cli) -> Result<()> {
    let (name, args) = match &cli.command {
        Command::Fit(a) => ("fit", a),
        Command::Sure(a) => ("sure", a),
        Command::Bands(a) => ("bands", a),
        Command::Simulate(a) => ("simulate", a),
    };
    let mut cfg = load_config(&args.config)?;
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .map_err(|e| FdrError::BadConfig(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&cfg.out)?;
    match name {
        "fit" => cmd_fit(&cfg)?,
        "sure" => cmd_sure(&cfg)?,
        "bands" => cmd_bands(&cfg)?,
        _ => cmd_simulate(&cfg)?,
    }
    write_manifest(name, &cfg)?;
    Ok(())
}

fn load_input(cfg: &RunConfig) -> Result<(PointCloud, GridSpec)> {
    let cloud = PointCloud::from_csv(cfg.input_path()?)?;
    let grid = cfg.grid.build(&cloud)?;
    Ok((cloud, grid))
}

fn fit_estimate(
    cfg: &RunConfig,
    cloud: &PointCloud,
    grid: &GridSpec,
) -> Result<(SolveReport, FdrEstimate)> {
    let binned = bin_points(cloud, grid, &cfg.binning)?;
    let report = solve(&binned, grid, &cfg.solver)?;
    let estimate = FdrEstimate::from_solution(&report.v_star, grid, cfg.solver.nu)?;
    if !report.converged {
        eprintln!(
            "warning: solver stopped at iteration {} with residual {:.3e} above tolerance {:.3e}",
            report.iterations, report.residual, cfg.solver.tol
        );
    }
    Ok((report, estimate))
}

fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    let (cloud, grid) = load_input(cfg)?;
    let (report, estimate) = fit_estimate(cfg, &cloud, &grid)?;
    write_surface_csv(&cfg.out.join("u_hat.csv"), &grid, &estimate)?;
    write_jump_csv(&cfg.out.join("jump_set.csv"), &grid, &estimate, None)?;
    let summary = serde_json::json!({
        "command": "fit",
        "lambda": cfg.solver.lambda,
        "nu": cfg.solver.nu,
        "iterations": report.iterations,
        "residual": report.residual,
        "energy": report.energy,
        "feasibility_gap": report.feasibility_gap,
        "converged": report.converged,
        "n_points": cloud.len(),
        "dim": grid.dim(),
        "n_cells": grid.n_cells,
        "s_levels": grid.s_levels,
        "n_jump_cells": estimate.jump_mask.iter().filter(|&&m| m).count(),
    });
    write_json(&cfg.out.join("summary.json"), &summary)?;
    println!(
        "fit: {} cells, {} jump cells, {} iterations",
        grid.spatial_len(),
        estimate.jump_mask.iter().filter(|&&m| m).count(),
        report.iterations
    );
    Ok(())
}

fn cmd_sure(cfg: &RunConfig) -> Result<()> {
    let (cloud, grid) = load_input(cfg)?;
    let sure_cfg = cfg.sure_config();
    let (lambda, nu, table) = sure_search(&cloud, &grid, &cfg.binning, &sure_cfg, &cfg.solver)?;
    let mut w = csv::Writer::from_path(cfg.out.join("sure_table.csv"))?;
    w.write_record(["lambda", "nu", "eta"])?;
    for entry in &table {
        w.write_record(&[
            entry.lambda.to_string(),
            entry.nu.to_string(),
            entry.eta.to_string(),
        ])?;
    }
    w.flush()?;
    let failed = table.iter().filter(|e| !e.eta.is_finite()).count();
    let summary = serde_json::json!({
        "command": "sure",
        "lambda": lambda,
        "nu": nu,
        "n_candidates": table.len(),
        "n_failed": failed,
    });
    write_json(&cfg.out.join("summary.json"), &summary)?;
    println!("sure: selected lambda={lambda} nu={nu} from {} candidates", table.len());
    Ok(())
}

/// All band artifacts are centred on the surface the chosen method
/// actually brackets: the full-sample fit for subsampling, the
/// fitting-half fit for split conformal.
fn cmd_bands(cfg: &RunConfig) -> Result<()> {
    let (cloud, grid) = load_input(cfg)?;
    let seed = cfg.seed.wrapping_add(cfg.inference.seed);
    let (center, lower, upper, significant, converged, band_stats) = match cfg.inference.method {
        BandMethod::Subsampling => {
            let sub_cfg = cfg.inference.subsampling(cfg.seed);
            let bands = subsample_bands(&cloud, &grid, &cfg.binning, &cfg.solver, &sub_cfg)?;
            let stats = serde_json::json!({
                "method": "subsampling",
                "alpha": sub_cfg.alpha,
                "beta_hat": bands.beta_hat,
                "z_alpha": bands.z_alpha,
                "beta_hat_diff": bands.beta_hat_diff,
                "z_alpha_diff": bands.z_alpha_diff,
                "dropped_reps": bands.dropped_reps,
            });
            (
                bands.u_hat,
                bands.lower,
                bands.upper,
                bands.significant_jump_mask,
                bands.full_converged,
                stats,
            )
        }
        BandMethod::Conformal => {
            let bands = conformal_bands(
                &cloud,
                &grid,
                &cfg.binning,
                &cfg.solver,
                cfg.inference.alpha,
                seed,
            )?;
            let stats = serde_json::json!({
                "method": "conformal",
                "alpha": cfg.inference.alpha,
                "d_alpha": bands.d_alpha,
                "d_alpha_jump": bands.d_alpha_jump,
            });
            (
                bands.u_hat,
                bands.lower,
                bands.upper,
                bands.significant_jump_mask,
                bands.fit_converged,
                stats,
            )
        }
    };
    if !converged {
        eprintln!("warning: band centre fit did not reach the solver tolerance");
    }

    let (jump_mask, jump_size, _) = extract_jump_set(&center, &grid, cfg.solver.nu)?;
    write_bands_csv(&cfg.out.join("bands.csv"), &grid, &center, &lower, &upper)?;
    let mut w = csv::Writer::from_path(cfg.out.join("jump_significance.csv"))?;
    w.write_record(coordinate_headers(grid.dim(), &["jump_size", "significant"]))?;
    for c in 0..grid.spatial_len() {
        if !jump_mask[c] {
            continue;
        }
        let mut record: Vec<String> = grid.cell_center(c).iter().map(f64::to_string).collect();
        record.push(jump_size[c].to_string());
        record.push(u8::from(significant[c]).to_string());
        w.write_record(&record)?;
    }
    w.flush()?;

    let n_jump = jump_mask.iter().filter(|&&m| m).count();
    let n_significant = jump_mask
        .iter()
        .zip(&significant)
        .filter(|&(&m, &s)| m && s)
        .count();
    let summary = serde_json::json!({
        "command": "bands",
        "lambda": cfg.solver.lambda,
        "nu": cfg.solver.nu,
        "converged": converged,
        "n_jump_cells": n_jump,
        "n_significant": n_significant,
        "bands": band_stats,
    });
    write_json(&cfg.out.join("summary.json"), &summary)?;
    println!("bands: {n_significant} of {n_jump} jump cells significant");
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let protocol = cfg.protocol()?;
    let rows = run_monte_carlo(&protocol)?;
    let mut w = csv::Writer::from_path(cfg.out.join("table.csv"))?;
    w.write_record([
        "dim",
        "cohens_d",
        "n",
        "alpha_true",
        "alpha_hat",
        "mse_u",
        "mse_tau",
        "bias_tau",
        "fnr",
        "fpr",
        "lambda",
        "nu",
        "reps_used",
        "converged_fraction",
    ])?;
    for row in &rows {
        w.write_record(&[
            row.dim.to_string(),
            row.cohens_d.to_string(),
            row.n.to_string(),
            row.alpha_true.to_string(),
            row.alpha_hat.to_string(),
            row.metrics.mse_u.to_string(),
            row.metrics.mse_tau.to_string(),
            row.metrics.bias_tau.to_string(),
            row.metrics.fnr.to_string(),
            row.metrics.fpr.to_string(),
            row.lambda.to_string(),
            row.nu.to_string(),
            row.reps_used.to_string(),
            row.converged_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    let summary = serde_json::json!({
        "command": "simulate",
        "rows": rows.len(),
        "reps_per_row": protocol.reps,
    });
    write_json(&cfg.out.join("summary.json"), &summary)?;
    println!("simulate: {} rows written", rows.len());
    Ok(())
}

fn coordinate_headers(dim: usize, extra: &[&str]) -> Vec<String> {
    let mut headers: Vec<String> = (1..=dim).map(|j| format!("x{j}")).collect();
    headers.extend(extra.iter().map(|s| s.to_string()));
    headers
}

fn write_surface_csv(path: &Path, grid: &GridSpec, estimate: &FdrEstimate) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(coordinate_headers(grid.dim(), &["u_hat", "gradient_mag"]))?;
    for c in 0..grid.spatial_len() {
        let mut record: Vec<String> = grid.cell_center(c).iter().map(f64::to_string).collect();
        record.push(estimate.u_hat[c].to_string());
        record.push(estimate.gradient_mag[c].to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Jump-cell table; with a significance mask the file gains a 0/1 column.
fn write_jump_csv(
    path: &Path,
    grid: &GridSpec,
    estimate: &FdrEstimate,
    significant: Option<&[bool]>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let extra: &[&str] = if significant.is_some() {
        &["jump_size", "significant"]
    } else {
        &["jump_size"]
    };
    w.write_record(coordinate_headers(grid.dim(), extra))?;
    for c in 0..grid.spatial_len() {
        if !estimate.jump_mask[c] {
            continue;
        }
        let mut record: Vec<String> = grid.cell_center(c).iter().map(f64::to_string).collect();
        record.push(estimate.jump_size[c].to_string());
        if let Some(mask) = significant {
            record.push(u8::from(mask[c]).to_string());
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

fn write_bands_csv(
    path: &Path,
    grid: &GridSpec,
    center: &[f64],
    lower: &[f64],
    upper: &[f64],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(coordinate_headers(grid.dim(), &["u_hat", "lower", "upper"]))?;
    for c in 0..grid.spatial_len() {
        let mut record: Vec<String> = grid.cell_center(c).iter().map(f64::to_string).collect();
        record.push(center[c].to_string());
        record.push(lower[c].to_string());
        record.push(upper[c].to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| FdrError::BadConfig(format!("serialize {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn write_manifest(command: &str, cfg: &RunConfig) -> Result<()> {
    let config_toml = toml::to_string_pretty(cfg)
        .map_err(|e| FdrError::BadConfig(format!("serialize config: {e}")))?;
    let digest = Sha256::digest(config_toml.as_bytes());
    let manifest = Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config_sha256: format!("{digest:x}"),
        config_toml,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| FdrError::BadConfig(format!("serialize manifest: {e}")))?;
    std::fs::write(cfg.out.join("manifest.json"), text + "\n")?;
    Ok(())
}
