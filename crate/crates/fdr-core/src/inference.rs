//! Uncertainty quantification for fitted surfaces: subsampling
//! confidence bands with an estimated convergence rate, and split
//! conformal prediction bands.
//!
//! Both routines also produce per-axis bands on the forward differences
//! of the surface. A cell's jump is flagged significant when the largest
//! lower difference bound is above zero or the smallest upper bound is
//! below zero, taken over the axes that have an interior neighbor.

use crate::error::{FdrError, Result};
use crate::grid::{bin_points, BinningOptions, GridSpec, PointCloud};
use crate::segmentation::threshold_level_set;
use crate::solver::{solve_warm, SolverConfig};
use crate::stats::{covariance, quantile_sorted, sort_floats, variance};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;

/// Configuration of the subsampling routine.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubsamplingConfig {
    /// Repetitions per subsample size.
    pub j_reps: usize,
    /// Subsample sizes, each below the sample size; at least two distinct
    /// sizes are needed to estimate the rate.
    pub block_sizes: Vec<usize>,
    /// Miscoverage level.
    pub alpha: f64,
    /// Quantile pairs whose log spreads drive the rate regression.
    pub quantile_pairs: Vec<(f64, f64)>,
    pub seed: u64,
}

impl Default for SubsamplingConfig {
    fn default() -> Self {
        Self {
            j_reps: 100,
            block_sizes: Vec::new(),
            alpha: 0.05,
            quantile_pairs: vec![(0.25, 0.75), (0.10, 0.90)],
            seed: 0,
        }
    }
}

impl SubsamplingConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.j_reps < 2 {
            return Err(FdrError::BadConfig("need at least 2 repetitions".into()));
        }
        if self.block_sizes.is_empty() {
            return Err(FdrError::BadConfig("no subsample sizes given".into()));
        }
        for &b in &self.block_sizes {
            if b == 0 || b >= n {
                return Err(FdrError::BadConfig(format!(
                    "subsample size {b} outside 1..{n}"
                )));
            }
        }
        let first = self.block_sizes[0];
        if self.block_sizes.iter().all(|&b| b == first) {
            return Err(FdrError::BadConfig(
                "need at least two distinct subsample sizes".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(FdrError::BadConfig(format!("alpha {}", self.alpha)));
        }
        if self.quantile_pairs.is_empty() {
            return Err(FdrError::BadConfig("no quantile pairs given".into()));
        }
        for &(s, t) in &self.quantile_pairs {
            if !(0.0 < s && s < t && t < 1.0) {
                return Err(FdrError::BadConfig(format!("quantile pair ({s}, {t})")));
            }
        }
        Ok(())
    }
}

/// Subsampling confidence bands around a fitted surface.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BandResult {
    /// Full-sample surface the bands are centred on.
    pub u_hat: Vec<f64>,
    /// Per-cell band bounds; `lower <= u_hat <= upper` by construction.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Estimated convergence-rate exponent of the surface statistic,
    /// clamped to `[0, 2]`.
    pub beta_hat: f64,
    /// Critical value of the rescaled sup deviation.
    pub z_alpha: f64,
    /// Per-axis bands on the forward differences of the surface,
    /// indexed `[axis][cell]`; zero-width placeholders on outflow faces.
    pub diff_lower: Vec<Vec<f64>>,
    pub diff_upper: Vec<Vec<f64>>,
    pub beta_hat_diff: f64,
    pub z_alpha_diff: f64,
    /// Cells whose difference band excludes zero along some interior
    /// axis. Intersect with a jump mask to report significant jumps.
    pub significant_jump_mask: Vec<bool>,
    /// Subsample fits dropped because the solver failed.
    pub dropped_reps: usize,
    /// Whether the full-sample fit reported convergence (always true for
    /// stub estimators).
    pub full_converged: bool,
}

/// Subsampling bands for the lifted solver at fixed grid and
/// hyperparameters. Subsample fits warm-start from the full-sample
/// solution, which changes only the convergence path, never the limit.
pub fn subsample_bands(
    cloud: &PointCloud,
    grid: &GridSpec,
    binning: &BinningOptions,
    solver: &SolverConfig,
    cfg: &SubsamplingConfig,
) -> Result<BandResult> {
    let binned = bin_points(cloud, grid, binning)?;
    let report = solve_warm(&binned, grid, solver, None)?;
    let u_full = threshold_level_set(&report.v_star, grid)?;
    let v_full = report.v_star;
    let estimate = |sub: &PointCloud| -> Result<Vec<f64>> {
        let b = bin_points(sub, grid, binning)?;
        let r = solve_warm(&b, grid, solver, Some(&v_full))?;
        threshold_level_set(&r.v_star, grid)
    };
    let mut out = subsample_core(&u_full, cloud, grid, cfg, &estimate)?;
    out.full_converged = report.converged;
    Ok(out)
}

/// Subsampling bands for an arbitrary estimator mapping a point cloud to
/// a per-cell surface. The full-sample surface comes from the same
/// estimator.
pub fn subsample_bands_with<E>(
    cloud: &PointCloud,
    grid: &GridSpec,
    cfg: &SubsamplingConfig,
    estimate: E,
) -> Result<BandResult>
where
    E: Fn(&PointCloud) -> Result<Vec<f64>> + Sync,
{
    let u_full = estimate(cloud)?;
    subsample_core(&u_full, cloud, grid, cfg, &estimate)
}

fn subsample_core<E>(
    u_full: &[f64],
    cloud: &PointCloud,
    grid: &GridSpec,
    cfg: &SubsamplingConfig,
    estimate: &E,
) -> Result<BandResult>
where
    E: Fn(&PointCloud) -> Result<Vec<f64>> + Sync,
{
    cfg.validate(cloud.len())?;
    grid.validate()?;
    let m = grid.spatial_len();
    if u_full.len() != m {
        return Err(FdrError::ShapeMismatch);
    }
    let d_full = forward_diffs(u_full, grid);
    let interior = interior_axes(grid);
    let n = cloud.len();
    let k_sizes = cfg.block_sizes.len();
    let total = cfg.j_reps * k_sizes;

    // one deterministic RNG stream per (rep, size) task
    let stats: Vec<Option<(f64, f64)>> = (0..total)
        .into_par_iter()
        .map(|task| {
            let b = cfg.block_sizes[task % k_sizes];
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(task as u64 + 1);
            let idx = rand::seq::index::sample(&mut rng, n, b).into_vec();
            let sub = cloud.subset(&idx)?;
            let u_star = match estimate(&sub) {
                Ok(u) => u,
                Err(FdrError::SolverFailure(_)) | Err(FdrError::NonFiniteIterate(_)) => {
                    return Ok(None)
                }
                Err(e) => return Err(e),
            };
            if u_star.len() != m {
                return Err(FdrError::ShapeMismatch);
            }
            let mut z = 0.0f64;
            for c in 0..m {
                z = z.max((u_star[c] - u_full[c]).abs());
            }
            let d_star = forward_diffs(&u_star, grid);
            let mut z_diff = 0.0f64;
            for (a, axis_ok) in interior.iter().enumerate() {
                for c in 0..m {
                    if axis_ok[c] {
                        z_diff = z_diff.max((d_star[a][c] - d_full[a][c]).abs());
                    }
                }
            }
            Ok(Some((z, z_diff)))
        })
        .collect::<Result<_>>()?;

    let dropped = stats.iter().filter(|s| s.is_none()).count();
    if dropped * 5 > total {
        return Err(FdrError::TooFewReps {
            kept: total - dropped,
            total,
        });
    }

    let mut z_by_k: Vec<Vec<f64>> = vec![Vec::new(); k_sizes];
    let mut zd_by_k: Vec<Vec<f64>> = vec![Vec::new(); k_sizes];
    for (task, stat) in stats.iter().enumerate() {
        if let Some((z, zd)) = stat {
            z_by_k[task % k_sizes].push(*z);
            zd_by_k[task % k_sizes].push(*zd);
        }
    }
    for kept in &z_by_k {
        if kept.len() < 2 {
            return Err(FdrError::TooFewReps {
                kept: kept.len(),
                total: cfg.j_reps,
            });
        }
    }

    let (beta_hat, z_alpha) = rate_and_critical(&z_by_k, cfg)?;
    let (beta_hat_diff, z_alpha_diff) = rate_and_critical(&zd_by_k, cfg)?;
    let nf = n as f64;
    let width = z_alpha / nf.powf(beta_hat);
    let width_diff = z_alpha_diff / nf.powf(beta_hat_diff);

    let lower: Vec<f64> = u_full.iter().map(|&u| u - width).collect();
    let upper: Vec<f64> = u_full.iter().map(|&u| u + width).collect();
    let mut diff_lower = Vec::with_capacity(d_full.len());
    let mut diff_upper = Vec::with_capacity(d_full.len());
    for axis in &d_full {
        diff_lower.push(axis.iter().map(|&v| v - width_diff).collect::<Vec<f64>>());
        diff_upper.push(axis.iter().map(|&v| v + width_diff).collect::<Vec<f64>>());
    }
    let significant_jump_mask =
        significance_mask(&diff_lower, &diff_upper, &interior, m);

    Ok(BandResult {
        u_hat: u_full.to_vec(),
        lower,
        upper,
        beta_hat,
        z_alpha,
        diff_lower,
        diff_upper,
        beta_hat_diff,
        z_alpha_diff,
        significant_jump_mask,
        dropped_reps: dropped,
        full_converged: true,
    })
}

/// Rate exponent from regressing mean log quantile spreads on log sizes,
/// then the critical value from the rescaled statistics at the largest
/// size: the k-th smallest with k = ceil((J+1)(1-alpha)).
///
/// A size whose statistics are so concentrated that some quantile spread
/// is exactly zero carries no usable scale information and is left out
/// of the regression; with fewer than two informative sizes the exponent
/// falls back to zero, so the critical value is read off the unrescaled
/// statistics.
fn rate_and_critical(z_by_k: &[Vec<f64>], cfg: &SubsamplingConfig) -> Result<(f64, f64)> {
    let mut log_b = Vec::with_capacity(z_by_k.len());
    let mut y_bar = Vec::with_capacity(z_by_k.len());
    for (k, zs) in z_by_k.iter().enumerate() {
        let mut sorted = zs.clone();
        sort_floats(&mut sorted);
        let mut acc = 0.0;
        let mut informative = true;
        for &(s, t) in &cfg.quantile_pairs {
            let spread = quantile_sorted(&sorted, t) - quantile_sorted(&sorted, s);
            if spread > 0.0 {
                acc += spread.ln();
            } else {
                informative = false;
            }
        }
        if informative {
            log_b.push((cfg.block_sizes[k] as f64).ln());
            y_bar.push(acc / cfg.quantile_pairs.len() as f64);
        }
    }
    let var = variance(&log_b);
    // Discretized estimators can leave only a couple of informative sizes,
    // where the regression slope is dominated by quantization noise; rates
    // outside [0, 2] are not meaningful for a convergent statistic.
    let beta = if log_b.len() >= 2 && var > 0.0 {
        (-covariance(&y_bar, &log_b) / var).clamp(0.0, 2.0)
    } else {
        0.0
    };
    if !beta.is_finite() {
        return Err(FdrError::SolverFailure(format!(
            "rate regression produced {beta}"
        )));
    }

    let k_star = cfg
        .block_sizes
        .iter()
        .enumerate()
        .max_by_key(|&(_, &b)| b)
        .map(|(i, _)| i)
        .unwrap_or(0);
    let scale = (cfg.block_sizes[k_star] as f64).powf(beta);
    let mut rescaled: Vec<f64> = z_by_k[k_star].iter().map(|&z| scale * z).collect();
    sort_floats(&mut rescaled);
    let j = rescaled.len();
    let k = ((j + 1) as f64 * (1.0 - cfg.alpha)).ceil() as usize;
    let z_alpha = if k > j {
        f64::INFINITY
    } else {
        rescaled[k.max(1) - 1]
    };
    Ok((beta, z_alpha))
}

/// Split conformal prediction bands.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConformalResult {
    /// Surface fitted on the fitting half; the bands bracket this
    /// surface, not a full-sample fit.
    pub u_hat: Vec<f64>,
    /// Per-cell band bounds; `lower <= u_hat <= upper` by construction.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Half-width for the surface bands.
    pub d_alpha: f64,
    /// Per-axis bands on the forward differences, indexed `[axis][cell]`.
    pub diff_lower: Vec<Vec<f64>>,
    pub diff_upper: Vec<Vec<f64>>,
    /// Half-width for the difference bands.
    pub d_alpha_jump: f64,
    /// Cells whose difference band excludes zero along some interior
    /// axis.
    pub significant_jump_mask: Vec<bool>,
    pub fit_converged: bool,
}

/// Split conformal bands for the lifted solver at fixed grid and
/// hyperparameters.
pub fn conformal_bands(
    cloud: &PointCloud,
    grid: &GridSpec,
    binning: &BinningOptions,
    solver: &SolverConfig,
    alpha: f64,
    seed: u64,
) -> Result<ConformalResult> {
    let mut converged = true;
    let mut out = conformal_bands_with(cloud, grid, alpha, seed, |fit: &PointCloud| {
        let binned = bin_points(fit, grid, binning)?;
        let report = solve_warm(&binned, grid, solver, None)?;
        converged = report.converged;
        threshold_level_set(&report.v_star, grid)
    })?;
    out.fit_converged = converged;
    Ok(out)
}

/// Split conformal bands for an arbitrary estimator.
///
/// The indices are split at random into a fitting half and a scoring
/// half. Surface residuals compare each scoring response with the fit in
/// its cell; the band half-width is the k-th smallest residual with
/// k = ceil((m+1)(1-alpha)) for m scoring points, infinite when k exceeds
/// m. Difference residuals compare the fit's forward differences with
/// those of the scoring response nearest each cell center, pooled over
/// interior axes.
pub fn conformal_bands_with<E>(
    cloud: &PointCloud,
    grid: &GridSpec,
    alpha: f64,
    seed: u64,
    estimate: E,
) -> Result<ConformalResult>
where
    E: FnOnce(&PointCloud) -> Result<Vec<f64>>,
{
    grid.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(FdrError::BadConfig(format!("alpha {alpha}")));
    }
    let n = cloud.len();
    if n < 2 {
        return Err(FdrError::BadConfig(format!(
            "conformal split needs at least 2 points, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let (fit_idx, score_idx) = order.split_at(n / 2);
    let fit_cloud = cloud.subset(fit_idx)?;
    let u_hat = estimate(&fit_cloud)?;
    let m = grid.spatial_len();
    if u_hat.len() != m {
        return Err(FdrError::ShapeMismatch);
    }

    let mut residuals: Vec<f64> = score_idx
        .iter()
        .map(|&i| (cloud.y(i) - u_hat[grid.cell_of(cloud.x(i))]).abs())
        .collect();
    let d_alpha = conformal_quantile(&mut residuals, alpha);

    // response surrogate per cell: the scoring response nearest the center
    let y_prime = nearest_responses(cloud, score_idx, grid);
    let d_hat = forward_diffs(&u_hat, grid);
    let d_resp = forward_diffs(&y_prime, grid);
    let interior = interior_axes(grid);
    let mut jump_residuals = Vec::new();
    for &i in score_idx {
        let c = grid.cell_of(cloud.x(i));
        for (a, axis_ok) in interior.iter().enumerate() {
            if axis_ok[c] {
                jump_residuals.push((d_resp[a][c] - d_hat[a][c]).abs());
            }
        }
    }
    let d_alpha_jump = conformal_quantile(&mut jump_residuals, alpha);

    let lower: Vec<f64> = u_hat.iter().map(|&u| u - d_alpha).collect();
    let upper: Vec<f64> = u_hat.iter().map(|&u| u + d_alpha).collect();
    let mut diff_lower = Vec::with_capacity(d_hat.len());
    let mut diff_upper = Vec::with_capacity(d_hat.len());
    for axis in &d_hat {
        diff_lower.push(axis.iter().map(|&v| v - d_alpha_jump).collect::<Vec<f64>>());
        diff_upper.push(axis.iter().map(|&v| v + d_alpha_jump).collect::<Vec<f64>>());
    }
    let significant_jump_mask =
        significance_mask(&diff_lower, &diff_upper, &interior, m);

    Ok(ConformalResult {
        u_hat,
        lower,
        upper,
        d_alpha,
        diff_lower,
        diff_upper,
        d_alpha_jump,
        significant_jump_mask,
        fit_converged: true,
    })
}

/// k-th smallest residual with k = ceil((m+1)(1-alpha)); infinite when
/// the level is unattainable with m residuals.
fn conformal_quantile(residuals: &mut [f64], alpha: f64) -> f64 {
    let m = residuals.len();
    if m == 0 {
        return f64::INFINITY;
    }
    sort_floats(residuals);
    let k = ((m + 1) as f64 * (1.0 - alpha)).ceil() as usize;
    if k > m {
        f64::INFINITY
    } else {
        residuals[k.max(1) - 1]
    }
}

/// For every spatial cell, the scoring response whose point lies nearest
/// the cell center (first index wins ties).
fn nearest_responses(cloud: &PointCloud, score_idx: &[usize], grid: &GridSpec) -> Vec<f64> {
    let m = grid.spatial_len();
    let mut out = vec![0.0; m];
    for c in 0..m {
        let center = grid.cell_center(c);
        let mut best = f64::INFINITY;
        let mut best_y = 0.0;
        for &i in score_idx {
            let dist: f64 = cloud
                .x(i)
                .iter()
                .zip(&center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if dist < best {
                best = dist;
                best_y = cloud.y(i);
            }
        }
        out[c] = best_y;
    }
    out
}

/// Forward differences of a per-cell surface along every axis, zero on
/// outflow faces, indexed `[axis][cell]`.
fn forward_diffs(u: &[f64], grid: &GridSpec) -> Vec<Vec<f64>> {
    let shape = grid.shape();
    let strides = shape.spatial_strides();
    let m = grid.spatial_len();
    let mut out = vec![vec![0.0; m]; grid.dim()];
    for c in 0..m {
        let multi = shape.cell_multi(c);
        for a in 0..grid.dim() {
            if multi[a] + 1 < grid.n_cells[a] {
                out[a][c] = u[c + strides[a]] - u[c];
            }
        }
    }
    out
}

/// Whether each cell has an interior forward neighbor along each axis,
/// indexed `[axis][cell]`.
fn interior_axes(grid: &GridSpec) -> Vec<Vec<bool>> {
    let shape = grid.shape();
    let m = grid.spatial_len();
    let mut out = vec![vec![false; m]; grid.dim()];
    for c in 0..m {
        let multi = shape.cell_multi(c);
        for a in 0..grid.dim() {
            out[a][c] = multi[a] + 1 < grid.n_cells[a];
        }
    }
    out
}

fn significance_mask(
    diff_lower: &[Vec<f64>],
    diff_upper: &[Vec<f64>],
    interior: &[Vec<bool>],
    m: usize,
) -> Vec<bool> {
    (0..m)
        .map(|c| {
            let mut max_lower = f64::NEG_INFINITY;
            let mut min_upper = f64::INFINITY;
            for (a, axis_ok) in interior.iter().enumerate() {
                if axis_ok[c] {
                    max_lower = max_lower.max(diff_lower[a][c]);
                    min_upper = min_upper.min(diff_upper[a][c]);
                }
            }
            max_lower > 0.0 || min_upper < 0.0
        })
        .collect()
}
