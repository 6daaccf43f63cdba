//! Hyperparameter selection by Monte-Carlo-averaged unbiased risk
//! estimation over a randomized (lambda, nu) candidate grid.
//!
//! The risk of a candidate is estimated from the binned per-cell
//! responses: mean squared residual, minus the noise variance, plus twice
//! the noise variance times a divergence term. The divergence is probed
//! with random Gaussian perturbations and normalized by the realized
//! perturbation energy, so an identity estimator scores exactly the noise
//! variance regardless of the draw.

use crate::error::{FdrError, Result};
use crate::grid::{bin_points, BinnedData, BinningOptions, GridSpec, PointCloud};
use crate::segmentation::threshold_level_set;
use crate::solver::{solve_warm, SolverConfig};
use crate::stats::sort_floats;
use rand::SeedableRng;
use rand_distr::Distribution;
use rayon::prelude::*;

/// Where the noise scale comes from.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum SigmaSpec {
    /// Standard deviation of the binned per-cell responses.
    PerCell(f64),
    /// Standard deviation of raw observations; converted to the cell
    /// scale through the mean inverse occupancy of nonempty cells.
    RawObservation(f64),
    /// Estimated as the root mean squared residual of a pilot solve at
    /// the geometric midpoint of the search ranges.
    PilotResidual,
}

/// Search configuration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SureConfig {
    pub sigma: SigmaSpec,
    /// Finite-difference step for the divergence probe.
    pub delta: f64,
    /// Monte Carlo repetitions of the probe.
    pub r_draws: usize,
    pub lambda_range: (f64, f64),
    pub nu_range: (f64, f64),
    /// Candidate counts per axis; the search grid is their product.
    pub grid_size: (usize, usize),
    /// Sample candidates log-uniformly instead of uniformly.
    pub log_uniform: bool,
    pub seed: u64,
}

impl Default for SureConfig {
    fn default() -> Self {
        Self {
            sigma: SigmaSpec::PilotResidual,
            delta: 0.01,
            r_draws: 3,
            lambda_range: (1.0, 500.0),
            nu_range: (5e-4, 0.1),
            grid_size: (20, 20),
            log_uniform: false,
            seed: 0,
        }
    }
}

impl SureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(FdrError::BadConfig(format!("delta {}", self.delta)));
        }
        if self.r_draws == 0 {
            return Err(FdrError::BadConfig("r_draws must be positive".into()));
        }
        for (name, (lo, hi)) in [
            ("lambda", self.lambda_range),
            ("nu", self.nu_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
                return Err(FdrError::BadConfig(format!("{name} range [{lo}, {hi}]")));
            }
        }
        if self.grid_size.0 == 0 || self.grid_size.1 == 0 {
            return Err(FdrError::BadConfig("empty candidate grid".into()));
        }
        if let SigmaSpec::PerCell(s) | SigmaSpec::RawObservation(s) = self.sigma {
            if !(s.is_finite() && s > 0.0) {
                return Err(FdrError::BadConfig(format!("sigma {s}")));
            }
        }
        Ok(())
    }
}

/// One audited candidate.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SureEntry {
    pub lambda: f64,
    pub nu: f64,
    /// Averaged risk estimate; infinite when a solve failed or did not
    /// converge.
    pub eta: f64,
}

/// Risk estimate for one candidate against a generic estimator.
///
/// `estimate` maps a per-cell response vector to the fitted surface and a
/// convergence flag; a false flag makes the candidate score infinite.
/// Perturbation draws depend only on `seed` and the draw index, so
/// candidates evaluated with the same seed share probes.
pub fn sure_value_with<E>(
    y_cells: &[f64],
    sigma: f64,
    delta: f64,
    r_draws: usize,
    seed: u64,
    mut estimate: E,
) -> Result<f64>
where
    E: FnMut(&[f64]) -> Result<(Vec<f64>, bool)>,
{
    if y_cells.is_empty() {
        return Err(FdrError::EmptyCloud);
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(FdrError::BadConfig(format!("sigma {sigma}")));
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(FdrError::BadConfig(format!("delta {delta}")));
    }
    if r_draws == 0 {
        return Err(FdrError::BadConfig("r_draws must be positive".into()));
    }
    let (u_base, converged) = estimate(y_cells)?;
    if u_base.len() != y_cells.len() {
        return Err(FdrError::ShapeMismatch);
    }
    if !converged {
        return Ok(f64::INFINITY);
    }
    let m = y_cells.len() as f64;
    let residual: f64 = y_cells
        .iter()
        .zip(&u_base)
        .map(|(y, u)| (y - u) * (y - u))
        .sum::<f64>()
        / m;

    let normal = rand_distr::StandardNormal;
    let mut etas = Vec::with_capacity(r_draws);
    for r in 0..r_draws {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64 + 1);
        let b: Vec<f64> = (0..y_cells.len())
            .map(|_| normal.sample(&mut rng))
            .collect();
        let perturbed: Vec<f64> = y_cells
            .iter()
            .zip(&b)
            .map(|(y, bc)| y + delta * bc)
            .collect();
        let (u_pert, pert_converged) = estimate(&perturbed)?;
        if u_pert.len() != y_cells.len() {
            return Err(FdrError::ShapeMismatch);
        }
        if !pert_converged {
            return Ok(f64::INFINITY);
        }
        // normalize by the realized perturbation so the identity
        // estimator's divergence is one by construction
        let mut numer = 0.0;
        let mut denom = 0.0;
        for c in 0..y_cells.len() {
            numer += b[c] * (u_pert[c] - u_base[c]);
            denom += b[c] * (perturbed[c] - y_cells[c]);
        }
        if denom == 0.0 {
            return Ok(f64::INFINITY);
        }
        etas.push(residual - sigma * sigma + 2.0 * sigma * sigma * (numer / denom));
    }
    Ok(average_draws(&etas))
}

/// Mean of the per-draw risk values accumulated in value order, making
/// the average exactly invariant to the order of the draws.
fn average_draws(etas: &[f64]) -> f64 {
    let mut sorted = etas.to_vec();
    sort_floats(&mut sorted);
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

/// Risk estimate of one (lambda, nu) candidate for the lifted solver on
/// binned data. The base fit starts cold; perturbed fits warm-start from
/// it. Solver errors propagate; non-convergence scores infinite.
pub fn sure_value(
    cloud: &PointCloud,
    grid: &GridSpec,
    binning: &BinningOptions,
    theta: (f64, f64),
    cfg: &SureConfig,
    solver: &SolverConfig,
) -> Result<f64> {
    cfg.validate()?;
    let binned = bin_points(cloud, grid, binning)?;
    let sigma = resolve_sigma(cfg, &binned, grid, solver)?;
    sure_value_at(&binned, grid, theta, cfg, solver, sigma)
}

fn sure_value_at(
    binned: &BinnedData,
    grid: &GridSpec,
    (lambda, nu): (f64, f64),
    cfg: &SureConfig,
    solver: &SolverConfig,
    sigma: f64,
) -> Result<f64> {
    let solver = SolverConfig {
        lambda,
        nu,
        ..solver.clone()
    };
    let mut warm: Option<crate::calculus::PrimalField> = None;
    let base_y = binned.f_hat.clone();
    let mut with_y = binned.clone();
    sure_value_with(
        &base_y,
        sigma,
        cfg.delta,
        cfg.r_draws,
        cfg.seed,
        move |y: &[f64]| {
            with_y.f_hat.copy_from_slice(y);
            let report = solve_warm(&with_y, grid, &solver, warm.as_ref())?;
            let surface = threshold_level_set(&report.v_star, grid)?;
            if warm.is_none() {
                warm = Some(report.v_star);
            }
            Ok((surface, report.converged))
        },
    )
}

fn resolve_sigma(
    cfg: &SureConfig,
    binned: &BinnedData,
    grid: &GridSpec,
    solver: &SolverConfig,
) -> Result<f64> {
    match cfg.sigma {
        SigmaSpec::PerCell(s) => Ok(s),
        SigmaSpec::RawObservation(s) => {
            let mut inv = 0.0;
            let mut nonempty = 0usize;
            for &count in &binned.count {
                if count > 0 {
                    inv += 1.0 / count as f64;
                    nonempty += 1;
                }
            }
            if nonempty == 0 {
                return Err(FdrError::EmptyCloud);
            }
            Ok(s * (inv / nonempty as f64).sqrt())
        }
        SigmaSpec::PilotResidual => {
            let lambda = (cfg.lambda_range.0 * cfg.lambda_range.1).sqrt();
            let nu = (cfg.nu_range.0 * cfg.nu_range.1).sqrt();
            let pilot = SolverConfig {
                lambda,
                nu,
                ..solver.clone()
            };
            let report = solve_warm(binned, grid, &pilot, None)?;
            let surface = threshold_level_set(&report.v_star, grid)?;
            let mse: f64 = binned
                .f_hat
                .iter()
                .zip(&surface)
                .map(|(y, u)| (y - u) * (y - u))
                .sum::<f64>()
                / surface.len() as f64;
            let sigma = mse.sqrt();
            if !(sigma.is_finite() && sigma > 0.0) {
                return Err(FdrError::SolverFailure(format!(
                    "pilot residual scale {sigma} unusable"
                )));
            }
            Ok(sigma)
        }
    }
}

/// Draws the candidate grid, scores every candidate, and returns the
/// minimizer along with the full audited table.
///
/// Candidates are the product of per-axis values drawn uniformly (or
/// log-uniformly) from the configured ranges and sorted. Evaluations run
/// in parallel; the table order and every draw depend only on the
/// configuration, not the worker count. Candidates whose solves fail or
/// do not converge score infinite; if all do, the search fails.
pub fn sure_search(
    cloud: &PointCloud,
    grid: &GridSpec,
    binning: &BinningOptions,
    cfg: &SureConfig,
    solver: &SolverConfig,
) -> Result<(f64, f64, Vec<SureEntry>)> {
    cfg.validate()?;
    solver.validate()?;
    let binned = bin_points(cloud, grid, binning)?;
    let sigma = resolve_sigma(cfg, &binned, grid, solver)?;

    let lambdas = draw_axis(
        cfg.lambda_range,
        cfg.grid_size.0,
        cfg.log_uniform,
        cfg.seed,
        0,
    );
    let nus = draw_axis(cfg.nu_range, cfg.grid_size.1, cfg.log_uniform, cfg.seed, 1);
    let mut candidates = Vec::with_capacity(lambdas.len() * nus.len());
    for &lambda in &lambdas {
        for &nu in &nus {
            candidates.push((lambda, nu));
        }
    }

    let table: Vec<SureEntry> = candidates
        .par_iter()
        .map(|&(lambda, nu)| {
            let eta = match sure_value_at(&binned, grid, (lambda, nu), cfg, solver, sigma) {
                Ok(eta) => eta,
                Err(FdrError::NonFiniteIterate(_)) | Err(FdrError::SolverFailure(_)) => {
                    f64::INFINITY
                }
                Err(e) => return Err(e),
            };
            Ok(SureEntry { lambda, nu, eta })
        })
        .collect::<Result<_>>()?;

    let best = table
        .iter()
        .filter(|e| e.eta.is_finite())
        .min_by(|a, b| a.eta.total_cmp(&b.eta))
        .ok_or(FdrError::AllCandidatesFailed)?;
    Ok((best.lambda, best.nu, table))
}

fn draw_axis(range: (f64, f64), count: usize, log_uniform: bool, seed: u64, axis: u64) -> Vec<f64> {
    use rand::Rng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - axis);
    let (lo, hi) = range;
    let mut vals: Vec<f64> = (0..count)
        .map(|_| {
            let t: f64 = rng.random();
            if log_uniform {
                (lo.ln() + t * (hi.ln() - lo.ln())).exp()
            } else {
                lo + t * (hi - lo)
            }
        })
        .collect();
    sort_floats(&mut vals);
    vals
}
