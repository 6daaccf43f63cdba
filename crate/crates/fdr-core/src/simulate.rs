//! Synthetic scenarios with known discontinuities and the Monte Carlo
//! experiment driver.
//!
//! Each truth couples a documented smooth base on the unit box with a
//! simple jump geometry: four steps in 1D, a disc in 2D, a ball in 3D.
//! Jump heights are calibrated in Cohen's d units: the absolute height is
//! the standardized size times the standard deviation of the smooth base
//! under the uniform design. The base amplitudes are chosen so those
//! standard deviations are 0.4556 (1D), 0.15013 (2D) and 0.1476 (3D),
//! which makes a 2D jump of d = 0.75 exactly 0.1126 response units high.

use std::f64::consts::PI;

use crate::error::{FdrError, Result};
use crate::grid::{bin_points, make_grid, BinningOptions, GridSpec, PointCloud};
use crate::segmentation::{compute_metrics, FdrEstimate, Metrics, TruthOnGrid};
use crate::solver::{solve, SolverConfig};
use crate::sure::{sure_search, SureConfig};
use rand::{Rng, SeedableRng};
use rand_distr::Distribution;
use rayon::prelude::*;

/// Standard deviation targets of the smooth bases, per dimension.
const BASE_SD_1D: f64 = 0.4556;
const BASE_SD_2D: f64 = 0.15013;
const BASE_SD_3D: f64 = 0.1476;

/// Step locations and standardized sizes of the 1D scenario.
const STEPS_1D: [(f64, f64); 4] = [
    (0.2, 0.2823),
    (0.4, 0.4682),
    (0.6, 0.7005),
    (0.8, -0.9262),
];

/// Center and radius shared by the 2D disc and 3D ball geometries.
const CENTER: f64 = 0.5;
const RADIUS: f64 = 0.3;

/// Named ground-truth families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Truth {
    /// Scaled sinusoid with four steps at x = 0.2, 0.4, 0.6, 0.8.
    Steps1D,
    /// Plane plus low-frequency bump, jumping on a disc of radius 0.3.
    Circle2D,
    /// Three-dimensional analogue jumping on a ball of radius 0.3.
    Sphere3D,
}

impl Truth {
    pub fn dim(self) -> usize {
        match self {
            Truth::Steps1D => 1,
            Truth::Circle2D => 2,
            Truth::Sphere3D => 3,
        }
    }

    /// Standard deviation of the smooth base under the uniform design.
    pub fn base_sd(self) -> f64 {
        match self {
            Truth::Steps1D => BASE_SD_1D,
            Truth::Circle2D => BASE_SD_2D,
            Truth::Sphere3D => BASE_SD_3D,
        }
    }

    /// Smooth part of the truth, already rescaled to the target sd.
    pub fn smooth(self, x: &[f64]) -> f64 {
        match self {
            Truth::Steps1D => {
                let raw_sd = (0.5f64).sqrt();
                BASE_SD_1D / raw_sd * (2.0 * PI * x[0]).sin()
            }
            Truth::Circle2D => {
                let raw_var = 1.0 / 24.0 + 0.04 * (0.25 - (2.0 / PI).powi(4));
                let g = 0.5 * (x[0] + x[1]) + 0.2 * (PI * x[0]).sin() * (PI * x[1]).sin();
                BASE_SD_2D / raw_var.sqrt() * g
            }
            Truth::Sphere3D => {
                let raw_var = 1.0 / 36.0 + 0.04 * (0.125 - (2.0 / PI).powi(6));
                let g = (x[0] + x[1] + x[2]) / 3.0
                    + 0.2 * (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin();
                BASE_SD_3D / raw_var.sqrt() * g
            }
        }
    }

    fn inside_jump_region(self, x: &[f64]) -> bool {
        match self {
            Truth::Steps1D => false,
            Truth::Circle2D | Truth::Sphere3D => {
                let r_sq: f64 = x.iter().map(|xi| (xi - CENTER) * (xi - CENTER)).sum();
                r_sq <= RADIUS * RADIUS
            }
        }
    }
}

/// One synthetic data-generating configuration.
///
/// `cohens_d` is the standardized jump size. For the disc and ball truths
/// it is the jump height in base-sd units; for the 1D steps it scales the
/// four canonical standardized sizes, so 1.0 reproduces the reference
/// staircase with heights 0.1286, 0.2133, 0.3192 and -0.4220.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub truth: Truth,
    pub cohens_d: f64,
    pub sigma: f64,
    pub n: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.cohens_d.is_finite() && self.cohens_d > 0.0) {
            return Err(FdrError::BadConfig(format!("cohens_d {}", self.cohens_d)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(FdrError::BadConfig(format!("sigma {}", self.sigma)));
        }
        if self.n == 0 {
            return Err(FdrError::BadConfig("n must be positive".into()));
        }
        Ok(())
    }

    /// Absolute jump height implied by the standardized size. For the 1D
    /// staircase this is the height of the largest canonical step.
    pub fn alpha(&self) -> f64 {
        match self.truth {
            Truth::Steps1D => {
                let max_d = STEPS_1D
                    .iter()
                    .map(|(_, d)| d.abs())
                    .fold(0.0f64, f64::max);
                self.cohens_d * max_d * BASE_SD_1D
            }
            _ => self.cohens_d * self.truth.base_sd(),
        }
    }

    /// Noise-free response at a point.
    pub fn true_surface_at(&self, x: &[f64]) -> f64 {
        let mut y = self.truth.smooth(x);
        match self.truth {
            Truth::Steps1D => {
                for (loc, d) in STEPS_1D {
                    if x[0] >= loc {
                        y += self.cohens_d * d * BASE_SD_1D;
                    }
                }
            }
            _ => {
                if self.truth.inside_jump_region(x) {
                    y += self.alpha();
                }
            }
        }
        y
    }

    /// Draws the design uniformly on the unit box and adds Gaussian noise.
    pub fn generate(&self) -> Result<PointCloud> {
        self.validate()?;
        let d = self.truth.dim();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        let normal = rand_distr::Normal::new(0.0, self.sigma.max(f64::MIN_POSITIVE))
            .map_err(|e| FdrError::BadConfig(format!("noise setup: {e}")))?;
        let mut coords = Vec::with_capacity(self.n * d);
        let mut ys = Vec::with_capacity(self.n);
        let mut x = vec![0.0f64; d];
        for _ in 0..self.n {
            for xj in x.iter_mut() {
                *xj = rng.random::<f64>();
            }
            let noise = if self.sigma > 0.0 {
                normal.sample(&mut rng)
            } else {
                0.0
            };
            coords.extend_from_slice(&x);
            ys.push(self.true_surface_at(&x) + noise);
        }
        PointCloud::new(coords, ys, d)
    }

    /// Rasterizes the truth on a grid: surface at cell centers, the mask
    /// of cells whose closed box meets the discontinuity set, and signed
    /// jump sizes on masked cells.
    pub fn truth_on(&self, grid: &GridSpec) -> Result<TruthOnGrid> {
        self.validate()?;
        grid.validate()?;
        if grid.dim() != self.truth.dim() {
            return Err(FdrError::GridMismatch(format!(
                "truth dimension {} vs grid dimension {}",
                self.truth.dim(),
                grid.dim()
            )));
        }
        let m = grid.spatial_len();
        let mut surface = Vec::with_capacity(m);
        let mut jump_mask = vec![false; m];
        let mut jump_size = vec![0.0; m];
        for c in 0..m {
            let center = grid.cell_center(c);
            surface.push(self.true_surface_at(&center));
            let (lo, hi) = cell_box(grid, c);
            match self.truth {
                Truth::Steps1D => {
                    for (loc, d) in STEPS_1D {
                        if lo[0] <= loc && loc <= hi[0] {
                            jump_mask[c] = true;
                            jump_size[c] = self.cohens_d * d * BASE_SD_1D;
                        }
                    }
                }
                _ => {
                    let mut min_sq = 0.0;
                    let mut max_sq = 0.0;
                    for j in 0..grid.dim() {
                        let lo_d = lo[j] - CENTER;
                        let hi_d = hi[j] - CENTER;
                        let min_d = if lo_d > 0.0 {
                            lo_d
                        } else if hi_d < 0.0 {
                            -hi_d
                        } else {
                            0.0
                        };
                        let max_d = lo_d.abs().max(hi_d.abs());
                        min_sq += min_d * min_d;
                        max_sq += max_d * max_d;
                    }
                    if min_sq <= RADIUS * RADIUS && RADIUS * RADIUS <= max_sq {
                        jump_mask[c] = true;
                        jump_size[c] = self.alpha();
                    }
                }
            }
        }
        Ok(TruthOnGrid {
            surface,
            jump_mask,
            jump_size,
        })
    }
}

fn cell_box(grid: &GridSpec, flat: usize) -> (Vec<f64>, Vec<f64>) {
    let widths = grid.cell_widths();
    let center = grid.cell_center(flat);
    let lo = center
        .iter()
        .zip(&widths)
        .map(|(c, w)| c - 0.5 * w)
        .collect();
    let hi = center
        .iter()
        .zip(&widths)
        .map(|(c, w)| c + 0.5 * w)
        .collect();
    (lo, hi)
}

/// Rule mapping a sample size to per-axis grid resolutions.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum GridRule {
    /// One cell per this many observations along a single axis.
    PointsPerCell(f64),
    /// Total cell budget as a fraction of n, split evenly across axes.
    CellFraction(f64),
    /// Explicit per-axis cell counts.
    Fixed(Vec<usize>),
}

impl GridRule {
    pub fn n_cells(&self, n: usize, dim: usize) -> Result<Vec<usize>> {
        let clamp = |x: f64| -> usize { (x.round() as usize).clamp(4, 512) };
        match self {
            GridRule::PointsPerCell(ppc) => {
                if !(ppc.is_finite() && *ppc > 0.0) {
                    return Err(FdrError::BadConfig(format!("points per cell {ppc}")));
                }
                Ok(vec![clamp(n as f64 / ppc); dim])
            }
            GridRule::CellFraction(frac) => {
                if !(frac.is_finite() && *frac > 0.0) {
                    return Err(FdrError::BadConfig(format!("cell fraction {frac}")));
                }
                let per_axis = (frac * n as f64).powf(1.0 / dim as f64);
                Ok(vec![clamp(per_axis); dim])
            }
            GridRule::Fixed(cells) => {
                if cells.len() != dim {
                    return Err(FdrError::GridMismatch(format!(
                        "{} axis sizes for dimension {dim}",
                        cells.len()
                    )));
                }
                Ok(cells.clone())
            }
        }
    }
}

/// How the Monte Carlo driver obtains hyperparameters for each scenario
/// block (scenarios sharing truth and standardized jump size).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ThetaRule {
    /// Use these values everywhere.
    Fixed { lambda: f64, nu: f64 },
    /// Run the risk-estimate search once per block on the block's
    /// smallest-n scenario and share the minimizer across the block.
    Sure(SureConfig),
}

/// Monte Carlo experiment description.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct McProtocol {
    pub scenarios: Vec<Scenario>,
    pub reps: usize,
    pub grid_rule: GridRule,
    pub s_levels: usize,
    pub padding: f64,
    pub binning: BinningOptions,
    pub solver: SolverConfig,
    pub theta: ThetaRule,
}

/// One averaged result row.
#[derive(Debug, Clone, serde::Serialize)]
pub struct McRow {
    pub dim: usize,
    pub cohens_d: f64,
    pub n: usize,
    pub alpha_true: f64,
    pub alpha_hat: f64,
    pub metrics: Metrics,
    pub lambda: f64,
    pub nu: f64,
    pub reps_used: usize,
    pub converged_fraction: f64,
}

struct RepOutcome {
    metrics: Metrics,
    alpha_hat: f64,
    converged: bool,
}

/// Runs the experiment with the estimator assembled from the solver and
/// decoder. See [`run_monte_carlo_with`] for the generic driver.
pub fn run_monte_carlo(protocol: &McProtocol) -> Result<Vec<McRow>> {
    run_monte_carlo_with(protocol, |cloud, grid, cfg| {
        let binned = bin_points(cloud, grid, &protocol.binning)?;
        let report = solve(&binned, grid, cfg)?;
        let est = FdrEstimate::from_solution(&report.v_star, grid, cfg.nu)?;
        Ok((est, report.converged))
    })
}

/// Generic Monte Carlo driver: `estimate(cloud, grid, solver_cfg)` maps a
/// sample to a decoded estimate plus a convergence flag. Rows come back in
/// scenario order; reps run in parallel and are reduced in a fixed order
/// so results do not depend on the worker count.
pub fn run_monte_carlo_with<E>(protocol: &McProtocol, estimate: E) -> Result<Vec<McRow>>
where
    E: Fn(&PointCloud, &GridSpec, &SolverConfig) -> Result<(FdrEstimate, bool)> + Sync,
{
    if protocol.reps == 0 {
        return Err(FdrError::BadConfig("reps must be positive".into()));
    }
    protocol.solver.validate()?;
    for sc in &protocol.scenarios {
        sc.validate()?;
    }

    // resolve hyperparameters per block
    let mut block_theta: Vec<(f64, f64)> = Vec::with_capacity(protocol.scenarios.len());
    match &protocol.theta {
        ThetaRule::Fixed { lambda, nu } => {
            block_theta.extend(std::iter::repeat_n(
                (*lambda, *nu),
                protocol.scenarios.len(),
            ));
        }
        ThetaRule::Sure(sure_cfg) => {
            let mut cache: Vec<((u32, u64), (f64, f64))> = Vec::new();
            for sc in &protocol.scenarios {
                let key = (sc.truth.dim() as u32, sc.cohens_d.to_bits());
                if let Some((_, th)) = cache.iter().find(|(k, _)| *k == key) {
                    block_theta.push(*th);
                    continue;
                }
                let pick = protocol
                    .scenarios
                    .iter()
                    .filter(|o| (o.truth.dim() as u32, o.cohens_d.to_bits()) == key)
                    .min_by_key(|o| o.n)
                    .expect("block has at least one scenario");
                let cloud = pick.generate()?;
                let grid = protocol.grid_for(pick, &cloud)?;
                let (lambda, nu, _) =
                    sure_search(&cloud, &grid, &protocol.binning, sure_cfg, &protocol.solver)?;
                cache.push((key, (lambda, nu)));
                block_theta.push((lambda, nu));
            }
        }
    }

    let mut rows = Vec::with_capacity(protocol.scenarios.len());
    for (sc, &(lambda, nu)) in protocol.scenarios.iter().zip(&block_theta) {
        let cfg = SolverConfig {
            lambda,
            nu,
            ..protocol.solver.clone()
        };
        let outcomes: Vec<Result<RepOutcome>> = (0..protocol.reps)
            .into_par_iter()
            .map(|rep| {
                let rep_sc = Scenario {
                    seed: sc.seed.wrapping_add(1_000_003 * rep as u64),
                    ..*sc
                };
                let cloud = rep_sc.generate()?;
                let grid = protocol.grid_for(&rep_sc, &cloud)?;
                let truth = rep_sc.truth_on(&grid)?;
                let (est, converged) = estimate(&cloud, &grid, &cfg)?;
                let metrics = compute_metrics(&est, &truth)?;
                let sizes: Vec<f64> = truth
                    .jump_mask
                    .iter()
                    .zip(&est.jump_size)
                    .filter(|(t, _)| **t)
                    .map(|(_, s)| s.abs())
                    .collect();
                let alpha_hat = if sizes.is_empty() {
                    0.0
                } else {
                    stable_mean(&sizes)
                };
                Ok(RepOutcome {
                    metrics,
                    alpha_hat,
                    converged,
                })
            })
            .collect();

        let mut kept = Vec::new();
        for outcome in outcomes {
            match outcome {
                Ok(o) => kept.push(o),
                Err(FdrError::NonFiniteIterate(_)) | Err(FdrError::SolverFailure(_)) => {}
                Err(e) => return Err(e),
            }
        }
        if kept.is_empty() {
            return Err(FdrError::TooFewReps {
                kept: 0,
                total: protocol.reps,
            });
        }
        let avg = |f: &dyn Fn(&RepOutcome) -> f64| -> f64 {
            let vals: Vec<f64> = kept.iter().map(f).collect();
            stable_mean(&vals)
        };
        rows.push(McRow {
            dim: sc.truth.dim(),
            cohens_d: sc.cohens_d,
            n: sc.n,
            alpha_true: sc.alpha(),
            alpha_hat: avg(&|o| o.alpha_hat),
            metrics: Metrics {
                mse_u: avg(&|o| o.metrics.mse_u),
                mse_tau: avg(&|o| o.metrics.mse_tau),
                bias_tau: avg(&|o| o.metrics.bias_tau),
                fnr: avg(&|o| o.metrics.fnr),
                fpr: avg(&|o| o.metrics.fpr),
            },
            lambda,
            nu,
            reps_used: kept.len(),
            converged_fraction: kept.iter().filter(|o| o.converged).count() as f64
                / kept.len() as f64,
        });
    }
    Ok(rows)
}

impl McProtocol {
    fn grid_for(&self, sc: &Scenario, cloud: &PointCloud) -> Result<GridSpec> {
        let cells = self.grid_rule.n_cells(sc.n, sc.truth.dim())?;
        make_grid(cloud, &cells, self.s_levels, self.padding)
    }
}

/// Mean accumulated in value order, so it is exactly invariant to the
/// order the inputs arrived in.
fn stable_mean(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    crate::stats::sort_floats(&mut sorted);
    sorted.iter().sum::<f64>() / sorted.len() as f64
}
