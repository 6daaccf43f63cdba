//! Primal-dual solver for the lifted convex relaxation.
//!
//! Minimises the duality pairing over relaxed indicators `v` against the
//! constraint set that encodes fidelity and smoothness through a per-cell
//! parabola and the jump budget `nu` through bounds on sums of the spatial
//! dual components over level ranges. The range constraint is decoupled
//! with one multiplier pair per level range, giving six updates per sweep:
//! dual ascent on `p` and the range variables `s`, descent on `v` and the
//! multipliers `mu`, then overrelaxation of `v` and `mu`.
//!
//! Internally the iteration uses unit-spacing forward differences, the
//! formulation under which the fixed step sizes `tau_v = sigma_p =
//! 1/(4(d+1))`, `sigma_s = 1`, `tau_mu` = one over the number of level
//! ranges are nonexpansive. Reported energies go through the public scaled
//! pairing so they line up with the [`crate::calculus`] contracts.

use crate::calculus::{pairing, DualField, PrimalField};
use crate::error::{FdrError, Result};
use crate::grid::{BinnedData, GridSpec};
use crate::projections::{project_ball, project_c, project_parabola, ParabolaSpec};

/// Hyperparameters and stopping rules for one solve.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Fidelity weight.
    pub lambda: f64,
    /// Jump budget; the perimeter weight of the discontinuity set.
    pub nu: f64,
    /// Relative sup-norm change between checks below which the iteration
    /// stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Convergence is tested every this many iterations.
    pub check_every: usize,
    /// Lower bound applied to the unit-scale density when constraints are
    /// built, so empty regions cannot produce infinite curvature.
    pub density_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            nu: 1e-3,
            tol: 5e-5,
            max_iter: 3000,
            check_every: 25,
            density_floor: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(FdrError::BadConfig(format!("lambda {}", self.lambda)));
        }
        if !(self.nu.is_finite() && self.nu >= 0.0) {
            return Err(FdrError::BadConfig(format!("nu {}", self.nu)));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(FdrError::BadConfig(format!("tol {}", self.tol)));
        }
        if self.max_iter == 0 || self.check_every == 0 {
            return Err(FdrError::BadConfig(
                "max_iter and check_every must be positive".into(),
            ));
        }
        if !(self.density_floor.is_finite() && self.density_floor > 0.0) {
            return Err(FdrError::BadConfig(format!(
                "density_floor {}",
                self.density_floor
            )));
        }
        Ok(())
    }
}

/// Dual iterate bundle: the constraint field `p`, the range variables `s`
/// and their multipliers `mu`. The range arrays are laid out cell-major,
/// then range pair, then axis.
#[derive(Debug, Clone)]
pub struct DualState {
    pub p: DualField,
    pub s: Vec<f64>,
    pub mu: Vec<f64>,
}

/// Outcome of one solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub v_star: PrimalField,
    pub iterations: usize,
    /// Last measured relative change; below `tol` when `converged`.
    pub residual: f64,
    /// Duality pairing of the final iterates under the scaled differences.
    pub energy: f64,
    /// Sup-norm violation of the dual constraint set by the final iterate.
    pub feasibility_gap: f64,
    pub converged: bool,
}

/// Per-level-cell parabola constraints implied by the binned data and the
/// fidelity weight, level index fastest. Exposed so diagnostics and tests
/// can verify dual feasibility against the same construction the solver
/// uses.
pub fn parabola_specs(
    binned: &BinnedData,
    grid: &GridSpec,
    cfg: &SolverConfig,
) -> Result<Vec<ParabolaSpec>> {
    grid.validate()?;
    cfg.validate()?;
    let m = grid.spatial_len();
    if binned.f_hat.len() != m || binned.fx_hat.len() != m {
        return Err(FdrError::GridMismatch(format!(
            "binned data has {} cells, grid has {m}",
            binned.f_hat.len()
        )));
    }
    let s = grid.s_levels;
    let span = grid.value_span();
    let (vlo, _) = grid.value_range;
    let volume = grid.box_volume();
    let mut specs = Vec::with_capacity(m * s);
    for c in 0..m {
        let f_unit = (binned.f_hat[c] - vlo) / span;
        let fx_unit = (binned.fx_hat[c] * volume).max(cfg.density_floor);
        let alpha = 1.0 / (4.0 * fx_unit);
        for l in 0..s {
            let t = (l + 1) as f64 / s as f64;
            let offset = cfg.lambda * fx_unit * (t - f_unit) * (t - f_unit);
            specs.push(ParabolaSpec::new(alpha, offset)?);
        }
    }
    Ok(specs)
}

/// Relative sup-norm change between two iterate snapshots, the maximum of
/// the primal and dual ratios. Denominators are floored to keep the ratio
/// finite near zero fields.
pub fn residual(
    v_prev: &PrimalField,
    v_curr: &PrimalField,
    p_prev: &DualField,
    p_curr: &DualField,
) -> f64 {
    let rv = rel_change(&[&v_prev.data], &[&v_curr.data]);
    let prev: Vec<&[f64]> = p_prev.comps.iter().map(|c| c.as_slice()).collect();
    let curr: Vec<&[f64]> = p_curr.comps.iter().map(|c| c.as_slice()).collect();
    let rp = rel_change_slices(&prev, &curr);
    rv.max(rp)
}

fn rel_change(prev: &[&Vec<f64>], curr: &[&Vec<f64>]) -> f64 {
    let prev: Vec<&[f64]> = prev.iter().map(|v| v.as_slice()).collect();
    let curr: Vec<&[f64]> = curr.iter().map(|v| v.as_slice()).collect();
    rel_change_slices(&prev, &curr)
}

fn rel_change_slices(prev: &[&[f64]], curr: &[&[f64]]) -> f64 {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (a, b) in prev.iter().zip(curr) {
        for (x, y) in a.iter().zip(*b) {
            diff = diff.max((x - y).abs());
            scale = scale.max(y.abs());
        }
    }
    diff / scale.max(1e-12)
}

/// Solves the relaxation for the given binned data. Convenience wrapper
/// around [`solve_warm`] starting from the flat half indicator.
pub fn solve(binned: &BinnedData, grid: &GridSpec, cfg: &SolverConfig) -> Result<SolveReport> {
    solve_warm(binned, grid, cfg, None)
}

/// Like [`solve`] but optionally starting the primal iterate from a
/// previous solution on the same grid. The limit point is unchanged; only
/// the convergence path is, which makes warm starts safe for resampling
/// loops.
pub fn solve_warm(
    binned: &BinnedData,
    grid: &GridSpec,
    cfg: &SolverConfig,
    v_init: Option<&PrimalField>,
) -> Result<SolveReport> {
    solve_with_inspector(
        binned,
        grid,
        cfg,
        v_init,
        None::<fn(usize, &PrimalField, &DualState)>,
    )
}

/// Full-control entry point: `inspect(iteration, v, dual)` runs after every
/// completed sweep when present. Intended for diagnostics and feasibility
/// audits; the dual state is materialised per call, so keep inspectors off
/// hot paths.
pub fn solve_with_inspector<F>(
    binned: &BinnedData,
    grid: &GridSpec,
    cfg: &SolverConfig,
    v_init: Option<&PrimalField>,
    mut inspect: Option<F>,
) -> Result<SolveReport>
where
    F: FnMut(usize, &PrimalField, &DualState),
{
    grid.validate()?;
    cfg.validate()?;
    let shape = grid.shape();
    let d = shape.dim();
    if d > 8 {
        return Err(FdrError::BadConfig(format!(
            "spatial dimension {d} not supported"
        )));
    }
    let s = shape.levels;
    if s > 1024 {
        return Err(FdrError::BadConfig(format!("{s} levels not supported")));
    }
    let m = shape.spatial_len();
    let total = shape.len();
    let specs = parabola_specs(binned, grid, cfg)?;

    let strides = shape.spatial_strides();
    let elem_strides: Vec<usize> = strides.iter().map(|st| st * s).collect();
    let outflow = shape.outflow_masks();

    // level range pairs (lo, hi) inclusive, lo <= hi
    let n_pairs = s * (s + 1) / 2;
    let mut pairs = Vec::with_capacity(n_pairs);
    for lo in 0..s {
        for hi in lo..s {
            pairs.push((lo as u16, hi as u16));
        }
    }

    let sigma_p = 1.0 / (4.0 * (d as f64 + 1.0));
    let tau_v = sigma_p;
    let sigma_s = 1.0;
    let tau_mu = 1.0 / n_pairs as f64;

    let mut v = match v_init {
        Some(start) => {
            if *start.shape() != shape {
                return Err(FdrError::GridMismatch(
                    "warm start field shape differs from grid".into(),
                ));
            }
            start.clone()
        }
        None => PrimalField::constant(shape.clone(), 0.5),
    };
    project_c(&mut v);
    let mut v_bar = v.data.clone();

    let mut p: Vec<Vec<f64>> = vec![vec![0.0; total]; d + 1];
    let range_len = m * n_pairs * d;
    let mut sv = vec![0.0f64; range_len];
    let mut mu = vec![0.0f64; range_len];
    let mut mu_bar = vec![0.0f64; range_len];
    // per-cell aggregates of extrapolated multipliers by axis and level,
    // refreshed at the end of each cell's range pass for the next sweep
    let mut tilde_store = vec![0.0f64; m * d * s];

    // reusable scratch
    let mut tilde = vec![0.0f64; d * s];
    let mut diff = vec![0.0f64; d * (s + 1)];
    let mut prefix = vec![0.0f64; d * s];
    let mut px_new = [0.0f64; 8];

    let mut v_snap = v.data.clone();
    let mut p_snap = p.clone();
    let mut iterations = 0usize;
    let mut last_residual = f64::INFINITY;
    let mut converged = false;

    for iter in 1..=cfg.max_iter {
        iterations = iter;

        // sweep 1: per spatial cell, dual ascent plus range bookkeeping
        for c in 0..m {
            let base = c * s;
            let range_base = c * n_pairs * d;
            let boundary = outflow[c];

            // aggregates of the extrapolated multipliers from the previous
            // sweep, one value per axis and level
            tilde[..d * s].copy_from_slice(&tilde_store[c * d * s..(c + 1) * d * s]);

            for l in 0..s {
                let idx = base + l;
                for j in 0..d {
                    let dv = if boundary & (1 << j) == 0 {
                        v_bar[idx + elem_strides[j]] - v_bar[idx]
                    } else {
                        0.0
                    };
                    px_new[j] = p[j][idx] + sigma_p * (dv + tilde[j * s + l]);
                }
                let dvt = if l + 1 < s {
                    v_bar[idx + 1] - v_bar[idx]
                } else {
                    0.0
                };
                let mut pt_new = p[d][idx] + sigma_p * dvt;
                project_parabola(&mut px_new[..d], &mut pt_new, specs[idx]);
                for j in 0..d {
                    p[j][idx] = if boundary & (1 << j) == 0 {
                        px_new[j]
                    } else {
                        0.0
                    };
                }
                p[d][idx] = pt_new;
            }

            if d > 0 {
                for j in 0..d {
                    let mut acc = 0.0;
                    let row = &mut prefix[j * s..(j + 1) * s];
                    let comp = &p[j][base..base + s];
                    for l in 0..s {
                        acc += comp[l];
                        row[l] = acc;
                    }
                }
                let span = range_base..range_base + n_pairs * d;
                let pass = RangePass {
                    pairs: &pairs,
                    prefix: &prefix,
                    sv: &mut sv[span.clone()],
                    mu: &mut mu[span.clone()],
                    mu_bar: &mut mu_bar[span],
                    diff: &mut diff,
                    store: &mut tilde_store[c * d * s..(c + 1) * d * s],
                    nu: cfg.nu,
                    sigma_s,
                    tau_mu,
                    s,
                };
                match d {
                    1 => pass.run::<1>(),
                    2 => pass.run::<2>(),
                    3 => pass.run::<3>(),
                    _ => pass.run_dyn(d),
                }
            }
        }

        // sweep 2: primal descent with overrelaxation
        for c in 0..m {
            let base = c * s;
            let boundary = outflow[c];
            let mut rem = c;
            // inflow flags need the multi-index; recomputed cheaply per cell
            let mut inflow = 0u32;
            for j in 0..d {
                let coord = rem / strides[j];
                rem %= strides[j];
                if coord == 0 {
                    inflow |= 1 << j;
                }
            }
            for l in 0..s {
                let idx = base + l;
                let mut div = 0.0;
                for j in 0..d {
                    if inflow & (1 << j) == 0 {
                        div += p[j][idx - elem_strides[j]];
                    }
                    if boundary & (1 << j) == 0 {
                        div -= p[j][idx];
                    }
                }
                if l > 0 {
                    div += p[d][idx - 1];
                }
                if l + 1 < s {
                    div -= p[d][idx];
                }
                let v_old = v.data[idx];
                let mut v_new = v_old - tau_v * div;
                v_new = if l == 0 {
                    1.0
                } else if l == s - 1 {
                    0.0
                } else {
                    v_new.clamp(0.0, 1.0)
                };
                v.data[idx] = v_new;
                v_bar[idx] = 2.0 * v_new - v_old;
            }
        }

        if iter % cfg.check_every == 0 {
            if !iterates_finite(&v.data, &p) {
                return Err(FdrError::NonFiniteIterate(iter));
            }
            let prev: Vec<&[f64]> = std::iter::once(v_snap.as_slice())
                .chain(p_snap.iter().map(|c| c.as_slice()))
                .collect();
            let curr: Vec<&[f64]> = std::iter::once(v.data.as_slice())
                .chain(p.iter().map(|c| c.as_slice()))
                .collect();
            last_residual = rel_change_slices(&prev, &curr);
            v_snap.copy_from_slice(&v.data);
            for (snap, comp) in p_snap.iter_mut().zip(&p) {
                snap.copy_from_slice(comp);
            }
            if last_residual < cfg.tol {
                converged = true;
            }
        }

        if let Some(f) = inspect.as_mut() {
            let state = DualState {
                p: DualField::from_comps(p.clone(), shape.clone())?,
                s: sv.clone(),
                mu: mu.clone(),
            };
            f(iter, &v, &state);
        }

        if converged {
            break;
        }
    }

    if !iterates_finite(&v.data, &p) {
        return Err(FdrError::NonFiniteIterate(iterations));
    }

    let p_field = DualField::from_comps(p, shape.clone())?;
    let energy = pairing(&p_field, &v, grid, false)?;
    let feasibility_gap = constraint_gap(&p_field, &specs, &pairs, cfg.nu, m, s, d);

    Ok(SolveReport {
        v_star: v,
        iterations,
        residual: last_residual,
        energy,
        feasibility_gap,
        converged,
    })
}

/// One cell's update of the range variables and their multipliers,
/// extracted so the innermost axis loops can be monomorphised over the
/// spatial dimension.
struct RangePass<'a> {
    pairs: &'a [(u16, u16)],
    prefix: &'a [f64],
    sv: &'a mut [f64],
    mu: &'a mut [f64],
    mu_bar: &'a mut [f64],
    diff: &'a mut [f64],
    store: &'a mut [f64],
    nu: f64,
    sigma_s: f64,
    tau_mu: f64,
    s: usize,
}

impl RangePass<'_> {
    fn run<const D: usize>(self) {
        let RangePass {
            pairs,
            prefix,
            sv,
            mu,
            mu_bar,
            diff,
            store,
            nu,
            sigma_s,
            tau_mu,
            s,
        } = self;
        diff.iter_mut().for_each(|x| *x = 0.0);
        let (sv, _) = sv.as_chunks_mut::<D>();
        let (mu, _) = mu.as_chunks_mut::<D>();
        let (mu_bar, _) = mu_bar.as_chunks_mut::<D>();
        for (((&(lo, hi), sc), mc), bc) in pairs.iter().zip(sv).zip(mu).zip(mu_bar) {
            let mut s_new = [0.0f64; D];
            for j in 0..D {
                s_new[j] = sc[j] - sigma_s * bc[j];
            }
            project_ball(&mut s_new, nu);
            let (lo, hi) = (lo as usize, hi as usize);
            for j in 0..D {
                let row = &prefix[j * s..(j + 1) * s];
                let range_sum = row[hi] - if lo > 0 { row[lo - 1] } else { 0.0 };
                let mu_old = mc[j];
                let mu_new = mu_old + tau_mu * (s_new[j] - range_sum);
                let mb_new = 2.0 * mu_new - mu_old;
                mc[j] = mu_new;
                bc[j] = mb_new;
                sc[j] = s_new[j];
                diff[j * (s + 1) + lo] += mb_new;
                diff[j * (s + 1) + hi + 1] -= mb_new;
            }
        }
        for j in 0..D {
            let mut acc = 0.0;
            for l in 0..s {
                acc += diff[j * (s + 1) + l];
                store[j * s + l] = acc;
            }
        }
    }

    fn run_dyn(self, d: usize) {
        let RangePass {
            pairs,
            prefix,
            sv,
            mu,
            mu_bar,
            diff,
            store,
            nu,
            sigma_s,
            tau_mu,
            s,
        } = self;
        diff.iter_mut().for_each(|x| *x = 0.0);
        let sv = sv.chunks_exact_mut(d);
        let mu = mu.chunks_exact_mut(d);
        let mu_bar = mu_bar.chunks_exact_mut(d);
        for (((&(lo, hi), sc), mc), bc) in pairs.iter().zip(sv).zip(mu).zip(mu_bar) {
            let mut s_new = [0.0f64; 8];
            for j in 0..d {
                s_new[j] = sc[j] - sigma_s * bc[j];
            }
            project_ball(&mut s_new[..d], nu);
            let (lo, hi) = (lo as usize, hi as usize);
            for j in 0..d {
                let row = &prefix[j * s..(j + 1) * s];
                let range_sum = row[hi] - if lo > 0 { row[lo - 1] } else { 0.0 };
                let mu_old = mc[j];
                let mu_new = mu_old + tau_mu * (s_new[j] - range_sum);
                let mb_new = 2.0 * mu_new - mu_old;
                mc[j] = mu_new;
                bc[j] = mb_new;
                sc[j] = s_new[j];
                diff[j * (s + 1) + lo] += mb_new;
                diff[j * (s + 1) + hi + 1] -= mb_new;
            }
        }
        for j in 0..d {
            let mut acc = 0.0;
            for l in 0..s {
                acc += diff[j * (s + 1) + l];
                store[j * s + l] = acc;
            }
        }
    }
}

fn iterates_finite(v: &[f64], p: &[Vec<f64>]) -> bool {
    v.iter().all(|x| x.is_finite()) && p.iter().all(|c| c.iter().all(|x| x.is_finite()))
}

fn constraint_gap(
    p: &DualField,
    specs: &[ParabolaSpec],
    pairs: &[(u16, u16)],
    nu: f64,
    m: usize,
    s: usize,
    d: usize,
) -> f64 {
    let mut gap: f64 = 0.0;
    for idx in 0..m * s {
        let nx_sq: f64 = (0..d).map(|j| p.comps[j][idx] * p.comps[j][idx]).sum();
        let violation = specs[idx].alpha * nx_sq - specs[idx].offset - p.comps[d][idx];
        gap = gap.max(violation);
    }
    for c in 0..m {
        let base = c * s;
        for &(lo, hi) in pairs {
            let mut norm_sq = 0.0;
            for j in 0..d {
                let sum: f64 = (lo as usize..=hi as usize)
                    .map(|l| p.comps[j][base + l])
                    .sum();
                norm_sq += sum * sum;
            }
            gap = gap.max(norm_sq.sqrt() - nu);
        }
    }
    gap.max(0.0)
}
