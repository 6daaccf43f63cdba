//! Decoding of the lifted solution into a surface, a jump set and jump
//! sizes, plus evaluation metrics against a known truth.
//!
//! The surface is read off the 0.5-level set of the relaxed indicator by
//! counting active layers per spatial cell. Jumps are cells whose largest
//! forward difference along any axis, taken on the unit-normalized response
//! scale, reaches `sqrt(nu)`; the reported jump size stays in original
//! response units.

use crate::calculus::PrimalField;
use crate::error::{FdrError, Result};
use crate::grid::GridSpec;

/// Decoded estimate on the spatial grid: the surface, the detected jump
/// cells, per-cell signed jump sizes (zero off the jump set) and the
/// gradient magnitudes the mask was thresholded from.
#[derive(Debug, Clone)]
pub struct FdrEstimate {
    pub u_hat: Vec<f64>,
    pub jump_mask: Vec<bool>,
    pub jump_size: Vec<f64>,
    pub gradient_mag: Vec<f64>,
}

impl FdrEstimate {
    /// Decodes a solver solution: layer-count surface followed by jump
    /// extraction with threshold `sqrt(nu)`.
    pub fn from_solution(v_star: &PrimalField, grid: &GridSpec, nu: f64) -> Result<Self> {
        let u_hat = threshold_level_set(v_star, grid)?;
        let (jump_mask, jump_size, gradient_mag) = extract_jump_set(&u_hat, grid, nu)?;
        Ok(Self {
            u_hat,
            jump_mask,
            jump_size,
            gradient_mag,
        })
    }
}

/// Ground truth sampled on the same grid, for simulation studies.
#[derive(Debug, Clone)]
pub struct TruthOnGrid {
    /// Noise-free surface at cell centers.
    pub surface: Vec<f64>,
    /// Cells whose closed box intersects the true discontinuity set.
    pub jump_mask: Vec<bool>,
    /// True jump size at marked cells, zero elsewhere.
    pub jump_size: Vec<f64>,
}

/// Evaluation metrics for one estimate against the truth.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Metrics {
    /// Mean squared error of the surface over all cells.
    pub mse_u: f64,
    /// Mean squared error of the absolute jump size over true-jump cells.
    pub mse_tau: f64,
    /// Mean bias of the absolute jump size over true-jump cells.
    pub bias_tau: f64,
    /// Fraction of true-jump cells the mask misses.
    pub fnr: f64,
    /// Fraction of non-jump cells the mask marks.
    pub fpr: f64,
}

/// Decodes the surface from the relaxed indicator at the 0.5 threshold.
pub fn threshold_level_set(v_star: &PrimalField, grid: &GridSpec) -> Result<Vec<f64>> {
    threshold_level_set_at(v_star, grid, 0.5)
}

/// Layer-count decoding at an arbitrary threshold in (0,1): counts levels
/// with `v > t` per spatial cell and maps the count to response units at
/// the layer center. On binary fields every threshold gives the same
/// surface.
pub fn threshold_level_set_at(v_star: &PrimalField, grid: &GridSpec, t: f64) -> Result<Vec<f64>> {
    grid.validate()?;
    if !(t > 0.0 && t < 1.0) {
        return Err(FdrError::BadConfig(format!("threshold {t} outside (0,1)")));
    }
    let shape = grid.shape();
    if *v_star.shape() != shape {
        return Err(FdrError::GridMismatch(
            "field shape differs from grid".into(),
        ));
    }
    let s = shape.levels;
    let (t_min, _) = grid.value_range;
    let span = grid.value_span();
    let mut u_hat = Vec::with_capacity(shape.spatial_len());
    for cell in v_star.data.chunks_exact(s) {
        let count = cell.iter().filter(|&&v| v > t).count();
        u_hat.push(t_min + span * (count as f64 - 0.5) / s as f64);
    }
    Ok(u_hat)
}

/// Thresholds the surface's forward differences into a jump mask.
///
/// Differences are between adjacent cells, scaled by the response range so
/// the `sqrt(nu)` threshold acts on the same normalized scale the solver's
/// jump budget does. The gradient magnitude is the largest absolute
/// normalized difference over the axes, matching the per-face discontinuity
/// measure the perimeter budget counts. `jump_size` reports the signed
/// difference along the first axis attaining the largest magnitude, in
/// original response units; cells outside the mask get zero. The last cell
/// along an axis has no forward neighbor and contributes nothing in that
/// direction.
pub fn extract_jump_set(
    u_hat: &[f64],
    grid: &GridSpec,
    nu: f64,
) -> Result<(Vec<bool>, Vec<f64>, Vec<f64>)> {
    grid.validate()?;
    if !(nu.is_finite() && nu >= 0.0) {
        return Err(FdrError::BadConfig(format!("nu {nu}")));
    }
    let shape = grid.shape();
    let m = shape.spatial_len();
    if u_hat.len() != m {
        return Err(FdrError::GridMismatch(format!(
            "surface has {} cells, grid has {m}",
            u_hat.len()
        )));
    }
    let d = shape.dim();
    let strides = shape.spatial_strides();
    let outflow = shape.outflow_masks();
    let span = grid.value_span();
    let threshold = nu.sqrt();

    let mut mask = vec![false; m];
    let mut size = vec![0.0; m];
    let mut grad = vec![0.0; m];
    for c in 0..m {
        let mut best = 0.0f64;
        for j in 0..d {
            if outflow[c] & (1 << j) != 0 {
                continue;
            }
            let diff = u_hat[c + strides[j]] - u_hat[c];
            if diff.abs() > best.abs() {
                best = diff;
            }
        }
        grad[c] = best.abs() / span;
        if grad[c] >= threshold {
            mask[c] = true;
            size[c] = best;
        }
    }
    Ok((mask, size, grad))
}

/// Compares an estimate against the truth on the same grid.
///
/// Jump-size errors are computed on absolute sizes over true-jump cells,
/// with missed cells entering as zero estimates. Rates come from the cell
/// classification: false negatives among true-jump cells, false positives
/// among the rest. Empty denominators yield zero rates.
pub fn compute_metrics(estimate: &FdrEstimate, truth: &TruthOnGrid) -> Result<Metrics> {
    let m = estimate.u_hat.len();
    if truth.surface.len() != m || truth.jump_mask.len() != m || truth.jump_size.len() != m {
        return Err(FdrError::GridMismatch(format!(
            "truth has {} cells, estimate has {m}",
            truth.surface.len()
        )));
    }
    if estimate.jump_mask.len() != m || estimate.jump_size.len() != m {
        return Err(FdrError::ShapeMismatch);
    }
    let mut mse_u = 0.0;
    let mut mse_tau = 0.0;
    let mut bias_tau = 0.0;
    let mut jump_cells = 0usize;
    let mut missed = 0usize;
    let mut spurious = 0usize;
    for c in 0..m {
        let e = estimate.u_hat[c] - truth.surface[c];
        mse_u += e * e;
        if truth.jump_mask[c] {
            jump_cells += 1;
            let err = estimate.jump_size[c].abs() - truth.jump_size[c].abs();
            mse_tau += err * err;
            bias_tau += err;
            if !estimate.jump_mask[c] {
                missed += 1;
            }
        } else if estimate.jump_mask[c] {
            spurious += 1;
        }
    }
    mse_u /= m as f64;
    let off_cells = m - jump_cells;
    let (mse_tau, bias_tau, fnr) = if jump_cells > 0 {
        (
            mse_tau / jump_cells as f64,
            bias_tau / jump_cells as f64,
            missed as f64 / jump_cells as f64,
        )
    } else {
        (0.0, 0.0, 0.0)
    };
    let fpr = if off_cells > 0 {
        spurious as f64 / off_cells as f64
    } else {
        0.0
    };
    Ok(Metrics {
        mse_u,
        mse_tau,
        bias_tau,
        fnr,
        fpr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::GridShape;
    use proptest::prelude::*;

    fn grid_1d(n: usize, s: usize, value_range: (f64, f64)) -> GridSpec {
        GridSpec {
            n_cells: vec![n],
            s_levels: s,
            domain_box: vec![(0.0, 1.0)],
            value_range,
        }
    }

    fn indicator_below(shape: &GridShape, active_per_cell: usize) -> PrimalField {
        let s = shape.levels;
        let mut data = Vec::with_capacity(shape.len());
        for _ in 0..shape.spatial_len() {
            for l in 0..s {
                data.push(if l < active_per_cell { 1.0 } else { 0.0 });
            }
        }
        PrimalField::from_vec(data, shape.clone()).unwrap()
    }

    #[test]
    fn decode_six_of_ten_layers_gives_center_of_sixth() {
        let grid = grid_1d(3, 10, (0.0, 1.0));
        let v = indicator_below(&grid.shape(), 6);
        let u = threshold_level_set(&v, &grid).unwrap();
        for x in u {
            assert!((x - 0.55).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_minimal_subgraph_is_half_layer() {
        let grid = grid_1d(2, 8, (2.0, 4.0));
        let v = indicator_below(&grid.shape(), 1);
        let u = threshold_level_set(&v, &grid).unwrap();
        for x in u {
            assert!((x - (2.0 + 2.0 * 0.5 / 8.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn binary_fields_decode_the_same_at_any_threshold() {
        let grid = grid_1d(5, 6, (0.0, 3.0));
        let shape = grid.shape();
        let mut data = Vec::new();
        for c in 0..5 {
            let active = 1 + c % 5;
            for l in 0..6 {
                data.push(if l < active { 1.0 } else { 0.0 });
            }
        }
        let v = PrimalField::from_vec(data, shape).unwrap();
        let base = threshold_level_set_at(&v, &grid, 0.5).unwrap();
        for t in [0.05, 0.3, 0.7, 0.95] {
            assert_eq!(threshold_level_set_at(&v, &grid, t).unwrap(), base);
        }
    }

    #[test]
    fn rejects_threshold_outside_open_interval() {
        let grid = grid_1d(2, 4, (0.0, 1.0));
        let v = indicator_below(&grid.shape(), 2);
        assert!(threshold_level_set_at(&v, &grid, 0.0).is_err());
        assert!(threshold_level_set_at(&v, &grid, 1.0).is_err());
    }

    #[test]
    fn constant_surface_has_empty_jump_set() {
        let grid = grid_1d(8, 4, (0.0, 1.0));
        let u = vec![0.3; 8];
        let (mask, size, grad) = extract_jump_set(&u, &grid, 1e-4).unwrap();
        assert!(mask.iter().all(|&b| !b));
        assert!(size.iter().all(|&x| x == 0.0));
        assert!(grad.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn step_at_cell_face_recovers_height() {
        let h = 0.6;
        let grid = grid_1d(10, 4, (0.0, h));
        let u: Vec<f64> = (0..10).map(|c| if c < 5 { 0.0 } else { h }).collect();
        let nu = 0.3;
        let (mask, size, _) = extract_jump_set(&u, &grid, nu).unwrap();
        for c in 0..10 {
            if c == 4 {
                assert!(mask[c]);
                assert!((size[c] - h).abs() < 1e-12);
            } else {
                assert!(!mask[c], "cell {c} wrongly masked");
            }
        }
    }

    #[test]
    fn infinite_budget_empties_and_tiny_budget_fills_the_mask() {
        let grid = grid_1d(6, 4, (0.0, 1.0));
        let u: Vec<f64> = (0..6).map(|c| c as f64 * 0.1).collect();
        let (mask_inf, _, _) = extract_jump_set(&u, &grid, f64::MAX).unwrap();
        assert!(mask_inf.iter().all(|&b| !b));
        let (mask_tiny, _, _) = extract_jump_set(&u, &grid, 1e-30).unwrap();
        // every cell with a forward neighbor has nonzero gradient here
        assert!(mask_tiny[..5].iter().all(|&b| b));
        assert!(!mask_tiny[5]);
    }

    #[test]
    fn circular_step_masks_trace_the_boundary() {
        let n = 32;
        let grid = GridSpec {
            n_cells: vec![n, n],
            s_levels: 4,
            domain_box: vec![(0.0, 1.0), (0.0, 1.0)],
            value_range: (0.0, 1.2),
        };
        let jump = 0.1126;
        let center = 0.5;
        let r = 0.3;
        let mut u = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let x1 = (i as f64 + 0.5) / n as f64;
                let x2 = (j as f64 + 0.5) / n as f64;
                let smooth = 0.5 * (x1 + x2)
                    + 0.2
                        * (std::f64::consts::PI * x1).sin()
                        * (std::f64::consts::PI * x2).sin();
                let inside = (x1 - center).powi(2) + (x2 - center).powi(2) <= r * r;
                u.push(smooth + if inside { jump } else { 0.0 });
            }
        }
        let (mask, _, _) = extract_jump_set(&u, &grid, 2e-3).unwrap();
        let on_ring = |i: usize, j: usize| {
            let x1 = (i as f64 + 0.5) / n as f64;
            let x2 = (j as f64 + 0.5) / n as f64;
            let dist = ((x1 - center).powi(2) + (x2 - center).powi(2)).sqrt();
            (dist - r).abs() < 1.6 / n as f64
        };
        for i in 0..n {
            for j in 0..n {
                if mask[i * n + j] {
                    assert!(on_ring(i, j), "masked cell ({i},{j}) off the boundary");
                }
            }
        }
        let masked = mask.iter().filter(|&&b| b).count();
        assert!(masked > 20, "only {masked} boundary cells found");
    }

    #[test]
    fn metrics_of_identical_estimate_are_zero() {
        let est = FdrEstimate {
            u_hat: vec![0.1, 0.5, 0.9],
            jump_mask: vec![false, true, false],
            jump_size: vec![0.0, 0.4, 0.0],
            gradient_mag: vec![0.0, 0.4, 0.0],
        };
        let truth = TruthOnGrid {
            surface: est.u_hat.clone(),
            jump_mask: est.jump_mask.clone(),
            jump_size: est.jump_size.clone(),
        };
        let m = compute_metrics(&est, &truth).unwrap();
        assert_eq!(
            m,
            Metrics {
                mse_u: 0.0,
                mse_tau: 0.0,
                bias_tau: 0.0,
                fnr: 0.0,
                fpr: 0.0
            }
        );
    }

    #[test]
    fn constant_shift_moves_only_surface_error() {
        let truth = TruthOnGrid {
            surface: vec![0.2, 0.2, 0.8, 0.8],
            jump_mask: vec![false, true, false, false],
            jump_size: vec![0.0, 0.6, 0.0, 0.0],
        };
        let est = FdrEstimate {
            u_hat: truth.surface.iter().map(|x| x + 0.1).collect(),
            jump_mask: truth.jump_mask.clone(),
            jump_size: truth.jump_size.clone(),
            gradient_mag: vec![0.0, 0.6, 0.0, 0.0],
        };
        let m = compute_metrics(&est, &truth).unwrap();
        assert!((m.mse_u - 0.01).abs() < 1e-12);
        assert_eq!(m.mse_tau, 0.0);
        assert_eq!(m.fnr, 0.0);
        assert_eq!(m.fpr, 0.0);
    }

    #[test]
    fn missed_jumps_count_against_both_rate_and_size() {
        let truth = TruthOnGrid {
            surface: vec![0.0; 4],
            jump_mask: vec![true, true, false, false],
            jump_size: vec![0.5, 0.5, 0.0, 0.0],
        };
        let est = FdrEstimate {
            u_hat: vec![0.0; 4],
            jump_mask: vec![true, false, true, false],
            jump_size: vec![0.5, 0.0, 0.3, 0.0],
            gradient_mag: vec![0.5, 0.0, 0.3, 0.0],
        };
        let m = compute_metrics(&est, &truth).unwrap();
        assert!((m.fnr - 0.5).abs() < 1e-12);
        assert!((m.fpr - 0.5).abs() < 1e-12);
        assert!((m.bias_tau - (-0.25)).abs() < 1e-12);
        assert!((m.mse_tau - 0.125).abs() < 1e-12);
    }

    #[test]
    fn mismatched_truth_is_rejected() {
        let est = FdrEstimate {
            u_hat: vec![0.0; 3],
            jump_mask: vec![false; 3],
            jump_size: vec![0.0; 3],
            gradient_mag: vec![0.0; 3],
        };
        let truth = TruthOnGrid {
            surface: vec![0.0; 4],
            jump_mask: vec![false; 4],
            jump_size: vec![0.0; 4],
        };
        assert!(matches!(
            compute_metrics(&est, &truth),
            Err(FdrError::GridMismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn decoding_is_monotone_in_the_indicator(
            base in proptest::collection::vec(0.0f64..1.0, 24),
            bump in proptest::collection::vec(0.0f64..0.5, 24),
        ) {
            let grid = grid_1d(4, 6, (0.0, 1.0));
            let shape = grid.shape();
            let lo = PrimalField::from_vec(base.clone(), shape.clone()).unwrap();
            let hi_data: Vec<f64> = base
                .iter()
                .zip(&bump)
                .map(|(a, b)| (a + b).min(1.0))
                .collect();
            let hi = PrimalField::from_vec(hi_data, shape).unwrap();
            let u_lo = threshold_level_set(&lo, &grid).unwrap();
            let u_hi = threshold_level_set(&hi, &grid).unwrap();
            for (a, b) in u_lo.iter().zip(&u_hi) {
                prop_assert!(a <= b);
            }
        }
    }
}
