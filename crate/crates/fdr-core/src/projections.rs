//! Exact projections onto the primal box and the dual constraint sets.
//!
//! The dual set couples, per lifted cell, the spatial components and the
//! lifted component through a parabola epigraph whose curvature comes from
//! the local covariate density and whose vertical offset carries the
//! data-fit term. Projection onto the epigraph reduces to one real root of
//! a depressed cubic; everything here is closed-form and allocation-free.

use crate::calculus::PrimalField;
use crate::error::{FdrError, Result};

/// Clamps a relaxed indicator to [0, 1] and pins the boundary levels:
/// first level 1, last level 0.
pub fn project_c(v: &mut PrimalField) {
    let s = v.shape().levels;
    for (i, x) in v.data.iter_mut().enumerate() {
        let l = i % s;
        if l == 0 {
            *x = 1.0;
        } else if l == s - 1 {
            *x = 0.0;
        } else {
            *x = x.clamp(0.0, 1.0);
        }
    }
}

/// One lifted cell's dual constraint `p_t >= alpha |p_x|^2 - offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParabolaSpec {
    /// Curvature, `1 / (4 f_x)` for local density `f_x`; must be positive.
    pub alpha: f64,
    /// Vertical shift carrying the data-fit term; nonnegative.
    pub offset: f64,
}

impl ParabolaSpec {
    pub fn new(alpha: f64, offset: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(FdrError::NonpositiveCurvature(alpha));
        }
        if !(offset.is_finite() && offset >= 0.0) {
            return Err(FdrError::BadConfig(format!(
                "parabola offset must be finite and nonnegative, got {offset}"
            )));
        }
        Ok(Self { alpha, offset })
    }
}

/// Largest real root of `w^3 + 3 b w - 2 a = 0` for `a >= 0`, split by the
/// discriminant sign to avoid cancellation; the three-root branch picks the
/// one relevant for the projection.
fn depressed_cubic_root(a: f64, b: f64) -> f64 {
    debug_assert!(a >= 0.0);
    if b >= 0.0 {
        let d = a * a + b * b * b;
        let c = (a + d.sqrt()).cbrt();
        if c.abs() < 1e-14 {
            0.0
        } else {
            c - b / c
        }
    } else {
        let sb = (-b).sqrt();
        let sb3 = sb * sb * sb;
        let d = (a - sb3) * (a + sb3);
        if d >= 0.0 {
            let c = (a + d.sqrt()).cbrt();
            if c.abs() < 1e-14 {
                0.0
            } else {
                c - b / c
            }
        } else {
            let ratio = (a / sb3).clamp(-1.0, 1.0);
            2.0 * sb * (ratio.acos() / 3.0).cos()
        }
    }
}

/// Euclidean projection onto the epigraph `p_t >= alpha |p_x|^2 - offset`,
/// in place. Feasible inputs are untouched; otherwise the nearest parabola
/// point is computed from the cubic root and the output satisfies the
/// constraint with equality up to roundoff.
pub fn project_parabola(px: &mut [f64], pt: &mut f64, spec: ParabolaSpec) {
    let alpha = spec.alpha;
    let shifted_t = *pt + spec.offset;
    let nx_sq: f64 = px.iter().map(|x| x * x).sum();
    if shifted_t >= alpha * nx_sq {
        return;
    }
    let nx = nx_sq.sqrt();
    let a = 2.0 * alpha * nx;
    let b = (2.0 / 3.0) * (1.0 - 2.0 * alpha * shifted_t);
    let w = depressed_cubic_root(a, b).max(0.0);
    let new_norm = w / (2.0 * alpha);
    if nx > 0.0 {
        let scale = new_norm / nx;
        for x in px.iter_mut() {
            *x *= scale;
        }
    } else {
        for x in px.iter_mut() {
            *x = 0.0;
        }
    }
    let nx_new_sq: f64 = px.iter().map(|x| x * x).sum();
    *pt = alpha * nx_new_sq - spec.offset;
}

/// Scales `s` into the closed Euclidean ball of radius `nu`; interior
/// points are untouched.
#[inline]
pub fn project_ball(s: &mut [f64], nu: f64) {
    debug_assert!(nu >= 0.0);
    let norm_sq: f64 = s.iter().map(|x| x * x).sum();
    if norm_sq > nu * nu {
        let scale = nu / norm_sq.sqrt();
        for x in s.iter_mut() {
            *x *= scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::GridShape;
    use proptest::prelude::*;

    /// Dense-search oracle for the nearest parabola point. The projection is
    /// rotationally symmetric around the lifted axis, so searching over the
    /// radius suffices for any spatial dimension.
    fn nearest_on_parabola(nx: f64, pt: f64, alpha: f64) -> (f64, f64) {
        let mut best = (0.0, f64::INFINITY);
        let hi = nx.max(pt.abs().sqrt() / alpha.sqrt()).max(1.0) * 2.0;
        let mut lo_r = 0.0;
        let mut hi_r = hi;
        for _ in 0..4 {
            let steps = 4000;
            let mut local = (lo_r, f64::INFINITY);
            for i in 0..=steps {
                let r = lo_r + (hi_r - lo_r) * i as f64 / steps as f64;
                let t = alpha * r * r;
                let d2 = (r - nx).powi(2) + (t - pt).powi(2);
                if d2 < local.1 {
                    local = (r, d2);
                }
            }
            let width = (hi_r - lo_r) / steps as f64;
            lo_r = (local.0 - 2.0 * width).max(0.0);
            hi_r = local.0 + 2.0 * width;
            best = local;
        }
        (best.0, alpha * best.0 * best.0)
    }

    #[test]
    fn apex_projection_from_below() {
        let mut px = [0.0];
        let mut pt = -1.0;
        project_parabola(&mut px, &mut pt, ParabolaSpec::new(1.0, 0.0).unwrap());
        assert_eq!(px[0], 0.0);
        assert!(pt.abs() < 1e-15);
    }

    #[test]
    fn feasible_point_unchanged() {
        let mut px = [0.3, -0.2];
        let mut pt = 5.0;
        let before = (px, pt);
        project_parabola(&mut px, &mut pt, ParabolaSpec::new(2.0, 0.1).unwrap());
        assert_eq!((px, pt), before);
    }

    #[test]
    fn matches_dense_oracle() {
        let cases = [
            (2.0f64, 0.0f64, 1.0f64),
            (0.5, -3.0, 1.0),
            (1.0, -0.2, 0.25),
            (3.0, 2.0, 2.0),
            (0.05, -0.5, 10.0),
        ];
        for &(nx, pt0, alpha) in &cases {
            let mut px = [nx];
            let mut pt = pt0;
            project_parabola(&mut px, &mut pt, ParabolaSpec::new(alpha, 0.0).unwrap());
            if pt0 >= alpha * nx * nx {
                continue;
            }
            let (r, t) = nearest_on_parabola(nx, pt0, alpha);
            assert!(
                (px[0] - r).abs() < 1e-4 && (pt - t).abs() < 1e-4,
                "alpha {alpha}: got ({}, {pt}), oracle ({r}, {t})",
                px[0]
            );
        }
    }

    #[test]
    fn offset_shifts_the_parabola() {
        let spec = ParabolaSpec::new(1.5, 0.7).unwrap();
        let mut px = [1.2, 0.4];
        let mut pt = -2.0;
        project_parabola(&mut px, &mut pt, spec);
        let nx_sq: f64 = px.iter().map(|x| x * x).sum();
        assert!((pt - (spec.alpha * nx_sq - spec.offset)).abs() < 1e-10);

        // same projection in the shifted frame with zero offset
        let mut qx = [1.2, 0.4];
        let mut qt = -2.0 + 0.7;
        project_parabola(&mut qx, &mut qt, ParabolaSpec::new(1.5, 0.0).unwrap());
        assert!((qt - 0.7 - pt).abs() < 1e-12);
        for (a, b) in px.iter().zip(&qx) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ball_projection_rescales() {
        let mut s = [3.0, 4.0];
        project_ball(&mut s, 1.0);
        assert!((s[0] - 0.6).abs() < 1e-15);
        assert!((s[1] - 0.8).abs() < 1e-15);
        let mut inside = [0.1, -0.2];
        project_ball(&mut inside, 1.0);
        assert_eq!(inside, [0.1, -0.2]);
        let mut z = [0.5];
        project_ball(&mut z, 0.0);
        assert_eq!(z, [0.0]);
    }

    #[test]
    fn box_projection_pins_boundary_levels() {
        let shape = GridShape::new(vec![2], 4);
        let mut v = PrimalField::from_vec(
            vec![0.2, 1.7, -0.3, 0.9, 0.5, 0.5, 0.5, 0.5],
            shape,
        )
        .unwrap();
        project_c(&mut v);
        assert_eq!(v.data[0], 1.0);
        assert_eq!(v.data[3], 0.0);
        assert_eq!(v.data[1], 1.0);
        assert_eq!(v.data[2], 0.0);
        assert_eq!(v.data[4], 1.0);
        assert_eq!(v.data[7], 0.0);
    }

    #[test]
    fn curvature_must_be_positive() {
        assert!(matches!(
            ParabolaSpec::new(0.0, 0.0),
            Err(FdrError::NonpositiveCurvature(_))
        ));
        assert!(matches!(
            ParabolaSpec::new(-1.0, 0.0),
            Err(FdrError::NonpositiveCurvature(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn parabola_projection_idempotent_and_feasible(
            x0 in -5.0f64..5.0,
            x1 in -5.0f64..5.0,
            t in -5.0f64..5.0,
            alpha in 0.05f64..8.0,
            offset in 0.0f64..2.0,
        ) {
            let spec = ParabolaSpec::new(alpha, offset).unwrap();
            let mut px = [x0, x1];
            let mut pt = t;
            project_parabola(&mut px, &mut pt, spec);
            let nx_sq: f64 = px.iter().map(|v| v * v).sum();
            prop_assert!(pt >= alpha * nx_sq - offset - 1e-10);

            let (qx, qt) = (px, pt);
            project_parabola(&mut px, &mut pt, spec);
            prop_assert!((px[0] - qx[0]).abs() < 1e-10);
            prop_assert!((px[1] - qx[1]).abs() < 1e-10);
            prop_assert!((pt - qt).abs() < 1e-10);
        }

        #[test]
        fn parabola_projection_nonexpansive(
            a0 in -4.0f64..4.0, a1 in -4.0f64..4.0, at in -4.0f64..4.0,
            b0 in -4.0f64..4.0, b1 in -4.0f64..4.0, bt in -4.0f64..4.0,
            alpha in 0.1f64..4.0,
            offset in 0.0f64..1.0,
        ) {
            let spec = ParabolaSpec::new(alpha, offset).unwrap();
            let (mut pa, mut ta) = ([a0, a1], at);
            let (mut pb, mut tb) = ([b0, b1], bt);
            let before = ((a0 - b0).powi(2) + (a1 - b1).powi(2) + (at - bt).powi(2)).sqrt();
            project_parabola(&mut pa, &mut ta, spec);
            project_parabola(&mut pb, &mut tb, spec);
            let after = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2) + (ta - tb).powi(2)).sqrt();
            prop_assert!(after <= before + 1e-10);
        }

        #[test]
        fn ball_projection_idempotent_and_nonexpansive(
            a in proptest::collection::vec(-5.0f64..5.0, 1..4),
            shift in proptest::collection::vec(-5.0f64..5.0, 1..4),
            nu in 0.0f64..3.0,
        ) {
            let mut pa = a.clone();
            project_ball(&mut pa, nu);
            let norm: f64 = pa.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(norm <= nu + 1e-12);
            let once = pa.clone();
            project_ball(&mut pa, nu);
            for (x, y) in pa.iter().zip(&once) {
                prop_assert!((x - y).abs() < 1e-12);
            }

            let b: Vec<f64> = a.iter().zip(shift.iter().cycle()).map(|(x, s)| x + s).collect();
            let mut pb = b.clone();
            project_ball(&mut pb, nu);
            let before: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            let after: f64 = once.iter().zip(&pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            prop_assert!(after <= before + 1e-10);
        }
    }
}
