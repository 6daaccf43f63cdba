//! Discrete gradient, adjoint and duality pairing on the lifted grid.
//!
//! The difference operator is the forward difference scaled by the cell
//! count of its axis, with the lifted response axis treated as one more
//! axis scaled by the level count. Components on outflow faces are zero,
//! which makes the operator adjoint pair exact without boundary terms.

use crate::error::{FdrError, Result};
use crate::grid::GridSpec;
use crate::lattice::GridShape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Relaxed indicator field on the lifted grid, stored flat with the level
/// index fastest (see [`crate::lattice::GridShape`]).
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalField {
    pub data: Vec<f64>,
    shape: GridShape,
}

impl PrimalField {
    pub fn zeros(shape: GridShape) -> Self {
        let n = shape.len();
        Self {
            data: vec![0.0; n],
            shape,
        }
    }

    pub fn constant(shape: GridShape, value: f64) -> Self {
        let n = shape.len();
        Self {
            data: vec![value; n],
            shape,
        }
    }

    pub fn from_vec(data: Vec<f64>, shape: GridShape) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(FdrError::GridMismatch(format!(
                "field length {} vs grid size {}",
                data.len(),
                shape.len()
            )));
        }
        Ok(Self { data, shape })
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }
}

/// Dual field with one component per spatial axis plus one for the lifted
/// axis, each shaped like a [`PrimalField`]. The lifted component is last.
#[derive(Debug, Clone, PartialEq)]
pub struct DualField {
    pub comps: Vec<Vec<f64>>,
    shape: GridShape,
}

impl DualField {
    pub fn zeros(shape: GridShape) -> Self {
        let n = shape.len();
        let comps = vec![vec![0.0; n]; shape.dim() + 1];
        Self { comps, shape }
    }

    pub fn from_comps(comps: Vec<Vec<f64>>, shape: GridShape) -> Result<Self> {
        if comps.len() != shape.dim() + 1 {
            return Err(FdrError::ShapeMismatch);
        }
        if comps.iter().any(|c| c.len() != shape.len()) {
            return Err(FdrError::ShapeMismatch);
        }
        Ok(Self { comps, shape })
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }
}

fn check_field(v: &PrimalField, grid: &GridSpec) -> Result<()> {
    if *v.shape() != grid.shape() {
        return Err(FdrError::GridMismatch(
            "primal field shape differs from grid".into(),
        ));
    }
    Ok(())
}

fn check_dual(p: &DualField, grid: &GridSpec) -> Result<()> {
    if *p.shape() != grid.shape() {
        return Err(FdrError::GridMismatch(
            "dual field shape differs from grid".into(),
        ));
    }
    Ok(())
}

/// Scaled forward differences: component `j` at cell `k` is
/// `N_j (v[k + e_j] - v[k])`, zero on the outflow face of axis `j`; the
/// lifted component uses the level count as its scale.
pub fn grad_forward(v: &PrimalField, grid: &GridSpec) -> Result<DualField> {
    check_field(v, grid)?;
    let shape = grid.shape();
    let d = shape.dim();
    let s = shape.levels;
    let strides = shape.spatial_strides();
    let m = shape.spatial_len();
    let mut out = DualField::zeros(shape.clone());

    for c in 0..m {
        let multi = shape.cell_multi(c);
        let base = c * s;
        for j in 0..d {
            if multi[j] + 1 < shape.dims[j] {
                let scale = shape.dims[j] as f64;
                let nb = base + strides[j] * s;
                for l in 0..s {
                    out.comps[j][base + l] = scale * (v.data[nb + l] - v.data[base + l]);
                }
            }
        }
        let scale = s as f64;
        for l in 0..s - 1 {
            out.comps[d][base + l] = scale * (v.data[base + l + 1] - v.data[base + l]);
        }
    }
    Ok(out)
}

/// Adjoint of [`grad_forward`] under the flat inner product:
/// `dot(grad_forward(v), p) == dot(v, divergence_adjoint(p))` exactly.
/// Outflow components of `p` never contribute.
pub fn divergence_adjoint(p: &DualField, grid: &GridSpec) -> Result<PrimalField> {
    check_dual(p, grid)?;
    let shape = grid.shape();
    let d = shape.dim();
    let s = shape.levels;
    let strides = shape.spatial_strides();
    let m = shape.spatial_len();
    let mut out = PrimalField::zeros(shape.clone());

    for c in 0..m {
        let multi = shape.cell_multi(c);
        let base = c * s;
        for l in 0..s {
            let idx = base + l;
            let mut acc = 0.0;
            for j in 0..d {
                let scale = shape.dims[j] as f64;
                if multi[j] > 0 {
                    acc += scale * p.comps[j][idx - strides[j] * s];
                }
                if multi[j] + 1 < shape.dims[j] {
                    acc -= scale * p.comps[j][idx];
                }
            }
            let scale = s as f64;
            if l > 0 {
                acc += scale * p.comps[d][idx - 1];
            }
            if l + 1 < s {
                acc -= scale * p.comps[d][idx];
            }
            out.data[idx] = acc;
        }
    }
    Ok(out)
}

/// Duality pairing `<p, D v>` of a dual field against the scaled forward
/// differences of `v`. With `normalized` the sum is divided by the number of
/// lifted cells.
pub fn pairing(p: &DualField, v: &PrimalField, grid: &GridSpec, normalized: bool) -> Result<f64> {
    check_field(v, grid)?;
    check_dual(p, grid)?;
    let shape = grid.shape();
    let d = shape.dim();
    let s = shape.levels;
    let strides = shape.spatial_strides();
    let m = shape.spatial_len();
    let mut acc = 0.0;

    for c in 0..m {
        let multi = shape.cell_multi(c);
        let base = c * s;
        for j in 0..d {
            if multi[j] + 1 < shape.dims[j] {
                let scale = shape.dims[j] as f64;
                let nb = base + strides[j] * s;
                for l in 0..s {
                    acc += scale * (v.data[nb + l] - v.data[base + l]) * p.comps[j][base + l];
                }
            }
        }
        let scale = s as f64;
        for l in 0..s - 1 {
            acc += scale * (v.data[base + l + 1] - v.data[base + l]) * p.comps[d][base + l];
        }
    }
    if normalized {
        acc /= shape.len() as f64;
    }
    Ok(acc)
}

/// Power-iteration estimate of the largest squared singular value of the
/// scaled difference operator. Grows with the square of the finest axis and
/// stays below `4 (d + 1) max_j N_j^2`.
pub fn operator_norm_sq(grid: &GridSpec, iters: usize, seed: u64) -> Result<f64> {
    let shape = grid.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = PrimalField::zeros(shape.clone());
    for x in v.data.iter_mut() {
        *x = rng.random::<f64>() - 0.5;
    }
    let mut estimate = 0.0;
    for _ in 0..iters.max(1) {
        let w = divergence_adjoint(&grad_forward(&v, grid)?, grid)?;
        let vv: f64 = v.data.iter().map(|x| x * x).sum();
        let vw: f64 = v.data.iter().zip(&w.data).map(|(a, b)| a * b).sum();
        if vv == 0.0 {
            return Ok(0.0);
        }
        estimate = vw / vv;
        let norm = w.data.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = PrimalField::from_vec(w.data.iter().map(|x| x / norm).collect(), shape.clone())?;
    }
    Ok(estimate)
}
