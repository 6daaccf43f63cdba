//! Point clouds, grid construction and binning.
//!
//! The solver never sees individual observations. Points are averaged per
//! cell of an axis-aligned grid over the padded data bounding box, and a
//! covariate density estimate weights the data-fit term later on. Cells
//! without any points are filled from their face neighbours so every cell
//! carries a response value; a mask records which cells were filled.

use crate::error::{FdrError, Result};
use crate::lattice::GridShape;
use crate::stats;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Scattered observations: `n` points in `dim` covariate dimensions with one
/// scalar response each. Coordinates are stored row-major, all values finite.
#[derive(Debug, Clone)]
pub struct PointCloud {
    coords: Vec<f64>,
    ys: Vec<f64>,
    dim: usize,
}

impl PointCloud {
    pub fn new(coords: Vec<f64>, ys: Vec<f64>, dim: usize) -> Result<Self> {
        if ys.is_empty() {
            return Err(FdrError::EmptyCloud);
        }
        if dim == 0 {
            return Err(FdrError::BadConfig("covariate dimension is zero".into()));
        }
        if coords.len() != ys.len() * dim {
            return Err(FdrError::BadConfig(format!(
                "coordinate buffer has {} entries, expected {} * {}",
                coords.len(),
                ys.len(),
                dim
            )));
        }
        if !coords.iter().all(|v| v.is_finite()) {
            return Err(FdrError::NonFiniteInput("point coordinates".into()));
        }
        if !ys.iter().all(|v| v.is_finite()) {
            return Err(FdrError::NonFiniteInput("responses".into()));
        }
        Ok(Self { coords, ys, dim })
    }

    /// Reads rows `x1,...,xd,y` from a CSV file with a header whose last
    /// column must be named `y`. Rows with non-finite values are rejected.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.len() < 2 {
            return Err(FdrError::BadConfig(format!(
                "{}: need at least one covariate column and a response column",
                path.display()
            )));
        }
        let last = headers.iter().last().unwrap_or("");
        if last != "y" {
            return Err(FdrError::BadConfig(format!(
                "{}: last column must be named 'y', found '{last}'",
                path.display()
            )));
        }
        let dim = headers.len() - 1;
        let mut coords = Vec::new();
        let mut ys = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != dim + 1 {
                return Err(FdrError::BadConfig(format!(
                    "{}: row {} has {} fields, expected {}",
                    path.display(),
                    line + 2,
                    record.len(),
                    dim + 1
                )));
            }
            for (k, field) in record.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    FdrError::NonFiniteInput(format!(
                        "{}: row {}: '{}'",
                        path.display(),
                        line + 2,
                        field
                    ))
                })?;
                if !v.is_finite() {
                    return Err(FdrError::NonFiniteInput(format!(
                        "{}: row {}",
                        path.display(),
                        line + 2
                    )));
                }
                if k < dim {
                    coords.push(v);
                } else {
                    ys.push(v);
                }
            }
        }
        Self::new(coords, ys, dim)
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.ys[i]
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    /// New cloud restricted to the given point indices (order preserved,
    /// duplicates allowed). Used by the resampling routines.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let mut coords = Vec::with_capacity(idx.len() * self.dim);
        let mut ys = Vec::with_capacity(idx.len());
        for &i in idx {
            coords.extend_from_slice(self.x(i));
            ys.push(self.ys[i]);
        }
        Self::new(coords, ys, self.dim)
    }
}

/// Axis-aligned grid over the padded data box plus the lifted response axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Cells per spatial axis.
    pub n_cells: Vec<usize>,
    /// Cells along the lifted response axis.
    pub s_levels: usize,
    /// Closed per-axis bounds of the gridded region, original units.
    pub domain_box: Vec<(f64, f64)>,
    /// Response bounds covered by the lifted axis, original units.
    pub value_range: (f64, f64),
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_cells.len() != self.domain_box.len() {
            return Err(FdrError::BadConfig(
                "n_cells and domain_box lengths differ".into(),
            ));
        }
        for (j, &n) in self.n_cells.iter().enumerate() {
            if n < 2 {
                return Err(FdrError::BadConfig(format!(
                    "axis {j}: need at least 2 cells, got {n}"
                )));
            }
        }
        if self.s_levels < 2 {
            return Err(FdrError::BadConfig(format!(
                "need at least 2 levels, got {}",
                self.s_levels
            )));
        }
        for (j, &(lo, hi)) in self.domain_box.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(FdrError::BadConfig(format!(
                    "axis {j}: invalid bounds ({lo}, {hi})"
                )));
            }
        }
        let (vlo, vhi) = self.value_range;
        if !(vlo.is_finite() && vhi.is_finite() && vlo < vhi) {
            return Err(FdrError::BadConfig(format!(
                "invalid value range ({vlo}, {vhi})"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n_cells.len()
    }

    pub fn shape(&self) -> GridShape {
        GridShape::new(self.n_cells.clone(), self.s_levels)
    }

    pub fn spatial_len(&self) -> usize {
        self.n_cells.iter().product()
    }

    /// Per-axis cell width in original units.
    pub fn cell_widths(&self) -> Vec<f64> {
        self.domain_box
            .iter()
            .zip(&self.n_cells)
            .map(|(&(lo, hi), &n)| (hi - lo) / n as f64)
            .collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_widths().iter().product()
    }

    pub fn box_volume(&self) -> f64 {
        self.domain_box.iter().map(|&(lo, hi)| hi - lo).product()
    }

    pub fn value_span(&self) -> f64 {
        self.value_range.1 - self.value_range.0
    }

    /// Flat index of the spatial cell containing `x`. Coordinates are
    /// clamped to the box, so points on the far edge land in the last cell.
    pub fn cell_of(&self, x: &[f64]) -> usize {
        debug_assert_eq!(x.len(), self.dim());
        let mut flat = 0usize;
        for (j, &xj) in x.iter().enumerate() {
            let (lo, hi) = self.domain_box[j];
            let n = self.n_cells[j];
            let t = (xj - lo) / (hi - lo);
            let k = ((t * n as f64).floor() as isize).clamp(0, n as isize - 1) as usize;
            flat = flat * n + k;
        }
        flat
    }

    /// Centre of a flat spatial cell in original units.
    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        let multi = self.shape().cell_multi(flat);
        multi
            .iter()
            .enumerate()
            .map(|(j, &k)| {
                let (lo, hi) = self.domain_box[j];
                let w = (hi - lo) / self.n_cells[j] as f64;
                lo + (k as f64 + 0.5) * w
            })
            .collect()
    }
}

/// Builds a grid from the data bounding box, padded on each side by
/// `padding` times the axis width; the response range is padded the same
/// way. A degenerate axis (all coordinates equal) falls back to an absolute
/// pad of `padding` so every cell keeps positive width.
pub fn make_grid(
    cloud: &PointCloud,
    n_cells: &[usize],
    s_levels: usize,
    padding: f64,
) -> Result<GridSpec> {
    if n_cells.len() != cloud.dim() {
        return Err(FdrError::BadConfig(format!(
            "{} cell counts for {} covariate axes",
            n_cells.len(),
            cloud.dim()
        )));
    }
    if !(padding.is_finite() && padding >= 0.0) {
        return Err(FdrError::BadConfig(format!("invalid padding {padding}")));
    }
    let pad_bounds = |lo: f64, hi: f64| -> Result<(f64, f64)> {
        let width = hi - lo;
        let pad = if width > 0.0 {
            padding * width
        } else {
            // degenerate axis: absolute fallback keeps the box non-empty
            padding
        };
        let (plo, phi) = (lo - pad, hi + pad);
        if !(plo < phi) {
            return Err(FdrError::BadConfig(
                "degenerate axis with zero padding".into(),
            ));
        }
        Ok((plo, phi))
    };

    let d = cloud.dim();
    let mut domain_box = Vec::with_capacity(d);
    for j in 0..d {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..cloud.len() {
            let v = cloud.x(i)[j];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        domain_box.push(pad_bounds(lo, hi)?);
    }
    let (mut ylo, mut yhi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &y in cloud.ys() {
        ylo = ylo.min(y);
        yhi = yhi.max(y);
    }
    let value_range = pad_bounds(ylo, yhi)?;

    let spec = GridSpec {
        n_cells: n_cells.to_vec(),
        s_levels,
        domain_box,
        value_range,
    };
    spec.validate()?;
    Ok(spec)
}

/// How responses are averaged within a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    #[default]
    Uniform,
}

/// Covariate density model used to weight the data-fit term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DensityMode {
    /// Per-cell histogram: count / (n * cell volume).
    #[default]
    Histogram,
    /// Constant 1 / volume of the domain box.
    Uniform,
}

/// Binning choices bundled for the entry points that re-bin internally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinningOptions {
    pub weight: WeightMode,
    /// Upper-tail winsorization quantile in (0, 1]; 1 disables clipping.
    pub winsor_q: Option<f64>,
    pub density: DensityMode,
}

impl Default for BinningOptions {
    fn default() -> Self {
        Self {
            weight: WeightMode::Uniform,
            winsor_q: None,
            density: DensityMode::Histogram,
        }
    }
}

/// Per-cell data summaries on a grid, original units throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedData {
    /// Mean response per spatial cell; empty cells carry neighbour fill.
    pub f_hat: Vec<f64>,
    /// Covariate density estimate per spatial cell.
    pub fx_hat: Vec<f64>,
    /// Points landing in each cell.
    pub count: Vec<usize>,
    /// True where a cell had no points and the value was filled in.
    pub empty_mask: Vec<bool>,
}

/// Bins responses into per-cell means, winsorizing the upper tail first when
/// `winsor_q` is set. Empty cells are filled by repeatedly averaging filled
/// face neighbours until none remain. The density estimate follows
/// `opts.density`.
///
/// Per-cell sums run over value-sorted responses, so the result is exactly
/// invariant under permutations of the input points.
pub fn bin_points(cloud: &PointCloud, grid: &GridSpec, opts: &BinningOptions) -> Result<BinnedData> {
    grid.validate()?;
    if grid.dim() != cloud.dim() {
        return Err(FdrError::GridMismatch(format!(
            "cloud dimension {} vs grid dimension {}",
            cloud.dim(),
            grid.dim()
        )));
    }
    let WeightMode::Uniform = opts.weight;

    let cap = match opts.winsor_q {
        Some(q) => {
            if !(q > 0.0 && q <= 1.0) {
                return Err(FdrError::BadConfig(format!(
                    "winsor quantile {q} outside (0, 1]"
                )));
            }
            let mut sorted = cloud.ys().to_vec();
            stats::sort_floats(&mut sorted);
            stats::quantile_sorted(&sorted, q)
        }
        None => f64::INFINITY,
    };

    let m = grid.spatial_len();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); m];
    for i in 0..cloud.len() {
        let c = grid.cell_of(cloud.x(i));
        values[c].push(cloud.y(i).min(cap));
    }

    let mut f_hat = vec![0.0f64; m];
    let mut count = vec![0usize; m];
    let mut empty_mask = vec![false; m];
    for (c, vals) in values.iter_mut().enumerate() {
        count[c] = vals.len();
        if vals.is_empty() {
            empty_mask[c] = true;
        } else {
            stats::sort_floats(vals);
            f_hat[c] = vals.iter().sum::<f64>() / vals.len() as f64;
        }
    }

    fill_empty_cells(&mut f_hat, &empty_mask, grid);

    let fx_hat = density_from_counts(&count, cloud.len(), grid, opts.density);

    Ok(BinnedData {
        f_hat,
        fx_hat,
        count,
        empty_mask,
    })
}

/// Covariate density per spatial cell in original units. Histogram mode can
/// return zero for empty cells; any flooring happens where the solver builds
/// its constraints, not here.
pub fn estimate_density(cloud: &PointCloud, grid: &GridSpec, mode: DensityMode) -> Result<Vec<f64>> {
    grid.validate()?;
    if grid.dim() != cloud.dim() {
        return Err(FdrError::GridMismatch(format!(
            "cloud dimension {} vs grid dimension {}",
            cloud.dim(),
            grid.dim()
        )));
    }
    let mut count = vec![0usize; grid.spatial_len()];
    for i in 0..cloud.len() {
        count[grid.cell_of(cloud.x(i))] += 1;
    }
    Ok(density_from_counts(&count, cloud.len(), grid, mode))
}

fn density_from_counts(count: &[usize], n: usize, grid: &GridSpec, mode: DensityMode) -> Vec<f64> {
    match mode {
        DensityMode::Histogram => {
            let scale = 1.0 / (n as f64 * grid.cell_volume());
            count.iter().map(|&c| c as f64 * scale).collect()
        }
        DensityMode::Uniform => {
            vec![1.0 / grid.box_volume(); count.len()]
        }
    }
}

/// Jacobi-style fill: each round replaces every still-empty cell that has at
/// least one filled face neighbour by the mean of those neighbours, then
/// commits the round. Terminates because the grid is connected and at least
/// one cell starts filled.
fn fill_empty_cells(f_hat: &mut [f64], empty_mask: &[bool], grid: &GridSpec) {
    let shape = grid.shape();
    let strides = shape.spatial_strides();
    let mut open: Vec<usize> = (0..f_hat.len()).filter(|&c| empty_mask[c]).collect();
    let mut filled: Vec<bool> = empty_mask.iter().map(|e| !e).collect();

    while !open.is_empty() {
        let mut round: Vec<(usize, f64)> = Vec::new();
        for &c in &open {
            let multi = shape.cell_multi(c);
            let mut sum = 0.0;
            let mut k = 0usize;
            for j in 0..shape.dim() {
                if multi[j] > 0 {
                    let nb = c - strides[j];
                    if filled[nb] {
                        sum += f_hat[nb];
                        k += 1;
                    }
                }
                if multi[j] + 1 < shape.dims[j] {
                    let nb = c + strides[j];
                    if filled[nb] {
                        sum += f_hat[nb];
                        k += 1;
                    }
                }
            }
            if k > 0 {
                round.push((c, sum / k as f64));
            }
        }
        debug_assert!(!round.is_empty(), "neighbour fill made no progress");
        for &(c, v) in &round {
            f_hat[c] = v;
            filled[c] = true;
        }
        open.retain(|&c| !filled[c]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud_1d(xs: &[f64], ys: &[f64]) -> PointCloud {
        PointCloud::new(xs.to_vec(), ys.to_vec(), 1).unwrap()
    }

    #[test]
    fn empty_cloud_rejected() {
        assert!(matches!(
            PointCloud::new(vec![], vec![], 1),
            Err(FdrError::EmptyCloud)
        ));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            PointCloud::new(vec![f64::NAN], vec![1.0], 1),
            Err(FdrError::NonFiniteInput(_))
        ));
        assert!(matches!(
            PointCloud::new(vec![0.5], vec![f64::INFINITY], 1),
            Err(FdrError::NonFiniteInput(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let dir = std::env::temp_dir().join("fdr_grid_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("pts.csv");
        std::fs::write(&path, "x1,x2,y\n0.1,0.2,1.5\n0.3,0.4,-2.0\n").unwrap();
        let cloud = PointCloud::from_csv(&path).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.dim(), 2);
        assert_eq!(cloud.x(1), &[0.3, 0.4]);
        assert_eq!(cloud.y(1), -2.0);
    }

    #[test]
    fn csv_rejects_nan_rows_and_bad_header() {
        let dir = std::env::temp_dir().join("fdr_grid_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let bad = dir.join("bad.csv");
        std::fs::write(&bad, "x1,y\n0.1,nan\n").unwrap();
        assert!(matches!(
            PointCloud::from_csv(&bad),
            Err(FdrError::NonFiniteInput(_))
        ));
        let noy = dir.join("noy.csv");
        std::fs::write(&noy, "x1,value\n0.1,2.0\n").unwrap();
        assert!(matches!(
            PointCloud::from_csv(&noy),
            Err(FdrError::BadConfig(_))
        ));
    }

    #[test]
    fn degenerate_axis_gets_absolute_pad() {
        let cloud = cloud_1d(&[0.5, 0.5, 0.5], &[1.0, 2.0, 3.0]);
        let grid = make_grid(&cloud, &[4], 4, 0.05).unwrap();
        assert!((grid.domain_box[0].0 - 0.45).abs() < 1e-12);
        assert!((grid.domain_box[0].1 - 0.55).abs() < 1e-12);
    }

    #[test]
    fn far_edge_point_lands_in_last_cell() {
        let grid = GridSpec {
            n_cells: vec![4],
            s_levels: 2,
            domain_box: vec![(0.0, 1.0)],
            value_range: (0.0, 1.0),
        };
        assert_eq!(grid.cell_of(&[1.0]), 3);
        assert_eq!(grid.cell_of(&[0.0]), 0);
        assert_eq!(grid.cell_of(&[0.999]), 3);
        // clamped outside the box as well
        assert_eq!(grid.cell_of(&[1.5]), 3);
    }

    #[test]
    fn checkerboard_fill_averages_to_two() {
        // 3x3 grid over the unit square; corners 0,4,4,0 and centre 2 are
        // observed, the four edge-mid cells are empty. One fill round gives
        // each of them mean (0 + 4 + 2) / 3 = 2.
        let grid = GridSpec {
            n_cells: vec![3, 3],
            s_levels: 2,
            domain_box: vec![(0.0, 1.0), (0.0, 1.0)],
            value_range: (0.0, 4.0),
        };
        let pts = [
            (1.0 / 6.0, 1.0 / 6.0, 0.0),
            (1.0 / 6.0, 5.0 / 6.0, 4.0),
            (5.0 / 6.0, 1.0 / 6.0, 4.0),
            (5.0 / 6.0, 5.0 / 6.0, 0.0),
            (0.5, 0.5, 2.0),
        ];
        let coords: Vec<f64> = pts.iter().flat_map(|&(a, b, _)| [a, b]).collect();
        let ys: Vec<f64> = pts.iter().map(|&(_, _, y)| y).collect();
        let cloud = PointCloud::new(coords, ys, 2).unwrap();
        let binned = bin_points(&cloud, &grid, &BinningOptions::default()).unwrap();
        for c in [1usize, 3, 5, 7] {
            assert!(binned.empty_mask[c]);
            assert!((binned.f_hat[c] - 2.0).abs() < 1e-12, "cell {c}");
        }
        assert_eq!(binned.count.iter().sum::<usize>(), 5);
    }

    #[test]
    fn corner_histogram_density() {
        // unit square split 2x2, all points in the first cell: density 4 there
        let grid = GridSpec {
            n_cells: vec![2, 2],
            s_levels: 2,
            domain_box: vec![(0.0, 1.0), (0.0, 1.0)],
            value_range: (0.0, 1.0),
        };
        let n = 100;
        let mut coords = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let t = (i as f64 + 0.5) / n as f64;
            coords.extend_from_slice(&[0.25 * t, 0.4 * t]);
            ys.push(0.0);
        }
        let cloud = PointCloud::new(coords, ys, 2).unwrap();
        let dens = estimate_density(&cloud, &grid, DensityMode::Histogram).unwrap();
        assert!((dens[0] - 4.0).abs() < 1e-12);
        assert_eq!(&dens[1..], &[0.0, 0.0, 0.0]);
        let total: f64 = dens.iter().map(|d| d * grid.cell_volume()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_density_is_inverse_box_volume() {
        let cloud = cloud_1d(&[0.0, 1.0], &[0.0, 1.0]);
        let grid = make_grid(&cloud, &[5], 2, 0.0).unwrap();
        let dens = estimate_density(&cloud, &grid, DensityMode::Uniform).unwrap();
        for d in dens {
            assert!((d - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn winsor_caps_upper_tail_only() {
        let cloud = cloud_1d(&[0.1, 0.3, 0.5, 0.7, 0.9], &[1.0, 2.0, 3.0, 4.0, 100.0]);
        let grid = make_grid(&cloud, &[2], 2, 0.0).unwrap();
        let opts = BinningOptions {
            winsor_q: Some(0.5),
            ..Default::default()
        };
        let binned = bin_points(&cloud, &grid, &opts).unwrap();
        // cap is the median 3.0: cell 0 holds {1,2}, cell 1 holds {3,3,3}
        assert!((binned.f_hat[0] - 1.5).abs() < 1e-12);
        assert!((binned.f_hat[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mean_stays_within_response_range() {
        let cloud = cloud_1d(&[0.05, 0.1, 0.6, 0.8], &[-1.0, 3.0, 0.5, 0.25]);
        let grid = make_grid(&cloud, &[3], 4, 0.05).unwrap();
        let binned = bin_points(&cloud, &grid, &BinningOptions::default()).unwrap();
        for &f in &binned.f_hat {
            assert!((-1.0..=3.0).contains(&f));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn binning_is_permutation_invariant(
            pts in proptest::collection::vec((0.0f64..1.0, -5.0f64..5.0), 1..60),
            perm_seed in 0u64..1000,
        ) {
            let coords: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let cloud = cloud_1d(&coords, &ys);
            let grid = GridSpec {
                n_cells: vec![4],
                s_levels: 2,
                domain_box: vec![(-0.1, 1.1)],
                value_range: (-6.0, 6.0),
            };
            let a = bin_points(&cloud, &grid, &BinningOptions::default()).unwrap();

            // deterministic pseudo-shuffle of the points
            let mut idx: Vec<usize> = (0..pts.len()).collect();
            let mut state = perm_seed.wrapping_add(0x9e3779b97f4a7c15);
            for i in (1..idx.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                let j = (state >> 33) as usize % (i + 1);
                idx.swap(i, j);
            }
            let shuffled = cloud.subset(&idx).unwrap();
            let b = bin_points(&shuffled, &grid, &BinningOptions::default()).unwrap();
            prop_assert_eq!(a.f_hat, b.f_hat);
            prop_assert_eq!(a.count, b.count);
        }

        #[test]
        fn winsor_full_quantile_is_identity(
            pts in proptest::collection::vec((0.0f64..1.0, -5.0f64..5.0), 1..40),
        ) {
            let coords: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let cloud = cloud_1d(&coords, &ys);
            let grid = GridSpec {
                n_cells: vec![3],
                s_levels: 2,
                domain_box: vec![(-0.1, 1.1)],
                value_range: (-6.0, 6.0),
            };
            let plain = bin_points(&cloud, &grid, &BinningOptions::default()).unwrap();
            let capped = bin_points(
                &cloud,
                &grid,
                &BinningOptions { winsor_q: Some(1.0), ..Default::default() },
            )
            .unwrap();
            prop_assert_eq!(plain.f_hat, capped.f_hat);
        }
    }
}
