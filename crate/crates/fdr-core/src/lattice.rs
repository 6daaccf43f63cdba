//! Flat indexing for fields on the lifted grid.
//!
//! Fields are stored in a single `Vec<f64>`, spatial cells row-major with the
//! level index fastest, so the block `cell * levels .. (cell + 1) * levels`
//! holds one vertical column of the lifted grid.

/// Shape of the lifted grid: spatial cell counts per axis plus the number of
/// levels along the lifted response axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridShape {
    pub dims: Vec<usize>,
    pub levels: usize,
}

impl GridShape {
    pub fn new(dims: Vec<usize>, levels: usize) -> Self {
        Self { dims, levels }
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    /// Number of spatial cells.
    pub fn spatial_len(&self) -> usize {
        self.dims.iter().product()
    }

    /// Number of lifted cells.
    pub fn len(&self) -> usize {
        self.spatial_len() * self.levels
    }

    /// Row-major strides in units of spatial cells.
    pub fn spatial_strides(&self) -> Vec<usize> {
        let d = self.dims.len();
        let mut strides = vec![1usize; d];
        for j in (0..d.saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * self.dims[j + 1];
        }
        strides
    }

    /// Multi-index of a flat spatial cell.
    pub fn cell_multi(&self, mut flat: usize) -> Vec<usize> {
        let strides = self.spatial_strides();
        let mut out = vec![0usize; self.dims.len()];
        for j in 0..self.dims.len() {
            out[j] = flat / strides[j];
            flat %= strides[j];
        }
        out
    }

    /// Per-cell bitmask with bit `j` set when the cell sits on the outflow
    /// face of spatial axis `j`. Axis count is limited to the mask width,
    /// far beyond the supported dimensions.
    pub fn outflow_masks(&self) -> Vec<u32> {
        assert!(self.dims.len() <= 32);
        let m = self.spatial_len();
        let strides = self.spatial_strides();
        let mut masks = vec![0u32; m];
        for (c, mask) in masks.iter_mut().enumerate() {
            let mut rem = c;
            for j in 0..self.dims.len() {
                let coord = rem / strides[j];
                rem %= strides[j];
                if coord + 1 == self.dims[j] {
                    *mask |= 1 << j;
                }
            }
        }
        masks
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strides_row_major() {
        let s = GridShape::new(vec![3, 4, 5], 2);
        assert_eq!(s.spatial_strides(), vec![20, 5, 1]);
        assert_eq!(s.spatial_len(), 60);
        assert_eq!(s.len(), 120);
    }

    #[test]
    fn multi_index_round_trip() {
        let s = GridShape::new(vec![3, 4], 2);
        let strides = s.spatial_strides();
        for c in 0..s.spatial_len() {
            let multi = s.cell_multi(c);
            let back: usize = multi.iter().zip(&strides).map(|(i, st)| i * st).sum();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn outflow_masks_mark_last_cells() {
        let s = GridShape::new(vec![2, 3], 2);
        let masks = s.outflow_masks();
        // cell (1, 2) is last along both axes
        assert_eq!(masks[1 * 3 + 2], 0b11);
        assert_eq!(masks[0], 0);
        assert_eq!(masks[2], 0b10);
    }

    #[test]
    fn zero_dim_shape_is_one_column() {
        let s = GridShape::new(vec![], 4);
        assert_eq!(s.spatial_len(), 1);
        assert_eq!(s.len(), 4);
        assert!(s.spatial_strides().is_empty());
    }
}
