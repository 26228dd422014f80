//! Orthonormal 2-D DCT-II on square blocks and block tiling of planes.
//!
//! With the orthonormal basis `C`, the forward transform is `C x Cᵀ` and the
//! inverse is `Cᵀ X C`. The inverse is therefore the exact adjoint of the
//! forward transform, which the trainer uses to pull pixel gradients back to
//! the coefficient domain.

use std::f64::consts::PI;

use crate::media_io::Plane;
use crate::{check_block_size, Result};

/// Precomputed DCT-II basis for one block size. Row `k` holds the `k`-th
/// basis vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DctPlan {
    size: usize,
    basis: Vec<f64>,
}

impl DctPlan {
    pub fn new(size: usize) -> Result<Self> {
        check_block_size(size)?;
        let n = size as f64;
        let mut basis = vec![0.0; size * size];
        for k in 0..size {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            for i in 0..size {
                basis[k * size + i] = scale * (PI * (2 * i + 1) as f64 * k as f64 / (2.0 * n)).cos();
            }
        }
        Ok(Self { size, basis })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn basis(&self) -> &[f64] {
        &self.basis
    }

    /// Basis vector `k` as a slice.
    pub fn basis_row(&self, k: usize) -> &[f64] {
        &self.basis[k * self.size..(k + 1) * self.size]
    }

    pub fn forward(&self, block: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; block.len()];
        self.forward_into(block, &mut out, &mut vec![0.0; block.len()]);
        out
    }

    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; coeffs.len()];
        self.inverse_into(coeffs, &mut out, &mut vec![0.0; coeffs.len()]);
        out
    }

    /// `out = C · block · Cᵀ`; `scratch` must hold `size²` values.
    pub fn forward_into(&self, block: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let n = self.size;
        assert_eq!(block.len(), n * n, "block is not {n}x{n}");
        // scratch = block · Cᵀ, i.e. 1-D DCT of every row
        for r in 0..n {
            let row = &block[r * n..(r + 1) * n];
            for k in 0..n {
                scratch[r * n + k] = dot(row, self.basis_row(k));
            }
        }
        // out = C · scratch, i.e. 1-D DCT of every column
        out[..n * n].fill(0.0);
        for k in 0..n {
            let out_row = &mut out[k * n..(k + 1) * n];
            for (r, &c) in self.basis_row(k).iter().enumerate() {
                let src = &scratch[r * n..(r + 1) * n];
                for (o, &s) in out_row.iter_mut().zip(src) {
                    *o += c * s;
                }
            }
        }
    }

    /// `out = Cᵀ · coeffs · C`; `scratch` must hold `size²` values.
    pub fn inverse_into(&self, coeffs: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let n = self.size;
        assert_eq!(coeffs.len(), n * n, "coefficient block is not {n}x{n}");
        // scratch = Cᵀ · coeffs
        scratch[..n * n].fill(0.0);
        for k in 0..n {
            let src = &coeffs[k * n..(k + 1) * n];
            for (r, &c) in self.basis_row(k).iter().enumerate() {
                let dst = &mut scratch[r * n..(r + 1) * n];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += c * s;
                }
            }
        }
        // out = scratch · C
        out[..n * n].fill(0.0);
        for r in 0..n {
            let out_row = &mut out[r * n..(r + 1) * n];
            for k in 0..n {
                let s = scratch[r * n + k];
                for (o, &c) in out_row.iter_mut().zip(self.basis_row(k)) {
                    *o += s * c;
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A plane cut into `rows x cols` blocks of `block_size²` values each,
/// stored block after block in raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrid {
    block_size: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl BlockGrid {
    pub fn zeros(block_size: usize, rows: usize, cols: usize) -> Self {
        Self {
            block_size,
            rows,
            cols,
            data: vec![0.0; rows * cols * block_size * block_size],
        }
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn block_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn block(&self, index: usize) -> &[f64] {
        let len = self.block_size * self.block_size;
        &self.data[index * len..(index + 1) * len]
    }

    pub fn block_mut(&mut self, index: usize) -> &mut [f64] {
        let len = self.block_size * self.block_size;
        &mut self.data[index * len..(index + 1) * len]
    }

    pub fn blocks(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.block_size * self.block_size)
    }

    pub fn blocks_mut(&mut self) -> std::slice::ChunksExactMut<'_, f64> {
        self.data.chunks_exact_mut(self.block_size * self.block_size)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Applies the forward DCT to every block in place.
    pub fn forward_dct(&mut self, plan: &DctPlan) {
        self.apply(plan, DctPlan::forward_into);
    }

    /// Applies the inverse DCT to every block in place.
    pub fn inverse_dct(&mut self, plan: &DctPlan) {
        self.apply(plan, DctPlan::inverse_into);
    }

    fn apply(&mut self, plan: &DctPlan, f: fn(&DctPlan, &[f64], &mut [f64], &mut [f64])) {
        assert_eq!(plan.size(), self.block_size, "plan/grid block size mismatch");
        let len = self.block_size * self.block_size;
        let mut input = vec![0.0; len];
        let mut scratch = vec![0.0; len];
        for block in self.blocks_mut() {
            input.copy_from_slice(block);
            f(plan, &input, block, &mut scratch);
        }
    }
}

/// Cuts `plane` into `block_size` blocks, padding the right and bottom edges
/// by replicating the last column and row.
pub fn tile(plane: &Plane, block_size: usize) -> BlockGrid {
    assert!(block_size > 0);
    let (w, h) = (plane.width(), plane.height());
    let cols = w.div_ceil(block_size);
    let rows = h.div_ceil(block_size);
    let mut grid = BlockGrid::zeros(block_size, rows, cols);
    for br in 0..rows {
        for bc in 0..cols {
            let block = grid.block_mut(br * cols + bc);
            for y in 0..block_size {
                let sy = (br * block_size + y).min(h - 1);
                for x in 0..block_size {
                    let sx = (bc * block_size + x).min(w - 1);
                    block[y * block_size + x] = plane.get(sx, sy);
                }
            }
        }
    }
    grid
}

/// Reassembles a plane of `width x height` from `grid`, dropping padding.
pub fn untile(grid: &BlockGrid, width: usize, height: usize) -> Result<Plane> {
    let b = grid.block_size;
    if width > grid.cols * b || height > grid.rows * b || width == 0 || height == 0 {
        return Err(crate::Error::Dimension(format!(
            "{width}x{height} plane does not fit {}x{} grid of {b}x{b} blocks",
            grid.cols, grid.rows
        )));
    }
    let mut samples = vec![0.0; width * height];
    for y in 0..height {
        let (br, iy) = (y / b, y % b);
        for x in 0..width {
            let (bc, ix) = (x / b, x % b);
            samples[y * width + x] = grid.block(br * grid.cols + bc)[iy * b + ix];
        }
    }
    Plane::new(width, height, samples)
}
