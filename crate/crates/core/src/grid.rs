//! Dense row-major grids shared by the simulator, the quantizer and the coder.

use crate::error::{Error, Result};

/// An `h × w` grid of per-cell values in raster order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid<T> {
    h: usize,
    w: usize,
    cells: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(h: usize, w: usize, value: T) -> Self {
        Self {
            h,
            w,
            cells: vec![value; h * w],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(h: usize, w: usize, cells: Vec<T>) -> Result<Self> {
        if cells.len() != h * w {
            return Err(Error::ShapeMismatch {
                expected: format!("{h}x{w} = {} cells", h * w),
                got: format!("{} cells", cells.len()),
            });
        }
        Ok(Self { h, w, cells })
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut cells = Vec::with_capacity(h * w);
        for u in 0..h {
            for v in 0..w {
                cells.push(f(u, v));
            }
        }
        Self { h, w, cells }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, u: usize, v: usize) -> &T {
        &self.cells[u * self.w + v]
    }

    pub fn get_mut(&mut self, u: usize, v: usize) -> &mut T {
        &mut self.cells[u * self.w + v]
    }

    pub fn cells(&self) -> &[T] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [T] {
        &mut self.cells
    }

    pub fn into_cells(self) -> Vec<T> {
        self.cells
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.h == other.h && self.w == other.w
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            h: self.h,
            w: self.w,
            cells: self.cells.iter().map(f).collect(),
        }
    }
}

/// Boolean selection mask over grid cells.
pub type Mask = Grid<bool>;

impl Mask {
    pub fn count_selected(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        debug_assert!(self.same_shape(other));
        Grid {
            h: self.h,
            w: self.w,
            cells: self
                .cells
                .iter()
                .zip(&other.cells)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }
}

/// `h × w × c` real-valued feature map, channels contiguous per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn from_vec(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::ShapeMismatch {
                expected: format!("{h}x{w}x{c} = {} values", h * w * c),
                got: format!("{} values", data.len()),
            });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("feature value at flat index {i}")));
        }
        Ok(Self { h, w, c, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn num_cells(&self) -> usize {
        self.h * self.w
    }

    pub fn cell(&self, u: usize, v: usize) -> &[f64] {
        self.cell_at(u * self.w + v)
    }

    pub fn cell_mut(&mut self, u: usize, v: usize) -> &mut [f64] {
        let i = u * self.w + v;
        &mut self.data[i * self.c..(i + 1) * self.c]
    }

    /// Cell by raster index.
    pub fn cell_at(&self, i: usize) -> &[f64] {
        &self.data[i * self.c..(i + 1) * self.c]
    }

    pub fn cell_at_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.c..(i + 1) * self.c]
    }

    pub fn cells(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.c.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_zero_cell(&self, i: usize) -> bool {
        self.cell_at(i).iter().all(|&x| x == 0.0)
    }

    /// Number of cells holding at least one nonzero channel.
    pub fn nonzero_cells(&self) -> usize {
        (0..self.num_cells()).filter(|&i| !self.is_zero_cell(i)).count()
    }

    pub fn same_shape(&self, other: &FeatureGrid) -> bool {
        self.h == other.h && self.w == other.w && self.c == other.c
    }

    pub fn check_same_shape(&self, other: &FeatureGrid) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: format!("{}x{}x{}", self.h, self.w, self.c),
                got: format!("{}x{}x{}", other.h, other.w, other.c),
            })
        }
    }

    /// Zeroes every cell where `mask` is false.
    pub fn masked(&self, mask: &Mask) -> FeatureGrid {
        let mut out = self.clone();
        for (i, &keep) in mask.cells().iter().enumerate() {
            if !keep {
                out.cell_at_mut(i).fill(0.0);
            }
        }
        out
    }
}
