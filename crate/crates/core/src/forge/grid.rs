//! Symbol grids and their patch renderings.

use serde::{Deserialize, Serialize};

use crate::model::vocab::CELL_KINDS;
use crate::model::PatchGrid;

/// Cell kind of an empty cell; kinds below it are symbols.
pub const EMPTY: u8 = (CELL_KINDS - 1) as u8;
pub const SYMBOLS: u8 = EMPTY;
/// Side of the square pooling window applied to question images.
pub const POOL: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    rows: usize,
    cols: usize,
    cells: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl BoundingBox {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row && r < self.row + self.height && c >= self.col && c < self.col + self.width
    }
}

impl Grid {
    pub fn new(rows: usize, cols: usize, cells: Vec<u8>) -> Self {
        assert_eq!(rows * cols, cells.len(), "grid buffer length");
        assert!(cells.iter().all(|&c| (c as usize) < CELL_KINDS), "cell kind out of range");
        Self { rows, cols, cells }
    }

    pub fn filled(rows: usize, cols: usize, kind: u8) -> Self {
        Self::new(rows, cols, vec![kind; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.cells[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, kind: u8) {
        self.cells[r * self.cols + c] = kind;
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn count(&self, kind: u8) -> usize {
        self.cells.iter().filter(|&&c| c == kind).count()
    }

    pub fn crop(&self, b: BoundingBox) -> Grid {
        assert!(b.row + b.height <= self.rows && b.col + b.width <= self.cols, "crop out of bounds");
        let mut cells = Vec::with_capacity(b.height * b.width);
        for r in b.row..b.row + b.height {
            cells.extend_from_slice(&self.cells[r * self.cols + b.col..r * self.cols + b.col + b.width]);
        }
        Grid::new(b.height, b.width, cells)
    }

    /// Pool window index containing cell `(r, c)`.
    pub fn pool_of(r: usize, c: usize) -> (usize, usize) {
        (r / POOL, c / POOL)
    }

    pub fn pool_dims(&self) -> (usize, usize) {
        (self.rows.div_ceil(POOL), self.cols.div_ceil(POOL))
    }

    /// Cells of pool window `(pr, pc)`, row-major, with their coordinates.
    pub fn pool_cells(&self, pr: usize, pc: usize) -> Vec<(usize, usize, u8)> {
        let mut out = Vec::with_capacity(POOL * POOL);
        for r in pr * POOL..((pr + 1) * POOL).min(self.rows) {
            for c in pc * POOL..((pc + 1) * POOL).min(self.cols) {
                out.push((r, c, self.get(r, c)));
            }
        }
        out
    }

    /// Kind histogram of each pool window, normalized by its cell count.
    /// Arrangement inside a window is lost.
    pub fn pooled(&self) -> PatchGrid {
        let (pr, pc) = self.pool_dims();
        let mut data = Vec::with_capacity(pr * pc * CELL_KINDS);
        for i in 0..pr {
            for j in 0..pc {
                let cells = self.pool_cells(i, j);
                let mut hist = [0.0; CELL_KINDS];
                for (_, _, k) in &cells {
                    hist[*k as usize] += 1.0;
                }
                data.extend(hist.iter().map(|h| h / cells.len() as f64));
            }
        }
        PatchGrid::new(pr, pc, CELL_KINDS, data).expect("sized above")
    }

    /// One patch per cell, one-hot over kinds.
    pub fn one_hot(&self) -> PatchGrid {
        let mut data = vec![0.0; self.cells.len() * CELL_KINDS];
        for (i, &k) in self.cells.iter().enumerate() {
            data[i * CELL_KINDS + k as usize] = 1.0;
        }
        PatchGrid::new(self.rows, self.cols, CELL_KINDS, data).expect("sized above")
    }

    pub fn render(&self) -> String {
        self.cells
            .chunks(self.cols.max(1))
            .map(|row| {
                row.iter()
                    .map(|&k| crate::model::vocab::cell(k as usize).name())
                    .collect::<String>()
            })
            .collect::<Vec<_>>()
            .join("/")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_and_pool() {
        let g = Grid::new(2, 2, vec![0, 1, 2, 3]);
        assert_eq!(g.crop(BoundingBox { row: 0, col: 1, height: 2, width: 1 }).cells(), &[1, 3]);
        let p = g.pooled();
        assert_eq!(p.patch_count(), 1);
        assert_eq!(&p.patch(0)[..4], &[0.25; 4]);
    }

    #[test]
    fn pooling_forgets_arrangement() {
        let a = Grid::new(2, 2, vec![0, 1, 2, 3]);
        let b = Grid::new(2, 2, vec![3, 2, 1, 0]);
        assert_eq!(a.pooled(), b.pooled());
        assert_ne!(a.one_hot(), b.one_hot());
    }
}
