//! Rectangular pixel grid and index/position bookkeeping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A rows-by-cols pixel grid with row-major linear indexing.
///
/// Linear index `n` corresponds to position `(n / cols, n % cols)`; squared
/// Euclidean distances between positions drive both the transport ground cost
/// and the displacement bound of local permutations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    rows: usize,
    cols: usize,
}

impl Grid {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::config(format!(
                "grid dimensions must be positive, got {rows}x{cols}"
            )));
        }
        Ok(Grid { rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major position of linear index `n`.
    pub fn position(&self, n: usize) -> (usize, usize) {
        debug_assert!(n < self.len());
        (n / self.cols, n % self.cols)
    }

    /// Linear index of position `(r, c)`.
    pub fn index(&self, r: usize, c: usize) -> usize {
        debug_assert!(r < self.rows && c < self.cols);
        r * self.cols + c
    }

    pub fn contains(&self, r: i64, c: i64) -> bool {
        r >= 0 && c >= 0 && (r as usize) < self.rows && (c as usize) < self.cols
    }

    /// Squared Euclidean distance between the positions of two indices.
    pub fn sq_dist(&self, a: usize, b: usize) -> f64 {
        let (ra, ca) = self.position(a);
        let (rb, cb) = self.position(b);
        let dr = ra as f64 - rb as f64;
        let dc = ca as f64 - cb as f64;
        dr * dr + dc * dc
    }

    /// Chebyshev (max-coordinate) distance between the positions of two
    /// indices; local permutations bound displacement in this metric.
    pub fn chebyshev_dist(&self, a: usize, b: usize) -> usize {
        let (ra, ca) = self.position(a);
        let (rb, cb) = self.position(b);
        let dr = ra.abs_diff(rb);
        let dc = ca.abs_diff(cb);
        dr.max(dc)
    }
}
