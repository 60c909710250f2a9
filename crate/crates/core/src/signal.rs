//! Reflectivity signals on a grid and their support sets.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// A real-valued signal over the pixels of a [`Grid`], stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SignalRepr", into = "SignalRepr")]
pub struct Signal {
    grid: Grid,
    values: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct SignalRepr {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl TryFrom<SignalRepr> for Signal {
    type Error = Error;

    fn try_from(r: SignalRepr) -> Result<Self> {
        Signal::new(Grid::new(r.rows, r.cols)?, Array1::from_vec(r.values))
    }
}

impl From<Signal> for SignalRepr {
    fn from(s: Signal) -> Self {
        SignalRepr {
            rows: s.grid.rows(),
            cols: s.grid.cols(),
            values: s.values.to_vec(),
        }
    }
}

impl Signal {
    pub fn new(grid: Grid, values: Array1<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::dim(format!(
                "signal length {} does not match grid size {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(Signal { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        let values = Array1::zeros(grid.len());
        Signal { grid, values }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array1<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array1<f64> {
        self.values
    }

    /// Replaces the values, keeping the grid.
    pub fn with_values(&self, values: Array1<f64>) -> Result<Self> {
        Signal::new(self.grid, values)
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Indices with values strictly above `threshold`.
    pub fn indices_above(&self, threshold: f64) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > threshold)
            .map(|(n, _)| n)
            .collect()
    }
}

/// A sorted, duplicate-free, nonempty set of pixel indices.
///
/// Used both as the ground-truth support of a scene and as the projection
/// target of support-constrained recovery.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct SupportSet {
    indices: Vec<usize>,
}

impl TryFrom<Vec<usize>> for SupportSet {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        SupportSet::new(v)
    }
}

impl From<SupportSet> for Vec<usize> {
    fn from(s: SupportSet) -> Self {
        s.indices
    }
}

impl SupportSet {
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptySupport {
                threshold: f64::NAN,
            });
        }
        indices.sort_unstable();
        indices.dedup();
        Ok(SupportSet { indices })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, n: usize) -> bool {
        self.indices.binary_search(&n).is_ok()
    }

    /// Zeroes every entry of `x` outside the support, in place.
    pub fn project(&self, x: &mut Array1<f64>) {
        let mut next = 0;
        for (n, v) in x.iter_mut().enumerate() {
            if next < self.indices.len() && self.indices[next] == n {
                next += 1;
            } else {
                *v = 0.0;
            }
        }
    }

    /// Support of `x` under the given threshold.
    pub fn from_signal(x: &Signal, threshold: f64) -> Result<Self> {
        let indices = x.indices_above(threshold);
        if indices.is_empty() {
            return Err(Error::EmptySupport { threshold });
        }
        Ok(SupportSet { indices })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(rows: usize, cols: usize, v: &[f64]) -> Signal {
        Signal::new(Grid::new(rows, cols).unwrap(), Array1::from_vec(v.to_vec())).unwrap()
    }

    #[test]
    fn signal_length_must_match_grid() {
        let g = Grid::new(2, 2).unwrap();
        assert!(Signal::new(g, Array1::zeros(3)).is_err());
    }

    #[test]
    fn signal_round_trips_through_json() {
        let s = sig(2, 3, &[0.0, 1.0, 0.0, 2.5, 0.0, -1.0]);
        let text = serde_json::to_string(&s).unwrap();
        let back: Signal = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn support_set_sorts_and_dedups() {
        let s = SupportSet::new(vec![5, 1, 3, 1]).unwrap();
        assert_eq!(s.indices(), &[1, 3, 5]);
        assert!(s.contains(3));
        assert!(!s.contains(2));
    }

    #[test]
    fn support_set_rejects_empty() {
        assert!(SupportSet::new(vec![]).is_err());
    }

    #[test]
    fn project_zeroes_complement() {
        let s = SupportSet::new(vec![0, 2]).unwrap();
        let mut x = Array1::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        s.project(&mut x);
        assert_eq!(x.to_vec(), vec![1.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn from_signal_honors_strict_threshold() {
        let x = sig(1, 4, &[0.2, 0.5, 0.5, 0.7]);
        let s = SupportSet::from_signal(&x, 0.5).unwrap();
        assert_eq!(s.indices(), &[3]);
        assert!(SupportSet::from_signal(&x, 1.0).is_err());
    }
}
