//! Probability marginals derived from reflectivity signals.
//!
//! A signal is mapped to a distribution that is uniform over the pixels whose
//! value exceeds a threshold; the threshold is picked so that a prescribed
//! number of the largest pixels pass. These distributions are the two
//! marginals of every transport problem the recovery solves.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::signal::Signal;

/// Tolerance for "the weights sum to one".
pub const MARGINAL_SUM_TOL: f64 = 1e-12;

/// Values at or below this are treated as zero when picking thresholds.
const DEGENERATE_LEVEL: f64 = 1e-12;

/// A probability distribution over the pixels of a grid.
///
/// `support` lists the indices with strictly positive weight, in increasing
/// order; the weights sum to one within [`MARGINAL_SUM_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    weights: Array1<f64>,
    support: Vec<usize>,
}

impl Marginal {
    pub fn from_weights(weights: Array1<f64>) -> Result<Self> {
        if let Some(&w) = weights.iter().find(|&&w| !(w >= 0.0)) {
            return Err(Error::InfeasibleMarginals(format!(
                "negative or NaN weight {w}"
            )));
        }
        let sum: f64 = weights.sum();
        if (sum - 1.0).abs() > MARGINAL_SUM_TOL {
            return Err(Error::InfeasibleMarginals(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        let support: Vec<usize> = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(n, _)| n)
            .collect();
        if support.is_empty() {
            return Err(Error::InfeasibleMarginals("all weights are zero".into()));
        }
        Ok(Marginal { weights, support })
    }

    /// Uniform distribution over `indices` inside a length-`n` vector.
    pub fn uniform_over(n: usize, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InfeasibleMarginals(
                "uniform marginal needs a nonempty index set".into(),
            ));
        }
        let mut support = indices.to_vec();
        support.sort_unstable();
        support.dedup();
        if let Some(&bad) = support.iter().find(|&&i| i >= n) {
            return Err(Error::dim(format!("support index {bad} out of range {n}")));
        }
        let mass = 1.0 / support.len() as f64;
        let mut weights = Array1::zeros(n);
        for &i in &support {
            weights[i] = mass;
        }
        Ok(Marginal { weights, support })
    }

    /// Length of the ambient vector, not of the support.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn weight(&self, n: usize) -> f64 {
        self.weights[n]
    }

    /// Indices with strictly positive weight, increasing.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// Weights restricted to the support, in support order.
    pub fn support_weights(&self) -> Vec<f64> {
        self.support.iter().map(|&n| self.weights[n]).collect()
    }

    /// True when every supported pixel carries the same weight.
    pub fn is_uniform(&self) -> bool {
        let mass = 1.0 / self.support.len() as f64;
        self.support
            .iter()
            .all(|&n| (self.weights[n] - mass).abs() <= MARGINAL_SUM_TOL)
    }
}

/// Maps a signal to the uniform distribution over its super-threshold pixels.
///
/// `weights[n] = 1{x[n] > t} / #{k : x[k] > t}`; entries at or below `t`,
/// including all negative values, get weight zero.
pub fn reflectivity_marginal(x: &Signal, t: f64) -> Result<Marginal> {
    if !(t > 0.0) {
        return Err(Error::config(format!("threshold must be positive, got {t}")));
    }
    let support = x.indices_above(t);
    if support.is_empty() {
        return Err(Error::EmptySupport { threshold: t });
    }
    Marginal::uniform_over(x.len(), &support)
}

/// Picks a threshold so that the `k` largest entries of `x` pass it.
///
/// With distinct values exactly the `k` largest satisfy `x[n] > t`; with ties
/// at the `k`-th value the threshold sits strictly below it, so every tied
/// entry passes. The returned value is the midpoint between the `k`-th
/// largest value and the next smaller one (floored at zero, since the
/// marginal map ignores non-positive values anyway).
pub fn threshold_for_support(x: &Signal, k: usize) -> Result<f64> {
    let n = x.len();
    if k == 0 || k > n {
        return Err(Error::config(format!(
            "support size {k} out of range 1..={n}"
        )));
    }
    let mut sorted: Vec<f64> = x.values().to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("non-finite signal value"));
    let kth = sorted[k - 1];
    let below = sorted[k..].iter().copied().find(|&v| v < kth);
    let floor = below.unwrap_or(0.0).max(0.0);
    Ok((floor + kth) / 2.0)
}

/// Marginal whose support is the `k` largest entries of `x`.
///
/// The usual path thresholds at [`threshold_for_support`]; if the `k`-th
/// largest value is not meaningfully positive no positive threshold can admit
/// `k` pixels, so the distribution falls back to uniform over the `k` largest
/// entries with ties broken toward lower indices. This keeps the marginal
/// well-defined for arbitrary iterates during optimization.
pub fn marginal_for_support_size(x: &Signal, k: usize) -> Result<Marginal> {
    let n = x.len();
    if k == 0 || k > n {
        return Err(Error::config(format!(
            "support size {k} out of range 1..={n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        x.values()[b]
            .partial_cmp(&x.values()[a])
            .expect("non-finite signal value")
            .then(a.cmp(&b))
    });
    let kth = x.values()[order[k - 1]];
    if kth > DEGENERATE_LEVEL {
        let t = threshold_for_support(x, k)?;
        reflectivity_marginal(x, t)
    } else {
        Marginal::uniform_over(n, &order[..k])
    }
}
