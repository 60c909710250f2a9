//! Comparison methods that attack the scrambled-view model without
//! transport-based alignment.
//!
//! Two reference approaches are provided. The first relaxes each unknown
//! rearrangement to a matrix with entries in `[0, 1]`, penalizes mass that
//! travels far on the pixel grid, and alternates gradient descent between the
//! signal and the relaxed matrices. The second simply pretends no
//! rearrangement happened and solves the resulting least-squares problem.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recovery::VALUE_BOUND;
use crate::signal::Signal;
use crate::view::ViewData;

/// Parameters for the relaxed-alignment gradient baseline.
///
/// The step schedule mirrors the proposed method's
/// (`step_size / (1 + step_decay * t)` within each inner loop) so the two are
/// comparable under the same iteration budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// Weight of the grid-distance penalty on the relaxed matrices.
    pub beta: f64,
    /// Weight of the row/column-sum penalty pulling the relaxed matrices
    /// toward doubly stochastic structure.
    pub mu: f64,
    /// Initial gradient step size.
    pub step_size: f64,
    /// Harmonic decay rate of the step size within each inner loop.
    pub step_decay: f64,
    /// Gradient steps per subproblem visit.
    pub inner_tmax: usize,
    /// Alternation rounds.
    pub outer_tmax: usize,
    /// Clip relaxed-matrix entries into `[0, 1]` after every step.
    pub box_projection: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        // mu = 10 * beta keeps the row/column sums near 1 without freezing
        // the matrices. The sum-penalty gradient recursion on an N-pixel
        // grid contracts only for step_size < 1 / (mu * N); anything larger
        // makes the matrices oscillate between clipped extremes and the
        // signal step then blows up under their inflated norm. The default
        // covers the standard 512-pixel scene with margin.
        Self {
            beta: 1.0,
            mu: 10.0,
            step_size: 1e-4,
            step_decay: 0.01,
            inner_tmax: 20,
            outer_tmax: 30,
            box_projection: true,
        }
    }
}

impl BaselineConfig {
    /// Checks parameter ranges. Zero weights are allowed so pieces of the
    /// objective can be switched off; negative values are rejected.
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) {
            return Err(Error::config("beta must be nonnegative and finite"));
        }
        if !(self.mu >= 0.0) {
            return Err(Error::config("mu must be nonnegative and finite"));
        }
        if !(self.step_size >= 0.0) {
            return Err(Error::config("step_size must be nonnegative and finite"));
        }
        if !(self.step_decay >= 0.0) {
            return Err(Error::config("step_decay must be nonnegative and finite"));
        }
        if self.inner_tmax == 0 || self.outer_tmax == 0 {
            return Err(Error::config("iteration bounds must be at least 1"));
        }
        Ok(())
    }

    fn step(&self, t: usize) -> f64 {
        self.step_size / (1.0 + self.step_decay * t as f64)
    }
}

fn check_finite(values: &Array1<f64>, context: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite() && v.abs() <= VALUE_BOUND) {
        Ok(())
    } else {
        Err(Error::NonFiniteIterate { context })
    }
}

fn check_matrix_finite(values: &Array2<f64>, context: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite() && v.abs() <= VALUE_BOUND) {
        Ok(())
    } else {
        Err(Error::NonFiniteIterate { context })
    }
}

fn validate_views(views: &[ViewData], x_init: &Signal) -> Result<()> {
    if views.is_empty() {
        return Err(Error::config("at least one view is required"));
    }
    for (i, view) in views.iter().enumerate() {
        if view.n() != x_init.len() {
            return Err(Error::dim(format!(
                "view {i} expects a signal of length {}, got {}",
                view.n(),
                x_init.len()
            )));
        }
    }
    Ok(())
}

/// Squared grid distances between all pixel pairs, the cost that
/// [`crate::ot::permutation_cost`] integrates against a matrix.
fn grid_cost(signal: &Signal) -> Array2<f64> {
    let grid = signal.grid();
    let n = grid.len();
    let mut c = Array2::zeros((n, n));
    for a in 0..n {
        for b in 0..n {
            c[(a, b)] = grid.sq_dist(a, b);
        }
    }
    c
}

/// Runs `steps` gradient steps on one view's relaxed alignment matrix `p`,
/// holding the signal fixed.
///
/// The descended objective is
/// `1/2 ||y - A p z||^2 + beta * <D, p> + mu * (||p 1 - 1||^2 + ||p' 1 - 1||^2)`
/// with `z` the deformed signal and `D` the squared grid distances. When
/// `cfg.box_projection` is set, entries are clipped into `[0, 1]` after every
/// step.
pub fn descend_relaxed_alignment(
    view: &ViewData,
    x: &Signal,
    p: &mut Array2<f64>,
    grid_costs: &Array2<f64>,
    cfg: &BaselineConfig,
    steps: usize,
) -> Result<()> {
    let n = view.n();
    if p.nrows() != n || p.ncols() != n {
        return Err(Error::dim(format!(
            "alignment matrix is {}x{}, expected {n}x{n}",
            p.nrows(),
            p.ncols()
        )));
    }
    let z = view.f().apply(x.values());
    let ones = Array1::from_elem(n, 1.0);
    for t in 1..=steps {
        let residual = view.a().apply(&p.dot(&z)) - view.y();
        let back = view.a().apply_transpose(&residual);
        let row_gap = p.dot(&ones) - &ones;
        let col_gap = p.t().dot(&ones) - &ones;
        let gamma = cfg.step(t);
        for i in 0..n {
            for j in 0..n {
                let grad = back[i] * z[j]
                    + cfg.beta * grid_costs[(i, j)]
                    + 2.0 * cfg.mu * (row_gap[i] + col_gap[j]);
                let mut value = p[(i, j)] - gamma * grad;
                if cfg.box_projection {
                    value = value.clamp(0.0, 1.0);
                }
                p[(i, j)] = value;
            }
        }
        check_matrix_finite(p, "relaxed alignment matrix")?;
    }
    Ok(())
}

fn descend_signal(
    views: &[ViewData],
    ps: &[Array2<f64>],
    x: &mut Signal,
    cfg: &BaselineConfig,
) -> Result<()> {
    for t in 1..=cfg.inner_tmax {
        let mut grad = Array1::zeros(x.len());
        for (view, p) in views.iter().zip(ps) {
            let z = view.f().apply(x.values());
            let residual = view.a().apply(&p.dot(&z)) - view.y();
            let back = p.t().dot(&view.a().apply_transpose(&residual));
            grad += &view.f().apply_transpose(&back);
        }
        let gamma = cfg.step(t);
        *x.values_mut() -= &(&grad * gamma);
        check_finite(x.values(), "relaxed-alignment signal estimate")?;
    }
    Ok(())
}

/// Alternating gradient descent on the signal and per-view relaxed alignment
/// matrices.
///
/// Minimizes
/// `sum_i 1/2 ||y_i - A_i P_i F_i x||^2 + beta * <D, P_i> + mu * penalty(P_i)`
/// over `x` and `P_i in [0, 1]^{N x N}`, starting every `P_i` at the
/// identity. Returns the final signal estimate; the matrices are internal.
pub fn baseline_gradient(
    views: &[ViewData],
    cfg: &BaselineConfig,
    x_init: &Signal,
) -> Result<Signal> {
    cfg.validate()?;
    validate_views(views, x_init)?;
    let n = x_init.len();
    let grid_costs = grid_cost(x_init);
    let mut ps: Vec<Array2<f64>> = (0..views.len()).map(|_| Array2::eye(n)).collect();
    let mut x = x_init.clone();
    for _ in 0..cfg.outer_tmax {
        for (view, p) in views.iter().zip(ps.iter_mut()) {
            descend_relaxed_alignment(view, &x, p, &grid_costs, cfg, cfg.inner_tmax)?;
        }
        descend_signal(views, &ps, &mut x, cfg)?;
    }
    Ok(x)
}

/// Least squares that pretends no rearrangement happened.
///
/// Solves `min_x sum_i 1/2 ||y_i - A_i F_i x||^2` with conjugate gradients on
/// the normal equations, starting from `x_init`. When the stacked operator
/// has full column rank this converges to the unique least-squares solution.
pub fn baseline_ignore_p(
    views: &[ViewData],
    cfg: &BaselineConfig,
    x_init: &Signal,
) -> Result<Signal> {
    cfg.validate()?;
    validate_views(views, x_init)?;
    let n = x_init.len();

    let apply_normal = |x: &Array1<f64>| -> Array1<f64> {
        let mut out = Array1::zeros(n);
        for view in views {
            let forward = view.a().apply(&view.f().apply(x));
            out += &view.f().apply_transpose(&view.a().apply_transpose(&forward));
        }
        out
    };
    let rhs: Array1<f64> = {
        let mut out = Array1::zeros(n);
        for view in views {
            out += &view.f().apply_transpose(&view.a().apply_transpose(view.y()));
        }
        out
    };

    let mut x = x_init.values().clone();
    let mut residual = &rhs - &apply_normal(&x);
    let mut direction = residual.clone();
    let mut rho = residual.dot(&residual);
    let tol = 1e-28 * rhs.dot(&rhs).max(1.0);
    // CG on the normal equations reaches the least-squares solution in at
    // most n steps in exact arithmetic; the margin absorbs rounding.
    let max_iters = 2 * n + 10;
    for _ in 0..max_iters {
        if rho <= tol {
            break;
        }
        let nd = apply_normal(&direction);
        let denom = direction.dot(&nd);
        if denom <= 0.0 || !denom.is_finite() {
            break;
        }
        let alpha = rho / denom;
        x += &(&direction * alpha);
        residual -= &(&nd * alpha);
        let rho_next = residual.dot(&residual);
        direction = &residual + &(&direction * (rho_next / rho));
        rho = rho_next;
        check_finite(&x, "least-squares baseline iterate")?;
    }
    x_init.with_values(x)
}

/// Fraction of a matrix's total mass that sits on the diagonal. Zero-mass
/// matrices report zero.
pub fn diagonal_mass_fraction(p: &Array2<f64>) -> f64 {
    let total: f64 = p.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let diag: f64 = (0..p.nrows().min(p.ncols())).map(|i| p[(i, i)]).sum();
    diag / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::metrics::nmse;
    use crate::ot::permutation_cost;
    use crate::seeds::rng_from_seed;
    use crate::view::{DeformationOp, LinearMeasurementOp};
    use rand::Rng;

    fn random_perm(n: usize, rng: &mut impl Rng) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            p.swap(i, j);
        }
        p
    }

    fn sparse_signal(grid: Grid, support: &[usize]) -> Signal {
        let mut values = Array1::zeros(grid.len());
        for (k, &idx) in support.iter().enumerate() {
            values[idx] = 0.8 + 0.1 * k as f64;
        }
        Signal::new(grid, values).unwrap()
    }

    #[test]
    fn gradient_baseline_stays_at_identity_optimum() {
        let g = Grid::new(3, 3).unwrap();
        let x_true = sparse_signal(g, &[0, 4, 7]);
        let mut rng = rng_from_seed(400);
        let mut views = Vec::new();
        for _ in 0..2 {
            let f = DeformationOp::from_permutation(random_perm(9, &mut rng)).unwrap();
            let y = f.apply(x_true.values());
            views.push(ViewData::new(y, LinearMeasurementOp::identity(9), f).unwrap());
        }
        let mut cfg = BaselineConfig::default();
        cfg.outer_tmax = 5;
        cfg.inner_tmax = 5;
        let x_hat = baseline_gradient(&views, &cfg, &x_true).unwrap();
        let err = nmse(&x_hat, &x_true).unwrap();
        assert!(err <= 1e-6, "nmse {err}");
    }

    #[test]
    fn large_beta_concentrates_mass_on_the_diagonal() {
        let g = Grid::new(3, 3).unwrap();
        let x = sparse_signal(g, &[1, 4, 6]);
        let view = ViewData::new(
            x.values().clone(),
            LinearMeasurementOp::identity(9),
            DeformationOp::identity(9),
        )
        .unwrap();
        let mut cfg = BaselineConfig::default();
        cfg.mu = 0.0;
        cfg.beta = 5.0;
        cfg.step_size = 0.01;
        let costs = grid_cost(&x);
        let mut p = Array2::from_elem((9, 9), 0.5);
        let mut fractions = vec![diagonal_mass_fraction(&p)];
        for _ in 0..5 {
            descend_relaxed_alignment(&view, &x, &mut p, &costs, &cfg, 3).unwrap();
            assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            fractions.push(diagonal_mass_fraction(&p));
        }
        for w in fractions.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "fraction dropped: {:?}", fractions);
        }
        assert!(
            fractions[fractions.len() - 1] > fractions[0] + 0.05,
            "fractions {fractions:?}"
        );
        assert!(
            permutation_cost(&p, g).unwrap() < permutation_cost(&Array2::from_elem((9, 9), 0.5), g).unwrap()
        );
    }

    #[test]
    fn box_projection_keeps_entries_in_range_under_large_steps() {
        let g = Grid::new(2, 3).unwrap();
        let x = sparse_signal(g, &[0, 3, 5]);
        let mut rng = rng_from_seed(401);
        let a = LinearMeasurementOp::gaussian(5, 6, &mut rng).unwrap();
        let y = a.apply(x.values());
        let view = ViewData::new(y, a, DeformationOp::identity(6)).unwrap();
        let mut cfg = BaselineConfig::default();
        cfg.step_size = 5.0;
        let costs = grid_cost(&x);
        let mut p = Array2::eye(6);
        descend_relaxed_alignment(&view, &x, &mut p, &costs, &cfg, 10).unwrap();
        assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn ignore_p_recovers_exactly_when_no_scramble_happened() {
        let g = Grid::new(3, 4).unwrap();
        let x_true = sparse_signal(g, &[2, 5, 8, 11]);
        let mut rng = rng_from_seed(402);
        let mut views = Vec::new();
        for _ in 0..2 {
            let f = DeformationOp::from_permutation(random_perm(12, &mut rng)).unwrap();
            let a = LinearMeasurementOp::gaussian(8, 12, &mut rng).unwrap();
            let y = a.apply(&f.apply(x_true.values()));
            views.push(ViewData::new(y, a, f).unwrap());
        }
        let x_init = Signal::zeros(g);
        let x_hat = baseline_ignore_p(&views, &BaselineConfig::default(), &x_init).unwrap();
        let err = nmse(&x_hat, &x_true).unwrap();
        assert!(err <= 1e-10, "nmse {err}");
    }

    #[test]
    fn ignore_p_single_identity_view_returns_the_observation() {
        let g = Grid::new(2, 3).unwrap();
        let x = sparse_signal(g, &[1, 2, 4]);
        let view = ViewData::new(
            x.values().clone(),
            LinearMeasurementOp::identity(6),
            DeformationOp::identity(6),
        )
        .unwrap();
        let x_hat =
            baseline_ignore_p(&[view], &BaselineConfig::default(), &Signal::zeros(g)).unwrap();
        for (got, want) in x_hat.values().iter().zip(x.values()) {
            assert!((got - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn ignore_p_suffers_under_a_real_scramble() {
        let g = Grid::new(4, 4).unwrap();
        let x_true = sparse_signal(g, &[0, 5, 10, 15]);
        let mut rng = rng_from_seed(403);
        let mut views = Vec::new();
        for _ in 0..2 {
            let f = DeformationOp::from_permutation(random_perm(16, &mut rng)).unwrap();
            let p = DeformationOp::from_permutation(random_perm(16, &mut rng)).unwrap();
            let a = LinearMeasurementOp::gaussian(16, 16, &mut rng).unwrap();
            let y = a.apply(&p.apply(&f.apply(x_true.values())));
            views.push(ViewData::new(y, a, f).unwrap());
        }
        let x_hat =
            baseline_ignore_p(&views, &BaselineConfig::default(), &Signal::zeros(g)).unwrap();
        let err = nmse(&x_hat, &x_true).unwrap();
        assert!(err > 0.05, "nmse unexpectedly small: {err}");
    }

    #[test]
    fn ignore_p_matches_transport_method_when_scrambles_are_identity() {
        use crate::recovery::{recover, RecoveryConfig};
        use crate::signal::SupportSet;

        let g = Grid::new(3, 4).unwrap();
        let support = vec![1usize, 4, 7, 10];
        let x_true = sparse_signal(g, &support);
        let mut rng = rng_from_seed(404);
        let mut views = Vec::new();
        for _ in 0..2 {
            let f = DeformationOp::from_permutation(random_perm(12, &mut rng)).unwrap();
            let y = f.apply(x_true.values());
            views.push(ViewData::new(y, LinearMeasurementOp::identity(12), f).unwrap());
        }
        let x_ls =
            baseline_ignore_p(&views, &BaselineConfig::default(), &Signal::zeros(g)).unwrap();

        // Vanishing transport weight reduces the proposed objective to the
        // same least-squares problem; both must land on the truth here.
        let mut cfg = RecoveryConfig::new(SupportSet::new(support).unwrap(), 4);
        cfg.beta = 1e-6;
        cfg.outer_tmax = 20;
        let x_init = x_ls.clone();
        let (x_ot, _) = recover(&views, &cfg, &x_init).unwrap();
        let gap = nmse(&x_ot, &x_ls).unwrap();
        assert!(gap <= 1e-6, "gap {gap}");
        assert!(nmse(&x_ls, &x_true).unwrap() <= 1e-10);
        assert!(nmse(&x_ot, &x_true).unwrap() <= 1e-6);
    }

    #[test]
    fn rejects_empty_view_lists_and_bad_parameters() {
        let g = Grid::new(2, 2).unwrap();
        let x = sparse_signal(g, &[0, 3]);
        let err = baseline_gradient(&[], &BaselineConfig::default(), &x).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
        let mut cfg = BaselineConfig::default();
        cfg.mu = -1.0;
        let view = ViewData::new(
            x.values().clone(),
            LinearMeasurementOp::identity(4),
            DeformationOp::identity(4),
        )
        .unwrap();
        let err = baseline_ignore_p(&[view], &cfg, &x).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }
}
