//! Alternating recovery of the prototype and the per-view estimates.
//!
//! The per-view objective couples a least-squares data term with a transport
//! distance between the reflectivity marginals of the view estimate and the
//! deformed prototype. Both minimizations run plain gradient descent; the
//! transport plan is re-solved before every step and held fixed inside the
//! gradient (envelope theorem), and the marginal map is treated as piecewise
//! constant, so its jumps contribute no gradient almost everywhere.
//!
//! Per-view solves are independent given the current prototype and could run
//! concurrently; this implementation keeps them sequential and leaves
//! parallelism to the sweep harness, which runs whole trials per worker.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::marginal::marginal_for_support_size;
use crate::ot::{build_cost_matrix, solve_ot, IpotParams, SolverKind, TransportPlan};
use crate::signal::{Signal, SupportSet};
use crate::view::{DeformationOp, ViewData};

/// Iterates beyond this magnitude are treated as diverged before they reach
/// infinity, keeping non-finite values out of the transport solvers.
pub(crate) const VALUE_BOUND: f64 = 1e150;

/// Tuning knobs of the alternating recovery.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryConfig {
    /// Weight of the transport term in the objective.
    pub beta: f64,
    /// Weight coupling reflectivity values through the plan; also scales the
    /// data mismatch inside the transport cost via `lambda/(2 beta)`.
    pub lambda: f64,
    /// Base gradient step; iteration `t` uses
    /// `step_size / (1 + step_decay * t)`.
    pub step_size: f64,
    pub step_decay: f64,
    /// Gradient steps per call of the view and prototype estimators.
    pub inner_tmax: usize,
    /// Alternations between view and prototype estimation.
    pub outer_tmax: usize,
    /// Known support of the prototype.
    pub support: SupportSet,
    /// Marginal support size `K_s`; thresholds pick this many pixels.
    pub support_size_per_view: usize,
    pub solver: SolverKind,
    pub ipot: IpotParams,
    /// Zero the prototype outside `support` after every update.
    pub project_support: bool,
}

impl RecoveryConfig {
    /// Defaults for a given known support; `support_size_per_view` is
    /// usually the support size itself.
    pub fn new(support: SupportSet, support_size_per_view: usize) -> Self {
        let lambda = 2.0;
        RecoveryConfig {
            beta: 1.0,
            lambda,
            step_size: 0.5 / lambda,
            step_decay: 0.01,
            inner_tmax: 20,
            outer_tmax: 30,
            support,
            support_size_per_view,
            solver: SolverKind::Exact,
            ipot: IpotParams::default(),
            project_support: true,
        }
    }

    /// Checks positivity and that indices fit a length-`n` signal.
    pub fn validate(&self, n: usize) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("lambda", self.lambda)] {
            if !(v > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        // Zero is allowed as a no-op schedule; negative steps ascend.
        if !(self.step_size >= 0.0) {
            return Err(Error::config(format!(
                "step_size must be nonnegative, got {}",
                self.step_size
            )));
        }
        if !(self.step_decay >= 0.0) {
            return Err(Error::config(format!(
                "step_decay must be nonnegative, got {}",
                self.step_decay
            )));
        }
        if self.inner_tmax == 0 || self.outer_tmax == 0 {
            return Err(Error::config("iteration bounds must be at least 1"));
        }
        if self.support_size_per_view == 0 || self.support_size_per_view > n {
            return Err(Error::config(format!(
                "support_size_per_view {} out of range 1..={n}",
                self.support_size_per_view
            )));
        }
        if let Some(&bad) = self.support.indices().iter().find(|&&i| i >= n) {
            return Err(Error::config(format!(
                "support index {bad} out of range for signal length {n}"
            )));
        }
        self.ipot.validate()
    }

    /// Step size at 1-based iteration `t`.
    fn step(&self, t: usize) -> f64 {
        self.step_size / (1.0 + self.step_decay * t as f64)
    }
}

/// Full state after recovery: the prototype, the per-view estimates, the
/// last transport plan per view, and the objective after each alternation.
#[derive(Debug, Clone)]
pub struct RecoveryState {
    pub prototype: Signal,
    pub views: Vec<Signal>,
    pub plans: Vec<TransportPlan>,
    /// Total objective at initialization and after each outer iteration.
    pub objective_trace: Vec<f64>,
}

fn check_finite(values: &Array1<f64>, context: &'static str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite() || v.abs() > VALUE_BOUND) {
        return Err(Error::NonFiniteIterate { context });
    }
    Ok(())
}

fn deformed(x: &Signal, f: &DeformationOp) -> Result<Signal> {
    if f.n() != x.len() {
        return Err(Error::dim(format!(
            "deformation size {} does not match signal length {}",
            f.n(),
            x.len()
        )));
    }
    x.with_values(f.apply(x.values()))
}

/// Solves the transport problem between the marginals of `x_i` and `z`.
fn solve_pair(x_i: &Signal, z: &Signal, cfg: &RecoveryConfig) -> Result<TransportPlan> {
    let u = marginal_for_support_size(x_i, cfg.support_size_per_view)?;
    let v = marginal_for_support_size(z, cfg.support_size_per_view)?;
    let c = build_cost_matrix(x_i, z, cfg.lambda, cfg.beta)?;
    solve_ot(&c, &u, &v, cfg.solver, &cfg.ipot)
}

/// Per-view objective `1/2 ||y_i - A_i x_i||^2 + beta * OT(a(x_i), a(F_i x))`.
///
/// With `beta = 0` the transport term is skipped and the value is the pure
/// data term.
pub fn objective(x: &Signal, x_i: &Signal, view: &ViewData, cfg: &RecoveryConfig) -> Result<f64> {
    if x.grid() != x_i.grid() {
        return Err(Error::dim("objective signals live on different grids"));
    }
    let residual = view.a().apply(x_i.values()) - view.y();
    let data = 0.5 * residual.dot(&residual);
    if cfg.beta == 0.0 {
        return Ok(data);
    }
    let z = deformed(x, view.f())?;
    let plan = solve_pair(x_i, &z, cfg)?;
    Ok(data + cfg.beta * plan.value())
}

fn total_objective(
    x: &Signal,
    views_x: &[Signal],
    views: &[ViewData],
    cfg: &RecoveryConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for (x_i, view) in views_x.iter().zip(views) {
        total += objective(x, x_i, view, cfg)?;
    }
    Ok(total)
}

fn grad_x_inner(
    x: &Signal,
    x_i: &Signal,
    f: &DeformationOp,
    plan: &TransportPlan,
    lambda: f64,
) -> Result<Array1<f64>> {
    let z = f.apply(x.values());
    let v = plan.col_marginal().weights();
    let inner = &(v * &z) - &plan.transpose_apply(x_i.values())?;
    Ok(f.apply_transpose(&inner) * lambda)
}

/// Gradient of the objective in the prototype, with the plan held fixed:
/// `lambda * F^T ( a(F x) (.) (F x) - P^T x_i )`.
pub fn grad_x(
    x: &Signal,
    x_i: &Signal,
    view: &ViewData,
    plan: &TransportPlan,
    cfg: &RecoveryConfig,
) -> Result<Array1<f64>> {
    if x.grid() != x_i.grid() || view.n() != x.len() {
        return Err(Error::dim("grad_x dimensions are inconsistent"));
    }
    grad_x_inner(x, x_i, view.f(), plan, cfg.lambda)
}

/// Gradient of the objective in the view estimate, with the plan held fixed:
/// `A^T (A x_i - y) + lambda * ( a(x_i) (.) x_i - P (F x) )`.
pub fn grad_xi(
    x: &Signal,
    x_i: &Signal,
    view: &ViewData,
    plan: &TransportPlan,
    cfg: &RecoveryConfig,
) -> Result<Array1<f64>> {
    if x.grid() != x_i.grid() || view.n() != x.len() {
        return Err(Error::dim("grad_xi dimensions are inconsistent"));
    }
    let residual = view.a().apply(x_i.values()) - view.y();
    let data = view.a().apply_transpose(&residual);
    let z = view.f().apply(x.values());
    let u = plan.row_marginal().weights();
    let coupling = &(u * x_i.values()) - &plan.apply(&z)?;
    Ok(data + coupling * cfg.lambda)
}

/// Gradient descent on one view estimate with the prototype fixed.
///
/// The deformed prototype and its marginal are computed once; each of the
/// `inner_tmax` iterations re-solves the plan at the current estimate and
/// steps along the plan-fixed gradient. Returns the final estimate and the
/// last plan.
pub fn estimate_view(
    view: &ViewData,
    x: &Signal,
    x_i_init: &Signal,
    cfg: &RecoveryConfig,
) -> Result<(Signal, TransportPlan)> {
    cfg.validate(x.len())?;
    let z = deformed(x, view.f())?;
    let mut x_i = x_i_init.clone();
    check_finite(x_i.values(), "estimate_view initial value")?;
    let mut last_plan = None;
    for t in 1..=cfg.inner_tmax {
        let plan = solve_pair(&x_i, &z, cfg)?;
        let g = grad_xi(x, &x_i, view, &plan, cfg)?;
        *x_i.values_mut() -= &(g * cfg.step(t));
        check_finite(x_i.values(), "estimate_view iterate")?;
        last_plan = Some(plan);
    }
    Ok((x_i, last_plan.expect("inner_tmax is at least 1")))
}

/// Gradient descent on the prototype with all view estimates fixed.
///
/// Each iteration re-solves every view's plan against the current deformed
/// prototype, sums the per-view gradients, takes one step, and (optionally)
/// projects onto the known support. Returns the final prototype and the last
/// plan per view.
pub fn estimate_prototype(
    views_x: &[Signal],
    deformations: &[DeformationOp],
    x_init: &Signal,
    cfg: &RecoveryConfig,
) -> Result<(Signal, Vec<TransportPlan>)> {
    cfg.validate(x_init.len())?;
    if views_x.is_empty() || views_x.len() != deformations.len() {
        return Err(Error::dim(format!(
            "{} view estimates vs {} deformations",
            views_x.len(),
            deformations.len()
        )));
    }
    let mut x = x_init.clone();
    check_finite(x.values(), "estimate_prototype initial value")?;
    let mut plans: Vec<Option<TransportPlan>> = vec![None; views_x.len()];
    for t in 1..=cfg.inner_tmax {
        let mut total_grad = Array1::zeros(x.len());
        for (i, (x_i, f)) in views_x.iter().zip(deformations).enumerate() {
            let z = deformed(&x, f)?;
            let plan = solve_pair(x_i, &z, cfg)?;
            total_grad += &grad_x_inner(&x, x_i, f, &plan, cfg.lambda)?;
            plans[i] = Some(plan);
        }
        *x.values_mut() -= &(total_grad * cfg.step(t));
        if cfg.project_support {
            cfg.support.project(x.values_mut());
        }
        check_finite(x.values(), "estimate_prototype iterate")?;
    }
    let plans = plans
        .into_iter()
        .map(|p| p.expect("inner_tmax is at least 1"))
        .collect();
    Ok((x, plans))
}

/// Default prototype start: magnitude of the first view's backprojection
/// `|F_1^T A_1^T y_1|`, zeroed outside the known support.
///
/// The magnitude matters: reflectivities are nonnegative, and a support
/// pixel started at a nonpositive value never recovers. It stays below the
/// marginal threshold (floored at zero), so no transport mass ever reaches
/// it, and the prototype feels the data only through the transport term.
pub fn default_prototype_init(
    views: &[ViewData],
    grid: crate::grid::Grid,
    support: &SupportSet,
) -> Result<Signal> {
    let first = views
        .first()
        .ok_or_else(|| Error::dim("at least one view is required"))?;
    if first.n() != grid.len() {
        return Err(Error::dim(format!(
            "view signal length {} does not match grid size {}",
            first.n(),
            grid.len()
        )));
    }
    let mut values = first
        .f()
        .apply_transpose(&first.a().apply_transpose(first.y()))
        .mapv(f64::abs);
    support.project(&mut values);
    Signal::new(grid, values)
}

/// Full alternation: per-view estimation, then prototype estimation, for
/// `outer_tmax` rounds with warm-started iterates.
///
/// Per-view estimates start from the backprojection `A_i^T y_i`. The
/// returned state carries the final iterates, the last plan per view, and
/// the total objective at initialization and after each round.
pub fn recover(
    views: &[ViewData],
    cfg: &RecoveryConfig,
    x_init: &Signal,
) -> Result<(Signal, RecoveryState)> {
    let grid = x_init.grid();
    cfg.validate(grid.len())?;
    if views.is_empty() {
        return Err(Error::dim("at least one view is required"));
    }
    for view in views {
        if view.n() != grid.len() {
            return Err(Error::dim(format!(
                "view expects {} pixels, prototype has {}",
                view.n(),
                grid.len()
            )));
        }
    }

    let mut x = x_init.clone();
    check_finite(x.values(), "recover initial prototype")?;
    let mut views_x: Vec<Signal> = views
        .iter()
        .map(|view| Signal::new(grid, view.a().apply_transpose(view.y())))
        .collect::<Result<_>>()?;
    let deformations: Vec<DeformationOp> = views.iter().map(|v| v.f().clone()).collect();

    let mut trace = Vec::with_capacity(cfg.outer_tmax + 1);
    trace.push(total_objective(&x, &views_x, views, cfg)?);
    let mut plans = Vec::new();
    for _ in 1..=cfg.outer_tmax {
        for (x_i, view) in views_x.iter_mut().zip(views) {
            let (next, _) = estimate_view(view, &x, x_i, cfg)?;
            *x_i = next;
        }
        let (next_x, next_plans) = estimate_prototype(&views_x, &deformations, &x, cfg)?;
        x = next_x;
        plans = next_plans;
        trace.push(total_objective(&x, &views_x, views, cfg)?);
    }

    let state = RecoveryState {
        prototype: x.clone(),
        views: views_x,
        plans,
        objective_trace: trace,
    };
    Ok((x, state))
}
