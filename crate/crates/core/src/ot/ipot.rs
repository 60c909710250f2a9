//! Proximal-point transport solver.
//!
//! Each outer iteration multiplies the current plan into the kernel
//! `exp(-C/prox)` and runs a few Sinkhorn scaling rounds toward the
//! marginals; unlike plain Sinkhorn the fixed point is the unregularized
//! optimum. A final rounding step restores exact feasibility.

use log::warn;
use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::marginal::Marginal;

use super::{CostMatrix, IpotParams, TransportPlan};

/// Relative slack before a rising objective triggers a warning.
const MONOTONE_SLACK: f64 = 1e-9;

/// Approximate minimizer of `<C, P>` over couplings of `u` and `v`.
///
/// The cost is normalized by its median nonzero entry before
/// exponentiation, so `prox_weight` is scale-free. Stops once successive
/// normalized objectives differ by less than `convergence_tol` or after
/// `outer_iters` iterations.
pub fn solve_ipot(
    c: &CostMatrix,
    u: &Marginal,
    v: &Marginal,
    params: &IpotParams,
) -> Result<TransportPlan> {
    params.validate()?;
    if u.len() != c.n() || v.len() != c.n() {
        return Err(Error::dim(format!(
            "marginal lengths {} and {} do not match cost size {}",
            u.len(),
            v.len(),
            c.n()
        )));
    }
    let rows = u.support();
    let cols = v.support();
    let cost = c.restricted(rows, cols);
    let a = Array1::from_vec(u.support_weights());
    let b = Array1::from_vec(v.support_weights());
    let independent = || {
        let mut p = Array2::zeros((a.len(), b.len()));
        for i in 0..a.len() {
            for j in 0..b.len() {
                p[(i, j)] = a[i] * b[j];
            }
        }
        p
    };

    let mut nonzero: Vec<f64> = cost.iter().copied().filter(|&e| e > 0.0).collect();
    if nonzero.is_empty() {
        // Zero cost everywhere: the independent coupling is optimal.
        return TransportPlan::new(u.clone(), v.clone(), independent(), 0.0);
    }
    nonzero.sort_by(|x, y| x.partial_cmp(y).expect("non-finite cost"));
    let scale = nonzero[nonzero.len() / 2];
    let cn = cost.mapv(|e| e / scale);
    let kernel = cn.mapv(|e| (-e / params.prox_weight).exp());
    let underflow = || Error::NumericalUnderflow {
        prox_weight: params.prox_weight,
        cost_scale: scale,
    };
    if kernel
        .axis_iter(Axis(0))
        .any(|row| row.iter().all(|&g| g <= 0.0))
        || kernel
            .axis_iter(Axis(1))
            .any(|col| col.iter().all(|&g| g <= 0.0))
    {
        return Err(underflow());
    }

    let mut p = independent();
    // Scaling vectors persist across outer iterations (warm start); the
    // accumulated log-scalings play the role of dual potentials, which is
    // what drives the scheme to the unregularized optimum.
    let mut scale_b: Array1<f64> = Array1::ones(b.len());
    let mut prev_obj = f64::INFINITY;
    for t in 0..params.outer_iters {
        let q = &kernel * &p;
        let mut scale_a = Array1::zeros(a.len());
        for _ in 0..params.inner_sinkhorn_iters {
            let qb = q.dot(&scale_b);
            if qb.iter().any(|&r| !(r > 0.0)) {
                return Err(underflow());
            }
            scale_a = &a / &qb;
            let qa = q.t().dot(&scale_a);
            if qa.iter().any(|&s| !(s > 0.0)) {
                return Err(underflow());
            }
            scale_b = &b / &qa;
        }
        for ((i, j), w) in p.indexed_iter_mut() {
            *w = scale_a[i] * q[(i, j)] * scale_b[j];
        }
        if p.iter().any(|&w| !w.is_finite()) {
            return Err(underflow());
        }
        let obj = (&cn * &p).sum();
        if t > 0 {
            if obj > prev_obj + MONOTONE_SLACK * prev_obj.abs().max(1.0) {
                warn!("ipot objective rose from {prev_obj} to {obj} at outer iteration {t}");
            }
            if (obj - prev_obj).abs() < params.convergence_tol {
                break;
            }
        }
        prev_obj = obj;
    }

    let block = round_to_feasible(p, &a, &b);
    let value = block
        .indexed_iter()
        .map(|((i, j), &w)| w * cost[(i, j)])
        .sum();
    TransportPlan::new(u.clone(), v.clone(), block, value)
}

/// Rounds an almost-feasible nonnegative matrix onto the coupling polytope:
/// scale rows and columns down where they overshoot, then spread the missing
/// mass as a rank-one correction.
fn round_to_feasible(mut p: Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    for (i, mut row) in p.axis_iter_mut(Axis(0)).enumerate() {
        let s = row.sum();
        if s > a[i] && s > 0.0 {
            row *= a[i] / s;
        }
    }
    for (j, mut col) in p.axis_iter_mut(Axis(1)).enumerate() {
        let s = col.sum();
        if s > b[j] && s > 0.0 {
            col *= b[j] / s;
        }
    }
    let err_r: Array1<f64> = a - &p.sum_axis(Axis(1));
    let err_c: Array1<f64> = b - &p.sum_axis(Axis(0));
    let err_r = err_r.mapv(|e| e.max(0.0));
    let err_c = err_c.mapv(|e| e.max(0.0));
    let total = err_r.sum();
    if total > 0.0 {
        for i in 0..err_r.len() {
            if err_r[i] > 0.0 {
                for j in 0..err_c.len() {
                    p[(i, j)] += err_r[i] * err_c[j] / total;
                }
            }
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::ot::{solve_exact, PLAN_FEASIBILITY_TOL};
    use crate::seeds::rng_from_seed;
    use rand::Rng;

    fn random_cost(n: usize, seed: u64) -> CostMatrix {
        let mut rng = rng_from_seed(seed);
        let g = Grid::new(1, n).unwrap();
        let entries = Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..10.0));
        CostMatrix::from_dense(g, entries, 1.0, 1.0).unwrap()
    }

    #[test]
    fn hand_solved_2x2_within_tolerance() {
        let g = Grid::new(1, 2).unwrap();
        let c = CostMatrix::from_dense(
            g,
            ndarray::array![[4.0, 1.0], [1.0, 4.0]],
            1.0,
            1.0,
        )
        .unwrap();
        let u = Marginal::uniform_over(2, &[0, 1]).unwrap();
        let plan = solve_ipot(&c, &u, &u, &IpotParams::default()).unwrap();
        assert!((plan.value() - 1.0).abs() <= 1e-3, "value {}", plan.value());
    }

    #[test]
    fn tracks_exact_solver_on_random_costs() {
        for seed in 0..20 {
            let n = 8;
            let c = random_cost(n, 100 + seed);
            let u = Marginal::uniform_over(n, &(0..n).collect::<Vec<_>>()).unwrap();
            let exact = solve_exact(&c, &u, &u).unwrap().value();
            let ipot = solve_ipot(&c, &u, &u, &IpotParams::default()).unwrap().value();
            let rel = (ipot - exact).abs() / exact.abs().max(1e-12);
            assert!(rel <= 1e-3, "seed {seed}: exact {exact}, ipot {ipot}, rel {rel}");
        }
    }

    #[test]
    fn tracks_exact_solver_on_non_uniform_marginals() {
        for seed in 0..10 {
            let n = 6;
            let mut rng = rng_from_seed(300 + seed);
            let c = random_cost(n, 400 + seed);
            let mut wa: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let mut wb: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let sa: f64 = wa.iter().sum();
            let sb: f64 = wb.iter().sum();
            wa.iter_mut().for_each(|w| *w /= sa);
            wb.iter_mut().for_each(|w| *w /= sb);
            let u = Marginal::from_weights(Array1::from_vec(wa)).unwrap();
            let v = Marginal::from_weights(Array1::from_vec(wb)).unwrap();
            let exact = solve_exact(&c, &u, &v).unwrap().value();
            let ipot = solve_ipot(&c, &u, &v, &IpotParams::default()).unwrap().value();
            let rel = (ipot - exact).abs() / exact.abs().max(1e-12);
            assert!(rel <= 1e-3, "seed {seed}: exact {exact}, ipot {ipot}, rel {rel}");
        }
    }

    #[test]
    fn returned_plans_are_feasible() {
        for seed in 0..10 {
            let n = 9;
            let mut rng = rng_from_seed(500 + seed);
            let c = random_cost(n, 600 + seed);
            let size = rng.random_range(2..=n);
            let support: Vec<usize> = (0..size).collect();
            let u = Marginal::uniform_over(n, &support).unwrap();
            let v = Marginal::uniform_over(n, &(0..n).collect::<Vec<_>>()).unwrap();
            let plan = solve_ipot(&c, &u, &v, &IpotParams::default()).unwrap();
            assert!(plan.max_marginal_violation() <= PLAN_FEASIBILITY_TOL);
            assert!(plan.block().iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn zero_cost_returns_zero_value() {
        let g = Grid::new(1, 4).unwrap();
        let c = CostMatrix::from_dense(g, Array2::zeros((4, 4)), 1.0, 1.0).unwrap();
        let u = Marginal::uniform_over(4, &[0, 1]).unwrap();
        let v = Marginal::uniform_over(4, &[2, 3]).unwrap();
        let plan = solve_ipot(&c, &u, &v, &IpotParams::default()).unwrap();
        assert_eq!(plan.value(), 0.0);
    }

    #[test]
    fn tiny_prox_weight_on_positive_costs_underflows() {
        let g = Grid::new(1, 3).unwrap();
        let entries = Array2::from_shape_fn((3, 3), |(i, j)| 5.0 + (i + 2 * j) as f64);
        let c = CostMatrix::from_dense(g, entries, 1.0, 1.0).unwrap();
        let u = Marginal::uniform_over(3, &[0, 1, 2]).unwrap();
        let params = IpotParams {
            prox_weight: 1e-300,
            ..IpotParams::default()
        };
        let err = solve_ipot(&c, &u, &u, &params).unwrap_err();
        assert!(matches!(err, Error::NumericalUnderflow { .. }));
    }
}
