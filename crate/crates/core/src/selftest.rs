//! Runtime self-checks: independent oracles that validate the solvers and
//! gradients without trusting their implementation.
//!
//! The transport oracles enumerate assignments by brute force, so they are
//! limited to tiny supports; the gradient check compares analytic gradients
//! against central finite differences. The CLI `selftest` subcommand and the
//! acceptance tests both run these.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::marginal::Marginal;
use crate::ot::{solve_exact, solve_ipot, CostMatrix, IpotParams};
use crate::recovery::{grad_x, grad_xi, objective, RecoveryConfig};
use crate::seeds::{derive_seed, rng_from_seed};
use crate::signal::{Signal, SupportSet};
use crate::synthdata::make_local_permutation;
use crate::view::{DeformationOp, LinearMeasurementOp, ViewData};

/// Largest support (or expanded support) the brute-force oracles accept.
pub const BRUTE_FORCE_LIMIT: usize = 9;

/// Calls `f` with every permutation of `0..n` (Heap's algorithm).
fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut a: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    f(&a);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            f(&a);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Minimum coupling cost for uniform marginals on equal-size supports,
/// obtained by enumerating hard permutations of the support and scaling by
/// `1/|support|`. Exact reference for the assignment claim; supports larger
/// than [`BRUTE_FORCE_LIMIT`] are refused.
pub fn brute_force_uniform_ot(c: &CostMatrix, u: &Marginal, v: &Marginal) -> Result<f64> {
    let su = u.support();
    let sv = v.support();
    if su.len() != sv.len() {
        return Err(Error::config(format!(
            "brute force needs equal support sizes, got {} and {}",
            su.len(),
            sv.len()
        )));
    }
    if !u.is_uniform() || !v.is_uniform() {
        return Err(Error::config("brute force needs uniform marginals"));
    }
    let s = su.len();
    if s > BRUTE_FORCE_LIMIT {
        return Err(Error::config(format!(
            "support size {s} exceeds brute-force limit {BRUTE_FORCE_LIMIT}"
        )));
    }
    let mut best = f64::INFINITY;
    for_each_permutation(s, |perm| {
        let total: f64 = (0..s).map(|i| c.entry(su[i], sv[perm[i]])).sum();
        if total < best {
            best = total;
        }
    });
    Ok(best / s as f64)
}

/// Minimum coupling cost for uniform marginals on supports of different
/// sizes `p` and `q`, obtained by replicating each support point
/// `lcm(p,q)/p` (resp. `/q`) times and enumerating assignments of the
/// expanded problem. Valid because an optimal basic solution has entries in
/// multiples of `1/lcm(p,q)`.
pub fn brute_force_unequal_uniform_ot(c: &CostMatrix, u: &Marginal, v: &Marginal) -> Result<f64> {
    if !u.is_uniform() || !v.is_uniform() {
        return Err(Error::config("brute force needs uniform marginals"));
    }
    let su = u.support();
    let sv = v.support();
    let p = su.len();
    let q = sv.len();
    let l = p / gcd(p, q) * q;
    if l > BRUTE_FORCE_LIMIT {
        return Err(Error::config(format!(
            "expanded size {l} exceeds brute-force limit {BRUTE_FORCE_LIMIT}"
        )));
    }
    let rows: Vec<usize> = su
        .iter()
        .flat_map(|&n| std::iter::repeat(n).take(l / p))
        .collect();
    let cols: Vec<usize> = sv
        .iter()
        .flat_map(|&n| std::iter::repeat(n).take(l / q))
        .collect();
    let mut best = f64::INFINITY;
    for_each_permutation(l, |perm| {
        let total: f64 = (0..l).map(|i| c.entry(rows[i], cols[perm[i]])).sum();
        if total < best {
            best = total;
        }
    });
    Ok(best / l as f64)
}

fn random_subset(n: usize, size: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        all.swap(i, j);
    }
    let mut subset = all[..size].to_vec();
    subset.sort_unstable();
    subset
}

fn random_cost(grid: Grid, rng: &mut impl Rng) -> CostMatrix {
    let n = grid.len();
    let dense = Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..10.0));
    CostMatrix::from_dense(grid, dense, 1.0, 1.0).expect("random costs are valid")
}

/// Compares the exact solver against permutation enumeration on `cases`
/// random problems with uniform marginals over equal supports of size at
/// most 6. Returns the largest absolute value gap.
pub fn check_exact_against_brute_force(cases: usize, base_seed: u64) -> Result<f64> {
    let grid = Grid::new(3, 3)?;
    let mut worst = 0.0f64;
    for case in 0..cases {
        let mut rng = rng_from_seed(derive_seed(base_seed, &[
            b"exact-oracle",
            &(case as u64).to_le_bytes(),
        ]));
        let size = 1 + case % 6;
        let c = random_cost(grid, &mut rng);
        let u = Marginal::uniform_over(grid.len(), &random_subset(grid.len(), size, &mut rng))?;
        let v = Marginal::uniform_over(grid.len(), &random_subset(grid.len(), size, &mut rng))?;
        let reference = brute_force_uniform_ot(&c, &u, &v)?;
        let plan = solve_exact(&c, &u, &v)?;
        worst = worst.max((plan.value() - reference).abs());
    }
    Ok(worst)
}

/// Compares the proximal-point solver against the exact solver on `cases`
/// random 32-point problems with uniform marginals. Returns the largest
/// relative value gap, with the denominator floored at `1e-12`.
pub fn check_ipot_against_exact(cases: usize, base_seed: u64) -> Result<f64> {
    let grid = Grid::new(4, 8)?;
    let n = grid.len();
    let support: Vec<usize> = (0..n).collect();
    let params = IpotParams::default();
    let mut worst = 0.0f64;
    for case in 0..cases {
        let mut rng = rng_from_seed(derive_seed(base_seed, &[
            b"ipot-oracle",
            &(case as u64).to_le_bytes(),
        ]));
        let c = random_cost(grid, &mut rng);
        let u = Marginal::uniform_over(n, &support)?;
        let v = Marginal::uniform_over(n, &support)?;
        let exact = solve_exact(&c, &u, &v)?.value();
        let approx = solve_ipot(&c, &u, &v, &params)?.value();
        worst = worst.max((approx - exact).abs() / exact.max(1e-12));
    }
    Ok(worst)
}

/// Solves `cases` random problems with both solvers, including unequal
/// support sizes and non-uniform marginals, and returns the largest
/// marginal violation observed across all returned plans (entries are also
/// checked for nonnegativity).
pub fn check_plan_feasibility(cases: usize, base_seed: u64) -> Result<f64> {
    let grid = Grid::new(3, 3)?;
    let n = grid.len();
    let params = IpotParams::default();
    let mut worst = 0.0f64;
    for case in 0..cases {
        let mut rng = rng_from_seed(derive_seed(base_seed, &[
            b"feasibility",
            &(case as u64).to_le_bytes(),
        ]));
        let c = random_cost(grid, &mut rng);
        let su = random_subset(n, 1 + case % 5, &mut rng);
        let sv = random_subset(n, 1 + (case / 2) % 6, &mut rng);
        let u = if case % 2 == 0 {
            Marginal::uniform_over(n, &su)?
        } else {
            random_marginal(n, &su, &mut rng)?
        };
        let v = random_marginal(n, &sv, &mut rng)?;
        for plan in [
            solve_exact(&c, &u, &v)?,
            solve_ipot(&c, &u, &v, &params)?,
        ] {
            if plan.block().iter().any(|&p| p < 0.0) {
                return Err(Error::config("negative plan entry"));
            }
            worst = worst.max(plan.max_marginal_violation());
        }
    }
    Ok(worst)
}

fn random_marginal(n: usize, support: &[usize], rng: &mut impl Rng) -> Result<Marginal> {
    let mut weights = Array1::zeros(n);
    let mut total = 0.0;
    for &i in support {
        let w = rng.random_range(0.2..1.0);
        weights[i] = w;
        total += w;
    }
    weights /= total;
    Marginal::from_weights(weights)
}

/// Gap between the best and second-best assignment of the cost restricted
/// to the marginal supports, per unit of transported mass. Zero means the
/// optimal plan is not unique.
fn assignment_margin(c: &CostMatrix, u: &Marginal, v: &Marginal) -> f64 {
    let rows = u.support();
    let cols = v.support();
    let costs = c.restricted(rows, cols);
    let s = rows.len();
    let mut best = f64::INFINITY;
    let mut second = f64::INFINITY;
    for_each_permutation(s, |perm| {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| costs[(i, j)]).sum();
        if total < best {
            second = best;
            best = total;
        } else if total < second {
            second = total;
        }
    });
    (second - best) / s as f64
}

/// Runs the envelope-gradient check on `cases` random 4x4 instances:
/// analytic gradients against central finite differences of the full
/// objective (step `1e-5`, plans re-solved at every probe). Returns the
/// largest relative L2 error.
///
/// Probe points must stay clear of the objective's kinks, so instances are
/// drawn to keep them at distance: signal values are spaced at least `0.05`
/// apart (marginal thresholds cannot flip under a `1e-5` probe), and draws
/// are resampled until the optimal assignment leads the runner-up by at
/// least `1e-3` per unit mass (the plan cannot switch inside the probe
/// interval).
pub fn check_gradients(cases: usize, base_seed: u64) -> Result<f64> {
    let grid = Grid::new(4, 4)?;
    let n = grid.len();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for case in 0..cases {
        let mut drawn = None;
        for attempt in 0..50u64 {
            let mut rng = rng_from_seed(derive_seed(base_seed, &[
                b"gradient",
                &(case as u64).to_le_bytes(),
                &attempt.to_le_bytes(),
            ]));
            // Distinct, incommensurate level ladders: equal ladders would
            // put exact ties into the transport cost and the optimal plan
            // would stop being unique.
            let spread = |base: f64, gap: f64, rng: &mut rand_chacha::ChaCha8Rng| {
                let mut levels: Vec<f64> = (0..n).map(|i| base + gap * i as f64).collect();
                for i in (1..n).rev() {
                    let j = rng.random_range(0..=i);
                    levels.swap(i, j);
                }
                Signal::new(grid, Array1::from_vec(levels)).expect("lengths match")
            };
            let x = spread(0.2, 0.07, &mut rng);
            let x_i = spread(0.2137, 0.0719, &mut rng);
            let f = {
                let mut p: Vec<usize> = (0..n).collect();
                for i in (1..n).rev() {
                    let j = rng.random_range(0..=i);
                    p.swap(i, j);
                }
                DeformationOp::from_permutation(p)?
            };
            let a = LinearMeasurementOp::gaussian(12, n, &mut rng)?;
            let y = a.apply(&(x_i.values() * 0.9));
            let view = ViewData::new(y, a, f)?;
            let mut cfg = RecoveryConfig::new(SupportSet::new((0..n).collect())?, 6);
            cfg.lambda = 1.5 + rng.random_range(0.0..1.0);
            cfg.beta = 0.8 + rng.random_range(0.0..0.8);

            let z = view.f().apply(x.values());
            let z = x.with_values(z)?;
            let u = crate::marginal::marginal_for_support_size(&x_i, cfg.support_size_per_view)?;
            let v = crate::marginal::marginal_for_support_size(&z, cfg.support_size_per_view)?;
            let c = crate::ot::build_cost_matrix(&x_i, &z, cfg.lambda, cfg.beta)?;
            if assignment_margin(&c, &u, &v) < 1e-3 {
                continue;
            }
            let plan = crate::ot::solve_ot(&c, &u, &v, cfg.solver, &cfg.ipot)?;
            drawn = Some((x, x_i, view, cfg, plan));
            break;
        }
        let Some((x, x_i, view, cfg, plan)) = drawn else {
            return Err(Error::config(format!(
                "gradient check case {case}: no stable instance in 50 draws"
            )));
        };

        let analytic_x = grad_x(&x, &x_i, &view, &plan, &cfg)?;
        let analytic_xi = grad_xi(&x, &x_i, &view, &plan, &cfg)?;
        let mut fd_x = Array1::zeros(n);
        let mut fd_xi = Array1::zeros(n);
        for j in 0..n {
            let probe = |sig: &Signal, delta: f64| {
                let mut out = sig.clone();
                out.values_mut()[j] += delta;
                out
            };
            fd_x[j] = (objective(&probe(&x, h), &x_i, &view, &cfg)?
                - objective(&probe(&x, -h), &x_i, &view, &cfg)?)
                / (2.0 * h);
            fd_xi[j] = (objective(&x, &probe(&x_i, h), &view, &cfg)?
                - objective(&x, &probe(&x_i, -h), &view, &cfg)?)
                / (2.0 * h);
        }
        for (fd, analytic) in [(fd_x, analytic_x), (fd_xi, analytic_xi)] {
            let num = (&fd - &analytic).mapv(|e| e * e).sum().sqrt();
            let den = analytic.mapv(|e: f64| e * e).sum().sqrt();
            if den > 0.0 {
                worst = worst.max(num / den);
            } else if num > 0.0 {
                return Err(Error::config("zero analytic gradient with nonzero probe"));
            }
        }
    }
    Ok(worst)
}

/// Generates `per_radius` local scrambles at every radius in `radii` and
/// verifies the Euclidean displacement bound exactly. Returns the number of
/// permutations checked; any violation is an error.
pub fn check_local_permutation_displacements(
    per_radius: usize,
    radii: &[usize],
    base_seed: u64,
) -> Result<usize> {
    let grid = Grid::new(8, 8)?;
    let support = SupportSet::new(vec![18, 19, 20, 26, 27, 28, 34, 35, 36])?;
    let mut checked = 0usize;
    for &radius in radii {
        let r_sq = (radius * radius) as f64;
        for trial in 0..per_radius {
            let mut rng = rng_from_seed(derive_seed(base_seed, &[
                b"displacement",
                &(radius as u64).to_le_bytes(),
                &(trial as u64).to_le_bytes(),
            ]));
            let p = make_local_permutation(grid, &support, radius, &mut rng);
            let perm = p
                .permutation()
                .ok_or_else(|| Error::config("scramble is not stored as a permutation"))?;
            for (dest, &source) in perm.iter().enumerate() {
                if grid.sq_dist(dest, source) > r_sq {
                    return Err(Error::config(format!(
                        "radius {radius}: pixel {source} displaced by {} > {radius}",
                        grid.sq_dist(dest, source).sqrt()
                    )));
                }
            }
            checked += 1;
        }
    }
    Ok(checked)
}
