//! Exact transport: linear assignment on uniform equal-size supports, the
//! transportation simplex otherwise. Both run on the support-restricted cost.

use log::warn;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::marginal::Marginal;

use super::{CostMatrix, TransportPlan};

/// Reduced costs above this negative slack count as optimal.
const OPT_TOL: f64 = 1e-10;

/// Exact minimizer of `<C, P>` over couplings of `u` and `v`.
///
/// Uniform marginals on equal-size supports reduce to a linear assignment
/// scaled by `1/|support|`; every other case runs the transportation
/// simplex. The plan is embedded back into ambient indices with zeros off
/// the supports.
pub fn solve_exact(c: &CostMatrix, u: &Marginal, v: &Marginal) -> Result<TransportPlan> {
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
    let block = if rows.len() == cols.len() && u.is_uniform() && v.is_uniform() {
        let assign = assignment(&cost);
        let mass = 1.0 / rows.len() as f64;
        let mut block = Array2::zeros((rows.len(), cols.len()));
        for (i, &j) in assign.row_to_col.iter().enumerate() {
            block[(i, j)] = mass;
        }
        block
    } else {
        transport_simplex(&cost, &u.support_weights(), &v.support_weights())?.alloc
    };
    let value = block
        .indexed_iter()
        .map(|((i, j), &p)| p * cost[(i, j)])
        .sum();
    TransportPlan::new(u.clone(), v.clone(), block, value)
}

pub(crate) struct AssignmentResult {
    /// Column assigned to each row.
    pub row_to_col: Vec<usize>,
    /// Row potentials (dual variables), 1-indexed internally. Kept as an
    /// optimality certificate; only the slackness tests read them.
    #[allow(dead_code)]
    pub pot_u: Vec<f64>,
    /// Column potentials.
    #[allow(dead_code)]
    pub pot_v: Vec<f64>,
}

/// Minimum-cost perfect matching on a square cost matrix via shortest
/// augmenting paths with potentials (Jonker-Volgenant style), O(n^3).
pub(crate) fn assignment(cost: &Array2<f64>) -> AssignmentResult {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment needs a square matrix");
    // 1-indexed; p[j] is the row matched to column j, 0 = unmatched.
    let mut pot_u = vec![0.0f64; n + 1];
    let mut pot_v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - pot_u[i0] - pot_v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    pot_u[p[j]] += delta;
                    pot_v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        // Walk the augmenting path backwards, flipping matches.
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    AssignmentResult {
        row_to_col,
        pot_u,
        pot_v,
    }
}

pub(crate) struct SimplexResult {
    pub alloc: Array2<f64>,
    /// Row potentials of the final basis; certificate, read only by tests.
    #[allow(dead_code)]
    pub pot_u: Vec<f64>,
    /// Column potentials of the final basis.
    #[allow(dead_code)]
    pub pot_v: Vec<f64>,
}

/// Transportation simplex (northwest-corner start, potentials method) for
/// general positive supplies and demands with equal totals.
pub(crate) fn transport_simplex(
    cost: &Array2<f64>,
    supply: &[f64],
    demand: &[f64],
) -> Result<SimplexResult> {
    let m = supply.len();
    let k = demand.len();
    if m == 0 || k == 0 {
        return Err(Error::InfeasibleMarginals("empty supply or demand".into()));
    }
    let sum_a: f64 = supply.iter().sum();
    let sum_b: f64 = demand.iter().sum();
    if (sum_a - sum_b).abs() > 1e-9 {
        return Err(Error::InfeasibleMarginals(format!(
            "supply {sum_a} and demand {sum_b} do not balance"
        )));
    }
    if supply.iter().chain(demand).any(|&w| !(w > 0.0)) {
        return Err(Error::InfeasibleMarginals(
            "supplies and demands must be strictly positive".into(),
        ));
    }
    // Rescale the demand so the totals match to roundoff.
    let demand: Vec<f64> = demand.iter().map(|&b| b * (sum_a / sum_b)).collect();

    // Northwest-corner initial basis: a staircase of m + k - 1 cells, some
    // possibly zero (degenerate).
    let mut alloc = Array2::zeros((m, k));
    let mut basic = vec![false; m * k];
    let mut a_rem = supply.to_vec();
    let mut b_rem = demand.clone();
    let (mut i, mut j) = (0usize, 0usize);
    loop {
        let t = a_rem[i].min(b_rem[j]).max(0.0);
        alloc[(i, j)] = t;
        basic[i * k + j] = true;
        a_rem[i] -= t;
        b_rem[j] -= t;
        if i == m - 1 && j == k - 1 {
            break;
        }
        if (a_rem[i] <= b_rem[j] && i < m - 1) || j == k - 1 {
            i += 1;
        } else {
            j += 1;
        }
    }

    let mut pot_u = vec![0.0f64; m];
    let mut pot_v = vec![0.0f64; k];
    let bland_after = 10 * (m + k) + 200;
    let max_pivots = 100 * (m + k) + 5000;
    let mut pivots = 0usize;
    loop {
        compute_potentials(cost, &basic, m, k, &mut pot_u, &mut pot_v);

        // Entering cell: most negative reduced cost (Dantzig), switching to
        // first-negative (Bland) after a while to rule out cycling.
        let bland = pivots >= bland_after;
        let mut entering: Option<(usize, usize)> = None;
        let mut best = -OPT_TOL;
        'scan: for r in 0..m {
            for s in 0..k {
                if basic[r * k + s] {
                    continue;
                }
                let reduced = cost[(r, s)] - pot_u[r] - pot_v[s];
                if reduced < best {
                    best = reduced;
                    entering = Some((r, s));
                    if bland {
                        break 'scan;
                    }
                }
            }
        }
        let Some((ei, ej)) = entering else {
            break;
        };
        if pivots >= max_pivots {
            warn!("transportation simplex hit the pivot cap; returning the current feasible plan");
            break;
        }
        pivots += 1;

        let path = basis_path(&basic, m, k, ei, ej);
        // Signs alternate along the closed cycle; path cells start at the
        // entering row, so odd positions (0-based even) are the minus cells.
        let mut theta = f64::INFINITY;
        let mut leaving = path[0];
        for (t, &(r, s)) in path.iter().enumerate() {
            if t % 2 == 0 {
                let a = alloc[(r, s)];
                if a < theta || (a == theta && (r, s) < leaving) {
                    theta = a;
                    leaving = (r, s);
                }
            }
        }
        alloc[(ei, ej)] += theta;
        for (t, &(r, s)) in path.iter().enumerate() {
            if t % 2 == 0 {
                alloc[(r, s)] -= theta;
            } else {
                alloc[(r, s)] += theta;
            }
        }
        for &(r, s) in &path {
            if alloc[(r, s)] < 0.0 {
                if alloc[(r, s)] < -1e-9 {
                    return Err(Error::InfeasibleMarginals(format!(
                        "simplex produced negative allocation {}",
                        alloc[(r, s)]
                    )));
                }
                alloc[(r, s)] = 0.0;
            }
        }
        alloc[(leaving.0, leaving.1)] = 0.0;
        basic[leaving.0 * k + leaving.1] = false;
        basic[ei * k + ej] = true;
    }

    Ok(SimplexResult {
        alloc,
        pot_u,
        pot_v,
    })
}

/// Solves `u_r + v_s = cost[r,s]` on the basis tree, rooted at row 0.
fn compute_potentials(
    cost: &Array2<f64>,
    basic: &[bool],
    m: usize,
    k: usize,
    pot_u: &mut [f64],
    pot_v: &mut [f64],
) {
    let mut row_edges: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut col_edges: Vec<Vec<usize>> = vec![Vec::new(); k];
    for r in 0..m {
        for s in 0..k {
            if basic[r * k + s] {
                row_edges[r].push(s);
                col_edges[s].push(r);
            }
        }
    }
    let mut row_done = vec![false; m];
    let mut col_done = vec![false; k];
    pot_u[0] = 0.0;
    row_done[0] = true;
    // Nodes: rows are 0..m, columns are m..m+k.
    let mut queue = vec![0usize];
    while let Some(node) = queue.pop() {
        if node < m {
            for &s in &row_edges[node] {
                if !col_done[s] {
                    pot_v[s] = cost[(node, s)] - pot_u[node];
                    col_done[s] = true;
                    queue.push(m + s);
                }
            }
        } else {
            let s = node - m;
            for &r in &col_edges[s] {
                if !row_done[r] {
                    pot_u[r] = cost[(r, s)] - pot_v[s];
                    row_done[r] = true;
                    queue.push(r);
                }
            }
        }
    }
    debug_assert!(
        row_done.iter().all(|&d| d) && col_done.iter().all(|&d| d),
        "basis is not a spanning tree"
    );
}

/// Path of basic cells from row `ei` to column `ej`; together with the
/// entering cell `(ei, ej)` it forms the unique pivot cycle. The cell at
/// position 0 shares row `ei` with the entering cell, and signs alternate
/// from there (even positions are the minus cells).
fn basis_path(basic: &[bool], m: usize, k: usize, ei: usize, ej: usize) -> Vec<(usize, usize)> {
    // BFS over the bipartite basis graph from node Row(ei) to node Col(ej).
    let total = m + k;
    let mut parent = vec![usize::MAX; total];
    let mut seen = vec![false; total];
    let start = ei;
    let goal = m + ej;
    seen[start] = true;
    let mut queue = std::collections::VecDeque::from([start]);
    'bfs: while let Some(node) = queue.pop_front() {
        if node < m {
            for s in 0..k {
                if basic[node * k + s] && !seen[m + s] {
                    seen[m + s] = true;
                    parent[m + s] = node;
                    if m + s == goal {
                        break 'bfs;
                    }
                    queue.push_back(m + s);
                }
            }
        } else {
            let s = node - m;
            for r in 0..m {
                if basic[r * k + s] && !seen[r] {
                    seen[r] = true;
                    parent[r] = node;
                    queue.push_back(r);
                }
            }
        }
    }
    assert!(seen[goal], "basis graph is disconnected");
    // Recover node path goal -> start, then convert edges to cells in
    // start -> goal order.
    let mut nodes = vec![goal];
    let mut cur = goal;
    while cur != start {
        cur = parent[cur];
        nodes.push(cur);
    }
    nodes.reverse();
    let mut cells = Vec::with_capacity(nodes.len() - 1);
    for pair in nodes.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let cell = if a < m { (a, b - m) } else { (b, a - m) };
        cells.push(cell);
    }
    cells
}
