//! Primal simplex on the slack form of the assignment LP.
//!
//! The LP always arrives as `max c'x, Ax <= b, x >= 0` with `b >= 0` after
//! presolve, so the all-slack basis is feasible and no phase-1 is needed.
//! The solver keeps a dense basis inverse and prices with Dantzig's rule,
//! updating reduced costs incrementally; a run of degenerate pivots switches
//! to Bland's rule until progress resumes. Single-threaded and
//! deterministic: identical input produces identical pivots.

// The kernels index flat row-major storage; iterator forms obscure the math.
#![allow(clippy::needless_range_loop)]

use std::collections::HashMap;

use super::{LpProblem, LpSolution, LpStatus};
use crate::{Error, Result};

/// Reduced costs and pivot elements below this are treated as zero.
const PIVOT_TOL: f64 = 1e-9;
/// A step below this counts as a degenerate pivot.
const DEGEN_TOL: f64 = 1e-11;
/// Consecutive degenerate pivots before switching to Bland's rule.
const DEGEN_LIMIT: usize = 60;

pub(super) fn solve(problem: &LpProblem, tol: f64) -> Result<LpSolution> {
    let n = problem.num_cols();
    let feas_tol = tol.max(super::DEFAULT_TOL);

    let mut pre = match presolve(problem) {
        Ok(pre) => pre,
        Err(status) => return Ok(empty_solution(problem, status)),
    };
    // The builder only produces nonnegative right-hand sides, which is what
    // makes the all-slack basis feasible; anything else would need phase-1.
    for b in &mut pre.rhs {
        if *b < -PIVOT_TOL {
            return Err(Error::Lp(
                "negative rhs on a mixed-sign row: phase-1 is not supported".to_string(),
            ));
        }
        if *b < 0.0 {
            *b = 0.0;
        }
    }
    let m = pre.rhs.len();

    let mut core = Core::new(problem, &pre, n, m);
    let status = core.optimize()?;
    if status != LpStatus::Optimal {
        return Ok(empty_solution(problem, status));
    }

    let mut x = core.structural_solution();
    if super::max_residual(problem, &x) > feas_tol {
        // Accumulated basis-inverse drift: refactorize from scratch, recover
        // the basic solution exactly, and re-check.
        core.refactorize();
        x = core.structural_solution();
        let residual = super::max_residual(problem, &x);
        if residual > feas_tol {
            return Err(Error::Lp(format!(
                "simplex finished with residual {residual:.3e} above tolerance {feas_tol:.3e}"
            )));
        }
    }

    Ok(LpSolution {
        objective: super::objective_value(problem, &x),
        x,
        status: LpStatus::Optimal,
        num_levels: problem_levels(problem),
        horizon: problem_horizon(problem),
    })
}

fn problem_levels(problem: &LpProblem) -> usize {
    problem.num_levels
}

fn problem_horizon(problem: &LpProblem) -> usize {
    problem.horizon
}

fn empty_solution(problem: &LpProblem, status: LpStatus) -> LpSolution {
    LpSolution {
        x: vec![0.0; problem.num_cols()],
        objective: 0.0,
        status,
        num_levels: problem_levels(problem),
        horizon: problem_horizon(problem),
    }
}

struct Presolved {
    /// Kept rows as (structural column, coefficient) lists.
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    /// Structural columns pinned to zero, including zero-rhs forcing.
    fixed: Vec<bool>,
}

/// Drop empty rows, pin columns forced to zero by `0 >= sum of nonnegative
/// terms` rows, and keep only the tightest of exactly-duplicate rows.
fn presolve(problem: &LpProblem) -> std::result::Result<Presolved, LpStatus> {
    let mut fixed = problem.fixed_zero.clone();

    for row in &problem.rows {
        if row.rhs <= 0.0 && row.coeffs.iter().all(|&(_, a)| a >= 0.0) {
            if row.rhs < -PIVOT_TOL {
                // A nonnegative combination cannot go below zero.
                return Err(LpStatus::Infeasible);
            }
            for &(j, a) in &row.coeffs {
                if a > 0.0 {
                    fixed[j] = true;
                }
            }
        }
    }

    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut seen: HashMap<Vec<(usize, u64)>, usize> = HashMap::new();
    for row in &problem.rows {
        if row.rhs <= 0.0 && row.coeffs.iter().all(|&(_, a)| a >= 0.0) {
            continue; // handled by forcing above
        }
        let mut coeffs: Vec<(usize, f64)> = row
            .coeffs
            .iter()
            .copied()
            .filter(|&(j, a)| a != 0.0 && !fixed[j])
            .collect();
        coeffs.sort_unstable_by_key(|&(j, _)| j);
        if coeffs.is_empty() {
            if row.rhs < -PIVOT_TOL {
                return Err(LpStatus::Infeasible);
            }
            continue;
        }
        let key: Vec<(usize, u64)> = coeffs.iter().map(|&(j, a)| (j, a.to_bits())).collect();
        match seen.get(&key) {
            Some(&kept) => rhs[kept] = rhs[kept].min(row.rhs),
            None => {
                seen.insert(key, rows.len());
                rows.push(coeffs);
                rhs.push(row.rhs);
            }
        }
    }

    Ok(Presolved { rows, rhs, fixed })
}

/// Revised simplex state over `n` structural columns and `m` slacks.
struct Core {
    m: usize,
    n: usize,
    /// Row-major sparse constraint rows, structural columns only.
    rows: Vec<Vec<(usize, f64)>>,
    /// Column-major view of the same matrix, by structural column.
    cols: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    fixed: Vec<bool>,
    /// Objective over structural then slack variables.
    cost: Vec<f64>,
    /// Basis inverse, row-major `m x m`.
    binv: Vec<f64>,
    /// Basic variable per row; slack `i` is variable `n + i`.
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    /// Basic variable values.
    xb: Vec<f64>,
    /// Reduced costs for every variable, maintained incrementally.
    reduced: Vec<f64>,
}

impl Core {
    fn new(problem: &LpProblem, pre: &Presolved, n: usize, m: usize) -> Core {
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, row) in pre.rows.iter().enumerate() {
            for &(j, a) in row {
                cols[j].push((i, a));
            }
        }
        let mut cost = vec![0.0; n + m];
        cost[..n].copy_from_slice(&problem.objective);
        let mut reduced = cost.clone();
        for (j, &f) in pre.fixed.iter().enumerate() {
            if f {
                reduced[j] = 0.0;
            }
        }
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            binv[i * m + i] = 1.0;
        }
        let mut in_basis = vec![false; n + m];
        for v in in_basis.iter_mut().skip(n) {
            *v = true;
        }
        Core {
            m,
            n,
            rows: pre.rows.clone(),
            cols,
            rhs: pre.rhs.clone(),
            fixed: pre.fixed.clone(),
            cost,
            binv,
            basis: (n..n + m).collect(),
            in_basis,
            xb: pre.rhs.clone(),
            reduced,
        }
    }

    fn optimize(&mut self) -> Result<LpStatus> {
        let max_iters = 50 * (self.m + self.n) + 10_000;
        let mut bland = false;
        let mut degenerate_run = 0usize;
        let mut refreshes = 0usize;

        for _ in 0..max_iters {
            let entering = match self.price(bland) {
                Some(j) => j,
                None => {
                    // Incremental reduced costs drift; confirm optimality
                    // with a fresh pricing pass before declaring victory.
                    self.refresh_reduced_costs();
                    refreshes += 1;
                    match self.price(bland) {
                        None => return Ok(LpStatus::Optimal),
                        Some(j) if refreshes <= 20 => j,
                        Some(_) => {
                            return Err(Error::Lp(
                                "simplex pricing failed to stabilize".to_string(),
                            ))
                        }
                    }
                }
            };

            let w = self.basis_image(entering);
            let leaving = match self.ratio_test(&w, bland) {
                Some(r) => r,
                None => return Ok(LpStatus::Unbounded),
            };

            let step = self.xb[leaving].max(0.0) / w[leaving];
            if step <= DEGEN_TOL {
                degenerate_run += 1;
                if degenerate_run >= DEGEN_LIMIT {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
                bland = false;
            }

            self.pivot(entering, leaving, &w, step);
        }
        Err(Error::Lp("simplex iteration limit reached".to_string()))
    }

    /// Entering column, or None at (tentative) optimality.
    fn price(&self, bland: bool) -> Option<usize> {
        let total = self.n + self.m;
        if bland {
            (0..total).find(|&j| self.can_enter(j) && self.reduced[j] > PIVOT_TOL)
        } else {
            let mut best = None;
            let mut best_d = PIVOT_TOL;
            for j in 0..total {
                if self.can_enter(j) && self.reduced[j] > best_d {
                    best_d = self.reduced[j];
                    best = Some(j);
                }
            }
            best
        }
    }

    fn can_enter(&self, j: usize) -> bool {
        !self.in_basis[j] && (j >= self.n || !self.fixed[j])
    }

    /// `B^{-1} A_j` for structural or slack `j`.
    fn basis_image(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut w = vec![0.0; m];
        if j >= self.n {
            let r = j - self.n;
            for i in 0..m {
                w[i] = self.binv[i * m + r];
            }
        } else {
            let nnz = &self.cols[j];
            for i in 0..m {
                let row = &self.binv[i * m..(i + 1) * m];
                let mut acc = 0.0;
                for &(r, a) in nnz {
                    acc += row[r] * a;
                }
                w[i] = acc;
            }
        }
        w
    }

    /// Leaving row by minimum ratio; ties break toward the largest pivot
    /// element (or the smallest basic variable index under Bland's rule).
    fn ratio_test(&self, w: &[f64], bland: bool) -> Option<usize> {
        let mut best: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..self.m {
            if w[i] <= PIVOT_TOL {
                continue;
            }
            let ratio = self.xb[i].max(0.0) / w[i];
            let tie = (ratio - best_ratio).abs() <= 1e-10 * (1.0 + best_ratio.abs());
            let better = if tie {
                match best {
                    Some(r) => {
                        if bland {
                            self.basis[i] < self.basis[r]
                        } else {
                            w[i] > w[r]
                        }
                    }
                    None => true,
                }
            } else {
                ratio < best_ratio
            };
            if better {
                if !tie || ratio < best_ratio {
                    best_ratio = ratio;
                }
                best = Some(i);
            }
        }
        best
    }

    fn pivot(&mut self, entering: usize, leaving: usize, w: &[f64], step: f64) {
        let m = self.m;
        let piv = w[leaving];

        for i in 0..m {
            if i != leaving {
                self.xb[i] -= step * w[i];
            }
        }
        self.xb[leaving] = step;

        let old = self.basis[leaving];
        self.in_basis[old] = false;
        self.in_basis[entering] = true;
        self.basis[leaving] = entering;

        // Row-reduce the inverse: scale the pivot row, eliminate elsewhere.
        let inv_piv = 1.0 / piv;
        for k in 0..m {
            self.binv[leaving * m + k] *= inv_piv;
        }
        for i in 0..m {
            if i == leaving || w[i] == 0.0 {
                continue;
            }
            let f = w[i];
            let (head, tail) = self.binv.split_at_mut(leaving.max(i) * m);
            let (row_i, row_r) = if i < leaving {
                (&mut head[i * m..(i + 1) * m], &tail[..m])
            } else {
                (&mut tail[..m], &head[leaving * m..leaving * m + m])
            };
            for k in 0..m {
                row_i[k] -= f * row_r[k];
            }
        }

        // Reduced-cost update: d_k -= d_enter * (rho . A_k) with rho the new
        // pivot row of the inverse; the entering column lands exactly at 0.
        let d_enter = self.reduced[entering];
        if d_enter != 0.0 {
            let rho = self.binv[leaving * m..(leaving + 1) * m].to_vec();
            for (i, &rho_i) in rho.iter().enumerate() {
                if rho_i == 0.0 {
                    continue;
                }
                let scale = d_enter * rho_i;
                for &(j, a) in &self.rows[i] {
                    self.reduced[j] -= scale * a;
                }
                self.reduced[self.n + i] -= scale;
            }
        }
        self.reduced[entering] = 0.0;
    }

    /// Recompute reduced costs from the current inverse: `c - c_B B^{-1} A`.
    fn refresh_reduced_costs(&mut self) {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (i, &var) in self.basis.iter().enumerate() {
            let cb = self.cost[var];
            if cb == 0.0 {
                continue;
            }
            for k in 0..m {
                y[k] += cb * self.binv[i * m + k];
            }
        }
        for j in 0..self.n {
            if self.fixed[j] {
                self.reduced[j] = 0.0;
                continue;
            }
            let mut yaj = 0.0;
            for &(i, a) in &self.cols[j] {
                yaj += y[i] * a;
            }
            self.reduced[j] = self.cost[j] - yaj;
        }
        for i in 0..m {
            self.reduced[self.n + i] = -y[i];
        }
        for &var in &self.basis {
            self.reduced[var] = 0.0;
        }
    }

    /// Rebuild the inverse from the basis by Gauss-Jordan elimination with
    /// partial pivoting, then recover `x_B = B^{-1} b` exactly.
    fn refactorize(&mut self) {
        let m = self.m;
        let mut mat = vec![0.0; m * m];
        for (i, &var) in self.basis.iter().enumerate() {
            if var >= self.n {
                mat[(var - self.n) * m + i] = 1.0;
            } else {
                for &(r, a) in &self.cols[var] {
                    mat[r * m + i] = a;
                }
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for col in 0..m {
            let mut piv_row = col;
            let mut piv_abs = mat[col * m + col].abs();
            for r in col + 1..m {
                let a = mat[r * m + col].abs();
                if a > piv_abs {
                    piv_abs = a;
                    piv_row = r;
                }
            }
            if piv_row != col {
                for k in 0..m {
                    mat.swap(col * m + k, piv_row * m + k);
                    inv.swap(col * m + k, piv_row * m + k);
                }
            }
            let piv = mat[col * m + col];
            let inv_piv = 1.0 / piv;
            for k in 0..m {
                mat[col * m + k] *= inv_piv;
                inv[col * m + k] *= inv_piv;
            }
            for r in 0..m {
                if r == col {
                    continue;
                }
                let f = mat[r * m + col];
                if f == 0.0 {
                    continue;
                }
                for k in 0..m {
                    mat[r * m + k] -= f * mat[col * m + k];
                    inv[r * m + k] -= f * inv[col * m + k];
                }
            }
        }
        self.binv = inv;
        for i in 0..m {
            let mut acc = 0.0;
            for k in 0..m {
                acc += self.binv[i * m + k] * self.rhs[k];
            }
            self.xb[i] = acc;
        }
    }

    fn structural_solution(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (i, &var) in self.basis.iter().enumerate() {
            if var < self.n {
                x[var] = self.xb[i].max(0.0);
            }
        }
        x
    }
}
