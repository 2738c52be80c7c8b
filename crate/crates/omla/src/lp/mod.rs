//! The offline LP relaxation over joint machine/level assignment
//! probabilities `x_{e,l,t}`, and its solver.
//!
//! The LP maximizes `sum q_e * r_{u,v,l} * x_{e,l,t}` subject to five
//! constraint families, all with sense `<=`:
//!
//! * `occupancy` per `(u,t)`: mass of assignments still occupying `u` at
//!   `t` plus fresh acceptance mass at `t` stays below 1;
//! * `budget` per finite-budget `u`: expected penalty-weighted mass stays
//!   below `Delta_u + theta - 1`;
//! * `arrival-task` per `(v,t)`: total mass on `v` at `t` is at most
//!   `p_{v,t}`;
//! * `arrival-edge` per `(v, e in E_v, t)`: per-edge mass is at most
//!   `p_{v,t}`;
//! * `machine-per-slot` per `(u,t)`: unweighted assignment mass on `u`
//!   at `t` is at most 1.
//!
//! Machines with unlimited budget contribute no budget row.

mod simplex;

use std::io::Write;

use crate::model::{EdgeId, Instance, MachineId, TaskId};
use crate::{Error, Result};

/// Default relative optimality / feasibility tolerance.
pub const DEFAULT_TOL: f64 = 1e-7;

/// Components below this are clamped to exactly zero in the solution, so the
/// online policy divides and samples on clean nonnegative values.
pub const CLAMP_TOL: f64 = 1e-12;

/// Which family a constraint row belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowFamily {
    Occupancy { u: MachineId, t: usize },
    Budget { u: MachineId },
    ArrivalTask { v: TaskId, t: usize },
    ArrivalEdge { v: TaskId, e: EdgeId, t: usize },
    MachineSlot { u: MachineId, t: usize },
}

impl RowFamily {
    pub fn tag(&self) -> &'static str {
        match self {
            RowFamily::Occupancy { .. } => "occupancy",
            RowFamily::Budget { .. } => "budget",
            RowFamily::ArrivalTask { .. } => "arrival-task",
            RowFamily::ArrivalEdge { .. } => "arrival-edge",
            RowFamily::MachineSlot { .. } => "machine-per-slot",
        }
    }
}

/// One `<=` constraint row, sparse.
#[derive(Clone, Debug)]
pub struct LpRow {
    pub family: RowFamily,
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// A built LP over columns `x_{e,l,t}`, column-indexed by
/// [`LpProblem::col`]. All variables are nonnegative; all rows have sense
/// `<=`.
#[derive(Clone, Debug)]
pub struct LpProblem {
    num_edges: usize,
    num_levels: usize,
    horizon: usize,
    pub objective: Vec<f64>,
    pub rows: Vec<LpRow>,
    /// Columns pinned to zero (used by level-restricted variants); the
    /// solver never lets them enter the basis.
    pub fixed_zero: Vec<bool>,
}

impl LpProblem {
    pub fn num_cols(&self) -> usize {
        self.num_edges * self.num_levels * self.horizon
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Column of `x_{e,l,t}`; `l` and `t` are 1-based.
    pub fn col(&self, e: EdgeId, l: usize, t: usize) -> usize {
        (e * self.num_levels + (l - 1)) * self.horizon + (t - 1)
    }

    /// Sparse text dump for cross-checking with external tools.
    ///
    /// Format (all rows have sense `<=`, all variables are `>= 0`):
    /// ```text
    /// p lp <rows> <cols>
    /// s <row> le <rhs>          one line per row
    /// o <col> <value>           one line per objective nonzero
    /// a <row> <col> <value>     one line per constraint nonzero
    /// ```
    pub fn write_sparse(&self, out: &mut dyn Write) -> Result<()> {
        writeln!(out, "p lp {} {}", self.num_rows(), self.num_cols())?;
        for (i, row) in self.rows.iter().enumerate() {
            writeln!(out, "s {i} le {}", row.rhs)?;
        }
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                writeln!(out, "o {j} {c}")?;
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                writeln!(out, "a {i} {j} {a}")?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Solver output: the (clamped) primal solution and objective value.
#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: LpStatus,
    num_levels: usize,
    horizon: usize,
}

impl LpSolution {
    /// Assemble a solution from a raw vector, for tests and for table
    /// computations driven by a hand-picked feasible point.
    pub fn from_vector(instance: &Instance, x: Vec<f64>) -> Self {
        assert_eq!(
            x.len(),
            instance.num_edges() * instance.num_levels() * instance.horizon()
        );
        let objective = (0..instance.num_edges())
            .map(|e| {
                let q = instance.edge(e).accept_prob;
                (1..=instance.num_levels())
                    .map(|l| {
                        let r = instance.reward(e, l);
                        (1..=instance.horizon())
                            .map(|t| {
                                q * r
                                    * x[(e * instance.num_levels() + (l - 1)) * instance.horizon()
                                        + (t - 1)]
                            })
                            .sum::<f64>()
                    })
                    .sum::<f64>()
            })
            .sum();
        LpSolution {
            x,
            objective,
            status: LpStatus::Optimal,
            num_levels: instance.num_levels(),
            horizon: instance.horizon(),
        }
    }

    /// `x*_{e,l,t}`; `l` and `t` are 1-based.
    pub fn x(&self, e: EdgeId, l: usize, t: usize) -> f64 {
        self.x[(e * self.num_levels + (l - 1)) * self.horizon + (t - 1)]
    }

    /// `(levels, horizon)` the vector is laid out for.
    pub fn dims(&self) -> (usize, usize) {
        (self.num_levels, self.horizon)
    }

    /// `sum_{e in E_v} sum_l x*_{e,l,t}`, the total mass placed on task `v`
    /// at `t`.
    pub fn task_mass(&self, instance: &Instance, v: TaskId, t: usize) -> f64 {
        instance
            .edges_of_task(v)
            .iter()
            .map(|&e| (1..=self.num_levels).map(|l| self.x(e, l, t)).sum::<f64>())
            .sum()
    }
}

/// Build the offline LP for a validated instance.
pub fn build_off(instance: &Instance) -> Result<LpProblem> {
    build_off_with_levels(instance, None)
}

/// Build the offline LP with, per edge, only one permitted level; the other
/// columns stay in the index space but are pinned to zero. `choice[e]` is
/// the 1-based permitted level of edge `e`.
pub fn build_off_level_choice(instance: &Instance, choice: &[usize]) -> Result<LpProblem> {
    assert_eq!(choice.len(), instance.num_edges());
    build_off_with_levels(instance, Some(choice))
}

fn build_off_with_levels(instance: &Instance, choice: Option<&[usize]>) -> Result<LpProblem> {
    let report = instance.validate();
    if !report.is_valid() {
        return Err(Error::Validation(report.to_string()));
    }

    let num_edges = instance.num_edges();
    let num_levels = instance.num_levels();
    let horizon = instance.horizon();
    let mut problem = LpProblem {
        num_edges,
        num_levels,
        horizon,
        objective: vec![0.0; num_edges * num_levels * horizon],
        rows: Vec::new(),
        fixed_zero: vec![false; num_edges * num_levels * horizon],
    };

    for e in 0..num_edges {
        let q = instance.edge(e).accept_prob;
        for l in 1..=num_levels {
            let r = instance.reward(e, l);
            for t in 1..=horizon {
                let j = problem.col(e, l, t);
                problem.objective[j] = q * r;
                if let Some(choice) = choice {
                    if choice[e] != l {
                        problem.fixed_zero[j] = true;
                    }
                }
            }
        }
    }

    // occupancy: accepted assignments from t' <= t still occupying u at t.
    // For t' = t the coefficient is q_e (Pr{d >= 1} = 1).
    for u in 0..instance.num_machines() {
        for t in 1..=horizon {
            let mut coeffs = Vec::new();
            for &e in instance.edges_of_machine(u) {
                let q = instance.edge(e).accept_prob;
                for l in 1..=num_levels {
                    let dist = instance.delay(l);
                    for t_prev in 1..=t {
                        let weight = if t_prev == t {
                            q
                        } else {
                            q * dist.tail(t - t_prev + 1)
                        };
                        if weight != 0.0 {
                            coeffs.push((problem.col(e, l, t_prev), weight));
                        }
                    }
                }
            }
            problem.rows.push(LpRow {
                family: RowFamily::Occupancy { u, t },
                coeffs,
                rhs: 1.0,
            });
        }
    }

    // budget: expected penalty mass, counting theta for a final assignment
    // that outlives the horizon.
    for u in 0..instance.num_machines() {
        let delta = match instance.budget(u).finite() {
            Some(delta) => delta,
            None => continue,
        };
        let theta_max = instance.theta_max() as f64;
        let mut coeffs = Vec::new();
        for &e in instance.edges_of_machine(u) {
            let q = instance.edge(e).accept_prob;
            for l in 1..=num_levels {
                let theta_l = instance.theta(l) as f64;
                let dist = instance.delay(l);
                for t in 1..=horizon {
                    let weight = theta_max * q * dist.tail(horizon - t + 1) + (1.0 - q) * theta_l;
                    if weight != 0.0 {
                        coeffs.push((problem.col(e, l, t), weight));
                    }
                }
            }
        }
        problem.rows.push(LpRow {
            family: RowFamily::Budget { u },
            coeffs,
            rhs: delta as f64 + theta_max - 1.0,
        });
    }

    // arrival-task and arrival-edge share the rhs p_{v,t}; both are emitted
    // even when they coincide for single-edge tasks.
    for v in 0..instance.num_tasks() {
        for t in 1..=horizon {
            let p = instance.arrival(v, t);
            let coeffs = instance
                .edges_of_task(v)
                .iter()
                .flat_map(|&e| (1..=num_levels).map(move |l| (e, l)))
                .map(|(e, l)| (problem.col(e, l, t), 1.0))
                .collect();
            problem.rows.push(LpRow {
                family: RowFamily::ArrivalTask { v, t },
                coeffs,
                rhs: p,
            });
        }
    }
    for v in 0..instance.num_tasks() {
        for &e in instance.edges_of_task(v) {
            for t in 1..=horizon {
                let coeffs = (1..=num_levels)
                    .map(|l| (problem.col(e, l, t), 1.0))
                    .collect();
                problem.rows.push(LpRow {
                    family: RowFamily::ArrivalEdge { v, e, t },
                    coeffs,
                    rhs: instance.arrival(v, t),
                });
            }
        }
    }

    for u in 0..instance.num_machines() {
        for t in 1..=horizon {
            let coeffs = instance
                .edges_of_machine(u)
                .iter()
                .flat_map(|&e| (1..=num_levels).map(move |l| (e, l)))
                .map(|(e, l)| (problem.col(e, l, t), 1.0))
                .collect();
            problem.rows.push(LpRow {
                family: RowFamily::MachineSlot { u, t },
                coeffs,
                rhs: 1.0,
            });
        }
    }

    Ok(problem)
}

/// Solve the LP to optimality. Deterministic for identical input.
pub fn solve(problem: &LpProblem, tol: f64) -> Result<LpSolution> {
    let mut solution = simplex::solve(problem, tol)?;
    if solution.status == LpStatus::Optimal {
        for xj in &mut solution.x {
            if xj.abs() < CLAMP_TOL {
                *xj = 0.0;
            }
        }
        solution.objective = objective_value(problem, &solution.x);
    }
    Ok(solution)
}

/// Build and solve in one step, insisting on an optimal status.
pub fn solve_off(instance: &Instance, tol: f64) -> Result<(LpProblem, LpSolution)> {
    let problem = build_off(instance)?;
    let solution = solve(&problem, tol)?;
    if solution.status != LpStatus::Optimal {
        return Err(Error::Lp(format!(
            "offline LP reported {:?}; it must be feasible and bounded for a valid instance",
            solution.status
        )));
    }
    Ok((problem, solution))
}

pub fn objective_value(problem: &LpProblem, x: &[f64]) -> f64 {
    problem.objective.iter().zip(x).map(|(c, xj)| c * xj).sum()
}

/// Standalone feasibility pass, independent of the solver's bookkeeping:
/// largest constraint violation together with the largest negativity of any
/// component.
pub fn max_residual(problem: &LpProblem, x: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for xj in x {
        worst = worst.max(-xj);
    }
    for row in &problem.rows {
        let lhs: f64 = row.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
        worst = worst.max(lhs - row.rhs);
    }
    worst
}
