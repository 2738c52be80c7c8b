//! Backward induction of activation values Q and baseline values R over the
//! solved assignment probabilities.
//!
//! For a machine `u` with remaining budget `delta`, `R^delta_{u,t}` is the
//! expected reward the sampling policy collects from `u` over slots `t..=T`,
//! and `Q^delta_{e,l,t}` is the value of proposing `(e,l)` at `t`:
//!
//! ```text
//! Q^d_{e,l,t} = q_e (r_{e,l} + sum_{d' in [T-t]} Pr{d_l = d'} R^d_{u,t+d'})
//!               + (1 - q_e) R^{d - theta_l}_{u,t+1}
//! R^d_{u,t}   = sum_{e in E_u, l} x*_{e,l,t} max{Q^d_{e,l,t}, R^d_{u,t+1}}
//!               + (1 - sum x*) R^d_{u,t+1}
//! ```
//!
//! with every lookup at `delta <= 0` or `t > T` equal to 0. The delay sum
//! truncates at the horizon: a machine occupied past T never returns. In the
//! unlimited-budget variant the rejection branch continues to `R_{u,t+1}`
//! with no budget decrement.

use std::io::Write;

use rayon::prelude::*;

use crate::lp::LpSolution;
use crate::model::{Budget, EdgeId, Instance, MachineId};
use crate::{Error, Result};

/// Q/R tables for an all-finite-budget instance, over the global budget
/// range `delta in 1..=delta_max` where `delta_max = max_u Delta_u`.
#[derive(Clone, Debug)]
pub struct ValueTables {
    delta_max: u32,
    num_machines: usize,
    num_edges: usize,
    num_levels: usize,
    horizon: usize,
    /// `(u * delta_max + (delta-1)) * T + (t-1)`
    r: Vec<f64>,
    /// `((e * delta_max + (delta-1)) * L + (l-1)) * T + (t-1)`
    q: Vec<f64>,
}

impl ValueTables {
    pub fn delta_max(&self) -> u32 {
        self.delta_max
    }

    /// Total lookup: 0 for `delta <= 0` or `t > T`.
    pub fn r(&self, delta: i64, u: MachineId, t: usize) -> f64 {
        debug_assert!(t >= 1);
        if delta <= 0 || t > self.horizon {
            return 0.0;
        }
        assert!(
            delta as u32 <= self.delta_max,
            "budget {delta} beyond table range"
        );
        let d = delta as usize - 1;
        self.r[(u * self.delta_max as usize + d) * self.horizon + (t - 1)]
    }

    /// Total lookup: 0 for `delta <= 0` or `t > T`.
    pub fn q(&self, delta: i64, e: EdgeId, l: usize, t: usize) -> f64 {
        debug_assert!(t >= 1 && e < self.num_edges);
        if delta <= 0 || t > self.horizon {
            return 0.0;
        }
        assert!(
            delta as u32 <= self.delta_max,
            "budget {delta} beyond table range"
        );
        let d = delta as usize - 1;
        self.q[((e * self.delta_max as usize + d) * self.num_levels + (l - 1)) * self.horizon
            + (t - 1)]
    }

    /// Worst violation of budget monotonicity `R^delta >= R^{delta-1}`, if
    /// any entry dips more than 1e-9 below its lower-budget neighbour. A
    /// diagnostic: nothing in the computation assumes monotonicity.
    pub fn budget_monotonicity_violation(&self) -> Option<(u32, MachineId, usize, f64)> {
        let mut worst: Option<(u32, MachineId, usize, f64)> = None;
        for u in 0..self.num_machines {
            for delta in 2..=self.delta_max {
                for t in 1..=self.horizon {
                    let gap = self.r(delta as i64, u, t) - self.r(delta as i64 - 1, u, t);
                    if gap < -1e-9 && worst.is_none_or(|(.., g)| gap < g) {
                        worst = Some((delta, u, t, gap));
                    }
                }
            }
        }
        worst
    }

    /// Debug dump of R as `delta,u,t,R` rows.
    pub fn write_r_csv(&self, out: &mut dyn Write) -> Result<()> {
        writeln!(out, "delta,u,t,R")?;
        for delta in 1..=self.delta_max {
            for u in 0..self.num_machines {
                for t in 1..=self.horizon {
                    writeln!(out, "{delta},{u},{t},{}", self.r(delta as i64, u, t))?;
                }
            }
        }
        Ok(())
    }
}

/// Q/R tables for an all-unlimited-budget instance; no budget dimension.
#[derive(Clone, Debug)]
pub struct ValueTablesUnlimited {
    num_machines: usize,
    num_edges: usize,
    num_levels: usize,
    horizon: usize,
    /// `u * T + (t-1)`
    r: Vec<f64>,
    /// `(e * L + (l-1)) * T + (t-1)`
    q: Vec<f64>,
}

impl ValueTablesUnlimited {
    /// Total lookup: 0 for `t > T`.
    pub fn r(&self, u: MachineId, t: usize) -> f64 {
        debug_assert!(t >= 1);
        if t > self.horizon {
            return 0.0;
        }
        self.r[u * self.horizon + (t - 1)]
    }

    /// Total lookup: 0 for `t > T`.
    pub fn q(&self, e: EdgeId, l: usize, t: usize) -> f64 {
        debug_assert!(t >= 1 && e < self.num_edges);
        if t > self.horizon {
            return 0.0;
        }
        self.q[(e * self.num_levels + (l - 1)) * self.horizon + (t - 1)]
    }

    /// Debug dump mirroring the limited format; the budget column is `inf`.
    pub fn write_r_csv(&self, out: &mut dyn Write) -> Result<()> {
        writeln!(out, "delta,u,t,R")?;
        for u in 0..self.num_machines {
            for t in 1..=self.horizon {
                writeln!(out, "inf,{u},{t},{}", self.r(u, t))?;
            }
        }
        Ok(())
    }
}

/// Uniform-regime tables, as consumed by the online policies.
#[derive(Clone, Debug)]
pub enum Tables {
    Limited(ValueTables),
    Unlimited(ValueTablesUnlimited),
}

impl Tables {
    /// `sum_u R^{Delta_u}_{u,1}`: the exact expected total reward of the
    /// sampling policy, each machine entered at its own initial budget.
    pub fn initial_value(&self, instance: &Instance) -> f64 {
        match self {
            Tables::Limited(t) => (0..instance.num_machines())
                .map(|u| {
                    let delta = instance.budget(u).finite().expect("limited tables") as i64;
                    t.r(delta, u, 1)
                })
                .sum(),
            Tables::Unlimited(t) => (0..instance.num_machines()).map(|u| t.r(u, 1)).sum(),
        }
    }

    pub fn write_r_csv(&self, out: &mut dyn Write) -> Result<()> {
        match self {
            Tables::Limited(t) => t.write_r_csv(out),
            Tables::Unlimited(t) => t.write_r_csv(out),
        }
    }
}

/// Dispatch on the instance's budget regime.
pub fn compute_for(instance: &Instance, solution: &LpSolution) -> Result<Tables> {
    if instance.all_finite_budgets() {
        Ok(Tables::Limited(compute_tables(instance, solution)?))
    } else if instance.all_unlimited_budgets() {
        Ok(Tables::Unlimited(compute_tables_unlimited(
            instance, solution,
        )?))
    } else {
        Err(Error::Tables(
            "policies need a uniform budget regime; this instance mixes finite and unlimited"
                .to_string(),
        ))
    }
}

/// Budget regime of one machine's backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BudgetMode {
    /// Bands `delta in 1..=cap`; rejection moves to band `delta - theta_l`.
    Finite(u32),
    /// One band; rejection stays in it.
    Unlimited,
}

/// One machine's R (and Q per incident edge) for every budget band.
pub(crate) struct MachineValues {
    pub bands: usize,
    pub horizon: usize,
    /// `(band * T + (t-1))`, band = delta-1 (or 0 when unlimited).
    pub r: Vec<f64>,
    /// Per edge in `E_u` order: `(band * L + (l-1)) * T + (t-1)`.
    pub q: Vec<(EdgeId, Vec<f64>)>,
}

impl MachineValues {
    pub fn r_at(&self, band: usize, t: usize) -> f64 {
        if t > self.horizon {
            0.0
        } else {
            self.r[band * self.horizon + (t - 1)]
        }
    }
}

/// Backward pass for one machine; the parallelism unit.
pub(crate) fn machine_values(
    instance: &Instance,
    solution: &LpSolution,
    u: MachineId,
    mode: BudgetMode,
) -> MachineValues {
    let horizon = instance.horizon();
    let levels = instance.num_levels();
    let edges = instance.edges_of_machine(u);
    let bands = match mode {
        BudgetMode::Finite(cap) => cap as usize,
        BudgetMode::Unlimited => 1,
    };

    let mut r = vec![0.0; bands * horizon];
    let mut q: Vec<(EdgeId, Vec<f64>)> = edges
        .iter()
        .map(|&e| (e, vec![0.0; bands * levels * horizon]))
        .collect();

    // delta ascending so the rejection band is already filled; t descending.
    for band in 0..bands {
        for t in (1..=horizon).rev() {
            let r_next = lookup(&r, horizon, band as i64, t + 1);
            let mut acc = 0.0;
            let mut mass = 0.0;
            for (ei, &e) in edges.iter().enumerate() {
                let accept = instance.edge(e).accept_prob;
                for l in 1..=levels {
                    let mut future = 0.0;
                    for (d, pr) in instance.delay(l).iter() {
                        if d > horizon - t {
                            break;
                        }
                        future += pr * lookup(&r, horizon, band as i64, t + d);
                    }
                    let reject_band = match mode {
                        BudgetMode::Finite(_) => band as i64 - instance.theta(l) as i64,
                        BudgetMode::Unlimited => band as i64,
                    };
                    let qv = accept * (instance.reward(e, l) + future)
                        + (1.0 - accept) * lookup(&r, horizon, reject_band, t + 1);
                    q[ei].1[(band * levels + (l - 1)) * horizon + (t - 1)] = qv;
                    let x = solution.x(e, l, t);
                    acc += x * qv.max(r_next);
                    mass += x;
                }
            }
            r[band * horizon + (t - 1)] = acc + (1.0 - mass) * r_next;
        }
    }

    MachineValues {
        bands,
        horizon,
        r,
        q,
    }
}

/// Band lookup with the 0 boundary for `band < 0` or `t > T`.
fn lookup(r: &[f64], horizon: usize, band: i64, t: usize) -> f64 {
    if band < 0 || t > horizon {
        0.0
    } else {
        r[band as usize * horizon + (t - 1)]
    }
}

/// Tables for an all-finite instance over `delta in 1..=max_u Delta_u`.
pub fn compute_tables(instance: &Instance, solution: &LpSolution) -> Result<ValueTables> {
    let delta_max = match require_uniform(instance)? {
        Budget::Finite(d) => d,
        Budget::Unlimited => {
            return Err(Error::Tables(
                "instance has unlimited budgets; use compute_tables_unlimited".to_string(),
            ))
        }
    };
    let horizon = instance.horizon();
    let levels = instance.num_levels();
    let cap = delta_max as usize;

    let per_machine: Vec<MachineValues> = (0..instance.num_machines())
        .into_par_iter()
        .map(|u| machine_values(instance, solution, u, BudgetMode::Finite(delta_max)))
        .collect();

    let mut tables = ValueTables {
        delta_max,
        num_machines: instance.num_machines(),
        num_edges: instance.num_edges(),
        num_levels: levels,
        horizon,
        r: vec![0.0; instance.num_machines() * cap * horizon],
        q: vec![0.0; instance.num_edges() * cap * levels * horizon],
    };
    for (u, values) in per_machine.into_iter().enumerate() {
        let dst = u * cap * horizon;
        tables.r[dst..dst + cap * horizon].copy_from_slice(&values.r);
        for (e, band) in values.q {
            let dst = e * cap * levels * horizon;
            tables.q[dst..dst + cap * levels * horizon].copy_from_slice(&band);
        }
    }
    check_entries(&tables.r).and(check_entries(&tables.q))?;
    Ok(tables)
}

/// Tables for an all-unlimited instance.
pub fn compute_tables_unlimited(
    instance: &Instance,
    solution: &LpSolution,
) -> Result<ValueTablesUnlimited> {
    match require_uniform(instance)? {
        Budget::Unlimited => {}
        Budget::Finite(_) => {
            return Err(Error::Tables(
                "instance has finite budgets; use compute_tables".to_string(),
            ))
        }
    }
    let horizon = instance.horizon();
    let levels = instance.num_levels();

    let per_machine: Vec<MachineValues> = (0..instance.num_machines())
        .into_par_iter()
        .map(|u| machine_values(instance, solution, u, BudgetMode::Unlimited))
        .collect();

    let mut tables = ValueTablesUnlimited {
        num_machines: instance.num_machines(),
        num_edges: instance.num_edges(),
        num_levels: levels,
        horizon,
        r: vec![0.0; instance.num_machines() * horizon],
        q: vec![0.0; instance.num_edges() * levels * horizon],
    };
    for (u, values) in per_machine.into_iter().enumerate() {
        tables.r[u * horizon..(u + 1) * horizon].copy_from_slice(&values.r);
        for (e, band) in values.q {
            let dst = e * levels * horizon;
            tables.q[dst..dst + levels * horizon].copy_from_slice(&band);
        }
    }
    check_entries(&tables.r).and(check_entries(&tables.q))?;
    Ok(tables)
}

/// The regime shared by every machine, or an error for mixed instances.
fn require_uniform(instance: &Instance) -> Result<Budget> {
    if instance.all_unlimited_budgets() {
        return Ok(Budget::Unlimited);
    }
    if instance.all_finite_budgets() {
        let delta_max = instance.max_finite_budget().expect("nonempty machine set");
        return Ok(Budget::Finite(delta_max));
    }
    Err(Error::Tables(
        "mixed finite/unlimited budgets; compute per-machine values instead".to_string(),
    ))
}

/// Entries are expectations of nonnegative rewards; anything else means the
/// inputs were not a feasible LP solution.
fn check_entries(values: &[f64]) -> Result<()> {
    for &v in values {
        if !v.is_finite() || v < -1e-6 {
            return Err(Error::Tables(format!(
                "table entry {v} outside the expected range (non-finite or negative)"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::lp::LpSolution;
    use crate::model::{Budget, DelayDist, Edge, Instance, InstanceParts, MachineSpec, TaskSpec};

    /// 1 machine, 1 edge, L=1, T=2, theta=1, q=0.5, r=4, d=1 surely,
    /// x* = 0.5 at both slots. Hand recursion: R^1_{u,2}=1, Q^1_{e,1,1}=2.5,
    /// R^1_{u,1}=1.75.
    pub(crate) fn half_half_instance(budget: Budget) -> (Instance, LpSolution) {
        let instance = Instance::from_parts(InstanceParts {
            horizon: 2,
            machines: vec![MachineSpec { id: 0, budget }],
            tasks: vec![TaskSpec { id: 0 }],
            edges: vec![Edge {
                id: 0,
                machine: 0,
                task: 0,
                accept_prob: 0.5,
            }],
            levels: 1,
            rewards: vec![vec![4.0]],
            theta: vec![1],
            arrivals: vec![vec![0.5, 0.5]],
            delays: vec![DelayDist::new(vec![1.0])],
        })
        .unwrap();
        let solution = LpSolution::from_vector(&instance, vec![0.5, 0.5]);
        (instance, solution)
    }

    #[test]
    fn hand_recursion_values_exact() {
        let (instance, solution) = half_half_instance(Budget::Finite(1));
        let tables = compute_tables(&instance, &solution).unwrap();
        assert_eq!(tables.r(1, 0, 2), 1.0);
        assert_eq!(tables.q(1, 0, 1, 1), 2.5);
        assert_eq!(tables.r(1, 0, 1), 1.75);
        assert_eq!(tables.r(0, 0, 1), 0.0);
        assert_eq!(tables.r(1, 0, 3), 0.0);
    }

    #[test]
    fn terminal_slot_values() {
        // T=1: Q = q r for every delta; R = sum x q r.
        let instance = Instance::from_parts(InstanceParts {
            horizon: 1,
            machines: vec![MachineSpec {
                id: 0,
                budget: Budget::Finite(3),
            }],
            tasks: vec![TaskSpec { id: 0 }],
            edges: vec![Edge {
                id: 0,
                machine: 0,
                task: 0,
                accept_prob: 0.75,
            }],
            levels: 1,
            rewards: vec![vec![2.0]],
            theta: vec![2],
            arrivals: vec![vec![0.8]],
            delays: vec![DelayDist::new(vec![1.0])],
        })
        .unwrap();
        let solution = LpSolution::from_vector(&instance, vec![0.8]);
        let tables = compute_tables(&instance, &solution).unwrap();
        for delta in 1..=3 {
            assert_eq!(tables.q(delta, 0, 1, 1), 0.75 * 2.0);
            assert_eq!(tables.r(delta, 0, 1), 0.8 * 0.75 * 2.0);
        }
    }

    #[test]
    fn delay_longer_than_horizon_leaves_bare_reward() {
        // q=1 and Pr{d=T}=1: at t=1 no continuation survives, Q = r.
        let instance = Instance::from_parts(InstanceParts {
            horizon: 3,
            machines: vec![MachineSpec {
                id: 0,
                budget: Budget::Finite(1),
            }],
            tasks: vec![TaskSpec { id: 0 }],
            edges: vec![Edge {
                id: 0,
                machine: 0,
                task: 0,
                accept_prob: 1.0,
            }],
            levels: 1,
            rewards: vec![vec![7.0]],
            theta: vec![1],
            arrivals: vec![vec![0.5, 0.5, 0.5]],
            delays: vec![DelayDist::new(vec![0.0, 0.0, 1.0])],
        })
        .unwrap();
        let solution = LpSolution::from_vector(&instance, vec![0.5, 0.5, 0.5]);
        let tables = compute_tables(&instance, &solution).unwrap();
        assert_eq!(tables.q(1, 0, 1, 1), 7.0);
    }

    #[test]
    fn regime_mismatch_rejected() {
        let (limited, solution) = half_half_instance(Budget::Finite(1));
        assert!(compute_tables_unlimited(&limited, &solution).is_err());
        let (unlimited, solution) = half_half_instance(Budget::Unlimited);
        assert!(compute_tables(&unlimited, &solution).is_err());
        assert!(matches!(
            compute_for(&limited, &solution),
            Ok(Tables::Limited(_))
        ));
    }

    #[test]
    fn unlimited_matches_inexhaustible_finite_budget() {
        let config = crate::gen::SyntheticConfig {
            num_machines: 2,
            num_tasks: 3,
            horizon: 8,
            num_levels: 2,
            edge_prob: 1.0,
            budget_cap: None,
            seed: 11,
            ..Default::default()
        };
        let unlimited = crate::gen::synthetic(&config).unwrap();
        let (_, solution) = crate::lp::solve_off(&unlimited, crate::lp::DEFAULT_TOL).unwrap();

        // A budget the horizon cannot exhaust behaves exactly like none.
        let huge = unlimited.horizon() as u32 * unlimited.theta_max() + 1;
        let mut parts = unlimited.to_parts();
        for m in &mut parts.machines {
            m.budget = Budget::Finite(huge);
        }
        let finite = Instance::from_parts(parts).unwrap();

        let t_unlimited = compute_tables_unlimited(&unlimited, &solution).unwrap();
        let t_finite = compute_tables(&finite, &solution).unwrap();
        for u in 0..unlimited.num_machines() {
            for t in 1..=unlimited.horizon() {
                let diff = (t_finite.r(huge as i64, u, t) - t_unlimited.r(u, t)).abs();
                assert!(diff <= 1e-12, "R mismatch at u={u} t={t}: {diff}");
            }
        }
        for e in 0..unlimited.num_edges() {
            for l in 1..=unlimited.num_levels() {
                for t in 1..=unlimited.horizon() {
                    let diff = (t_finite.q(huge as i64, e, l, t) - t_unlimited.q(e, l, t)).abs();
                    assert!(diff <= 1e-12, "Q mismatch at e={e} l={l} t={t}: {diff}");
                }
            }
        }
    }

    #[test]
    fn certain_acceptance_collapses_budget_dimension() {
        // q=1: the rejection branch has weight 0, so R is delta-independent
        // and equals the unlimited table exactly.
        let (instance, solution) = half_half_instance(Budget::Unlimited);
        let mut parts = instance.to_parts();
        parts.edges[0].accept_prob = 1.0;
        for m in &mut parts.machines {
            m.budget = Budget::Finite(3);
        }
        let limited = Instance::from_parts(parts.clone()).unwrap();
        for m in &mut parts.machines {
            m.budget = Budget::Unlimited;
        }
        let unlimited = Instance::from_parts(parts).unwrap();

        let tl = compute_tables(&limited, &solution).unwrap();
        let tu = compute_tables_unlimited(&unlimited, &solution).unwrap();
        for delta in 1..=3 {
            for t in 1..=2 {
                assert_eq!(tl.r(delta, 0, t), tu.r(0, t));
            }
        }
    }

    #[test]
    fn time_and_budget_monotonicity_on_generated_instances() {
        for seed in [1u64, 2, 3, 4, 5] {
            let config = crate::gen::SyntheticConfig {
                num_machines: 3,
                num_tasks: 4,
                horizon: 10,
                num_levels: 2,
                edge_prob: 0.6,
                budget_cap: Some(4),
                seed,
                ..Default::default()
            };
            let instance = crate::gen::synthetic(&config).unwrap();
            let (_, solution) = crate::lp::solve_off(&instance, crate::lp::DEFAULT_TOL).unwrap();
            let tables = compute_tables(&instance, &solution).unwrap();
            for u in 0..instance.num_machines() {
                for delta in 1..=tables.delta_max() as i64 {
                    for t in 1..=instance.horizon() {
                        assert!(
                            tables.r(delta, u, t) >= tables.r(delta, u, t + 1) - 1e-12,
                            "time monotonicity broken at seed {seed} u={u} delta={delta} t={t}"
                        );
                    }
                }
            }
            assert_eq!(tables.budget_monotonicity_violation(), None, "seed {seed}");
        }
    }

    #[test]
    fn initial_value_uses_per_machine_budgets() {
        let (instance, _) = half_half_instance(Budget::Finite(1));
        let mut parts = instance.to_parts();
        parts.machines[0].budget = Budget::Finite(2);
        parts.machines.push(MachineSpec {
            id: 1,
            budget: Budget::Finite(1),
        });
        parts.edges.push(Edge {
            id: 1,
            machine: 1,
            task: 0,
            accept_prob: 0.5,
        });
        parts.rewards.push(vec![4.0]);
        let instance = Instance::from_parts(parts).unwrap();
        let solution = LpSolution::from_vector(&instance, vec![0.5, 0.5, 0.0, 0.0]);
        let tables = compute_for(&instance, &solution).unwrap();
        let expected = match &tables {
            Tables::Limited(t) => t.r(2, 0, 1) + t.r(1, 1, 1),
            Tables::Unlimited(_) => unreachable!(),
        };
        assert_eq!(tables.initial_value(&instance), expected);
    }

    #[test]
    fn csv_dump_shape() {
        let (instance, solution) = half_half_instance(Budget::Finite(2));
        let tables = compute_tables(&instance, &solution).unwrap();
        let mut buf = Vec::new();
        tables.write_r_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "delta,u,t,R");
        let (deltas, machines, slots) = (2, 1, 2);
        assert_eq!(lines.len(), 1 + deltas * machines * slots);
        assert!(lines[1].starts_with("1,0,1,"));
    }
}
