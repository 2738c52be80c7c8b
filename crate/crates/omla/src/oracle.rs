//! Exhaustive evaluators for tiny instances: the exact offline optimum and
//! the exact expected reward of any policy. Both enumerate the full chance
//! tree, so they only run inside [`TinyLimits`].

use crate::model::{Budget, Instance, TaskId};
use crate::policies::{BudgetLeft, Decision, Policy, SimState};
use crate::{Error, Result};

/// Caps that keep exhaustive enumeration tractable.
#[derive(Clone, Copy, Debug)]
pub struct TinyLimits {
    pub max_machines: usize,
    pub max_tasks: usize,
    pub max_horizon: usize,
    pub max_levels: usize,
    /// Cap on finite budgets; unlimited machines carry no budget state.
    pub max_budget: u32,
    pub max_delay_support: usize,
    /// Abort threshold on enumerated nodes; never approximate past it.
    pub node_cap: u64,
}

impl Default for TinyLimits {
    fn default() -> Self {
        TinyLimits {
            max_machines: 2,
            max_tasks: 3,
            max_horizon: 5,
            max_levels: 2,
            max_budget: 3,
            max_delay_support: 3,
            node_cap: 20_000_000,
        }
    }
}

impl TinyLimits {
    pub fn check(&self, instance: &Instance) -> Result<()> {
        let fail = |msg: String| Err(Error::OracleLimits(msg));
        if instance.num_machines() > self.max_machines {
            return fail(format!(
                "{} machines exceed cap {}",
                instance.num_machines(),
                self.max_machines
            ));
        }
        if instance.num_tasks() > self.max_tasks {
            return fail(format!(
                "{} tasks exceed cap {}",
                instance.num_tasks(),
                self.max_tasks
            ));
        }
        if instance.horizon() > self.max_horizon {
            return fail(format!(
                "horizon {} exceeds cap {}",
                instance.horizon(),
                self.max_horizon
            ));
        }
        if instance.num_levels() > self.max_levels {
            return fail(format!(
                "{} levels exceed cap {}",
                instance.num_levels(),
                self.max_levels
            ));
        }
        for machine in instance.machines() {
            if let Budget::Finite(delta) = machine.budget {
                if delta > self.max_budget {
                    return fail(format!("budget {delta} exceeds cap {}", self.max_budget));
                }
            }
        }
        for l in 1..=instance.num_levels() {
            let support = instance.delay(l).support_max();
            if support > self.max_delay_support {
                return fail(format!(
                    "delay support {support} exceeds cap {}",
                    self.max_delay_support
                ));
            }
        }
        Ok(())
    }
}

/// An exactly computed expectation and the enumeration effort behind it.
#[derive(Clone, Copy, Debug)]
pub struct ExactValue {
    pub value: f64,
    pub nodes: u64,
}

/// Dense mixed-radix indexing of (t, occupied_until per machine, budget per
/// machine). Occupation clamps to horizon+1 (busy past the end); unlimited
/// machines contribute a degenerate budget digit.
struct StateIndexer {
    horizon: usize,
    occ_radix: usize,
    bud_radix: Vec<usize>,
    size: usize,
}

impl StateIndexer {
    fn new(instance: &Instance) -> Self {
        let horizon = instance.horizon();
        let occ_radix = horizon + 2;
        let bud_radix: Vec<usize> = instance
            .machines()
            .iter()
            .map(|m| m.budget.finite().map_or(1, |d| d as usize + 1))
            .collect();
        let mut size = horizon;
        for _ in 0..instance.num_machines() {
            size *= occ_radix;
        }
        for &r in &bud_radix {
            size *= r;
        }
        StateIndexer {
            horizon,
            occ_radix,
            bud_radix,
            size,
        }
    }

    fn index(&self, t: usize, occ: &[usize], bud: &[u32]) -> usize {
        debug_assert!(t >= 1 && t <= self.horizon);
        let mut idx = t - 1;
        for &o in occ {
            debug_assert!(o <= self.horizon + 1);
            idx = idx * self.occ_radix + o;
        }
        for (u, &b) in bud.iter().enumerate() {
            idx = idx * self.bud_radix[u] + b as usize;
        }
        idx
    }
}

fn initial_budgets(instance: &Instance) -> Vec<u32> {
    instance
        .machines()
        .iter()
        .map(|m| m.budget.finite().unwrap_or(0))
        .collect()
}

fn machine_alive(instance: &Instance, bud: &[u32], u: usize) -> bool {
    instance.budget(u).is_unlimited() || bud[u] > 0
}

/// Expected offline optimum Σ_I Pr(I)·OPT(I): the planner sees the whole
/// arrival sequence in advance but learns acceptance and delay outcomes only
/// after acting, so each OPT(I) is a backward induction over
/// (time, occupation, budgets).
pub fn exact_opt(instance: &Instance) -> Result<ExactValue> {
    let limits = TinyLimits::default();
    limits.check(instance)?;
    let indexer = StateIndexer::new(instance);
    let mut nodes = 0u64;
    let mut total = 0.0;
    let mut memo = vec![f64::NAN; indexer.size];

    for (sequence, prob) in enumerate_sequences(instance) {
        memo.fill(f64::NAN);
        let occ = vec![0usize; instance.num_machines()];
        let bud = initial_budgets(instance);
        let mut ctx = OptCtx {
            instance,
            indexer: &indexer,
            memo: &mut memo,
            nodes: &mut nodes,
            cap: limits.node_cap,
        };
        let opt = ctx.value(&sequence, 1, &occ, &bud)?;
        total += prob * opt;
    }
    debug_assert!(total.is_finite() && total >= 0.0);
    Ok(ExactValue {
        value: total,
        nodes,
    })
}

/// All positive-probability arrival sequences (one `Option<TaskId>` per slot)
/// with their probabilities.
fn enumerate_sequences(instance: &Instance) -> Vec<(Vec<Option<TaskId>>, f64)> {
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(instance.horizon());
    extend_sequence(instance, &mut prefix, 1.0, &mut out);
    out
}

fn extend_sequence(
    instance: &Instance,
    prefix: &mut Vec<Option<TaskId>>,
    prob: f64,
    out: &mut Vec<(Vec<Option<TaskId>>, f64)>,
) {
    let t = prefix.len() + 1;
    if t > instance.horizon() {
        out.push((prefix.clone(), prob));
        return;
    }
    for v in 0..instance.num_tasks() {
        let p = instance.arrival(v, t);
        if p > 0.0 {
            prefix.push(Some(v));
            extend_sequence(instance, prefix, prob * p, out);
            prefix.pop();
        }
    }
    let residual = 1.0 - instance.arrival_mass(t);
    if residual > 1e-12 {
        prefix.push(None);
        extend_sequence(instance, prefix, prob * residual, out);
        prefix.pop();
    }
}

struct OptCtx<'a> {
    instance: &'a Instance,
    indexer: &'a StateIndexer,
    memo: &'a mut Vec<f64>,
    nodes: &'a mut u64,
    cap: u64,
}

impl OptCtx<'_> {
    fn value(
        &mut self,
        sequence: &[Option<TaskId>],
        t: usize,
        occ: &[usize],
        bud: &[u32],
    ) -> Result<f64> {
        let instance = self.instance;
        if t > instance.horizon() {
            return Ok(0.0);
        }
        let key = self.indexer.index(t, occ, bud);
        if !self.memo[key].is_nan() {
            return Ok(self.memo[key]);
        }
        *self.nodes += 1;
        if *self.nodes > self.cap {
            return Err(Error::OracleLimits(format!(
                "node cap {} exceeded",
                self.cap
            )));
        }

        let mut best = self.value(sequence, t + 1, occ, bud)?;
        if let Some(v) = sequence[t - 1] {
            for &e in instance.edges_of_task(v) {
                let edge = instance.edge(e);
                let u = edge.machine;
                if occ[u] > t || !machine_alive(instance, bud, u) {
                    continue;
                }
                for l in 1..=instance.num_levels() {
                    let q = edge.accept_prob;
                    let mut accept_cont = 0.0;
                    for (d, pd) in instance.delay(l).iter() {
                        let mut occ_next = occ.to_vec();
                        occ_next[u] = (t + d).min(instance.horizon() + 1);
                        accept_cont += pd * self.value(sequence, t + 1, &occ_next, bud)?;
                    }
                    let mut candidate = q * (instance.reward(e, l) + accept_cont);
                    if q < 1.0 {
                        let reject_cont = if instance.budget(u).is_unlimited() {
                            self.value(sequence, t + 1, occ, bud)?
                        } else {
                            let mut bud_next = bud.to_vec();
                            bud_next[u] = bud_next[u].saturating_sub(instance.theta(l));
                            self.value(sequence, t + 1, occ, &bud_next)?
                        };
                        candidate += (1.0 - q) * reject_cont;
                    }
                    if candidate > best {
                        best = candidate;
                    }
                }
            }
        }
        self.memo[key] = best;
        Ok(best)
    }
}

/// Exact expected reward of a policy: forward expectation over the joint
/// chance tree (arrival × policy randomization × acceptance × delay),
/// memoized on (time, occupation, budgets). The policy supplies exact
/// per-state action distributions; artifacts such as tables travel inside
/// the policy object.
pub fn exact_policy_value(instance: &Instance, policy: &dyn Policy) -> Result<ExactValue> {
    let limits = TinyLimits::default();
    limits.check(instance)?;
    let indexer = StateIndexer::new(instance);
    let mut memo = vec![f64::NAN; indexer.size];
    let mut nodes = 0u64;
    let occ = vec![0usize; instance.num_machines()];
    let bud = initial_budgets(instance);
    let mut ctx = PolicyCtx {
        instance,
        policy,
        indexer: &indexer,
        memo: &mut memo,
        nodes: &mut nodes,
        cap: limits.node_cap,
    };
    let value = ctx.value(1, &occ, &bud)?;
    debug_assert!(value.is_finite() && value >= 0.0);
    Ok(ExactValue { value, nodes })
}

struct PolicyCtx<'a> {
    instance: &'a Instance,
    policy: &'a dyn Policy,
    indexer: &'a StateIndexer,
    memo: &'a mut Vec<f64>,
    nodes: &'a mut u64,
    cap: u64,
}

impl PolicyCtx<'_> {
    fn value(&mut self, t: usize, occ: &[usize], bud: &[u32]) -> Result<f64> {
        let instance = self.instance;
        if t > instance.horizon() {
            return Ok(0.0);
        }
        let key = self.indexer.index(t, occ, bud);
        if !self.memo[key].is_nan() {
            return Ok(self.memo[key]);
        }
        *self.nodes += 1;
        if *self.nodes > self.cap {
            return Err(Error::OracleLimits(format!(
                "node cap {} exceeded",
                self.cap
            )));
        }

        let residual = (1.0 - instance.arrival_mass(t)).max(0.0);
        let mut total = if residual > 0.0 {
            residual * self.value(t + 1, occ, bud)?
        } else {
            0.0
        };

        for v in 0..instance.num_tasks() {
            let p = instance.arrival(v, t);
            if p == 0.0 {
                continue;
            }
            let state = SimState {
                t,
                occupied_until: occ.to_vec(),
                remaining: budget_left(instance, bud),
            };
            let distribution = self.policy.action_distribution(instance, &state, v)?;
            let mass: f64 = distribution.iter().map(|&(_, w)| w).sum();
            if (mass - 1.0).abs() > 1e-6 {
                return Err(Error::Contract(format!(
                    "action distribution mass {mass} for task {v} at t={t}"
                )));
            }
            for (decision, weight) in distribution {
                if weight == 0.0 {
                    continue;
                }
                let contribution = match decision {
                    Decision::Discard => self.value(t + 1, occ, bud)?,
                    Decision::Assign {
                        machine,
                        level,
                        edge,
                    } => {
                        crate::sim::check_assignment(instance, &state, v, machine, level, edge)?;
                        let q = instance.edge(edge).accept_prob;
                        let mut accept_cont = 0.0;
                        for (d, pd) in instance.delay(level).iter() {
                            let mut occ_next = occ.to_vec();
                            occ_next[machine] = (t + d).min(instance.horizon() + 1);
                            accept_cont += pd * self.value(t + 1, &occ_next, bud)?;
                        }
                        let mut val = q * (instance.reward(edge, level) + accept_cont);
                        if q < 1.0 {
                            let reject_cont = if instance.budget(machine).is_unlimited() {
                                self.value(t + 1, occ, bud)?
                            } else {
                                let mut bud_next = bud.to_vec();
                                bud_next[machine] =
                                    bud_next[machine].saturating_sub(instance.theta(level));
                                self.value(t + 1, occ, &bud_next)?
                            };
                            val += (1.0 - q) * reject_cont;
                        }
                        val
                    }
                };
                total += p * weight * contribution;
            }
        }
        self.memo[key] = total;
        Ok(total)
    }
}

fn budget_left(instance: &Instance, bud: &[u32]) -> Vec<BudgetLeft> {
    instance
        .machines()
        .iter()
        .enumerate()
        .map(|(u, m)| match m.budget {
            Budget::Finite(_) => BudgetLeft::Finite(bud[u] as i64),
            Budget::Unlimited => BudgetLeft::Unlimited,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp;
    use crate::model::{DelayDist, Edge, InstanceParts, MachineSpec, TaskSpec};
    use crate::policies::{build_policy, OmlaPolicy, PolicyName, RandomPolicy};
    use crate::sim::Substream;
    use crate::tables;

    fn tiny_config(seed: u64) -> crate::gen::SyntheticConfig {
        crate::gen::SyntheticConfig {
            num_machines: 2,
            num_tasks: 3,
            horizon: 3,
            num_levels: 2,
            edge_prob: 0.7,
            budget_cap: Some(2),
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn single_slot_optimum_is_expected_reward() {
        let instance = Instance::from_parts(InstanceParts {
            horizon: 1,
            machines: vec![MachineSpec {
                id: 0,
                budget: Budget::Finite(1),
            }],
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
            arrivals: vec![vec![1.0]],
            delays: vec![DelayDist::new(vec![1.0])],
        })
        .unwrap();
        let opt = exact_opt(&instance).unwrap();
        assert!((opt.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn no_arrivals_value_is_zero() {
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
                accept_prob: 0.5,
            }],
            levels: 1,
            rewards: vec![vec![4.0]],
            theta: vec![1],
            arrivals: vec![vec![0.0; 3]],
            delays: vec![DelayDist::new(vec![1.0])],
        })
        .unwrap();
        assert_eq!(exact_opt(&instance).unwrap().value, 0.0);
        assert_eq!(
            exact_policy_value(&instance, &RandomPolicy).unwrap().value,
            0.0
        );
    }

    #[test]
    fn spike_instance_optimum_matches_closed_form() {
        for eps in [0.1, 0.3] {
            let instance = crate::gen::hardness(eps).unwrap();
            let opt = exact_opt(&instance).unwrap();
            assert!(
                (opt.value - (2.0 - eps)).abs() < 1e-12,
                "eps={eps}: got {}",
                opt.value
            );
        }
    }

    struct AlwaysFirst;
    impl Policy for AlwaysFirst {
        fn name(&self) -> &str {
            "always-first"
        }
        fn decide(
            &self,
            instance: &Instance,
            state: &SimState,
            v: TaskId,
            _rng: &mut Substream,
        ) -> crate::Result<Decision> {
            Ok(self.action_distribution(instance, state, v)?.remove(0).0)
        }
        fn action_distribution(
            &self,
            instance: &Instance,
            state: &SimState,
            v: TaskId,
        ) -> crate::Result<Vec<(Decision, f64)>> {
            let decision = if v == 0 && state.available(0) && state.alive(0) {
                Decision::Assign {
                    machine: 0,
                    level: 1,
                    edge: instance.edges_of_task(0)[0],
                }
            } else {
                Decision::Discard
            };
            Ok(vec![(decision, 1.0)])
        }
    }

    #[test]
    fn committing_to_the_spike_earns_exactly_one() {
        let instance = crate::gen::hardness(0.1).unwrap();
        let value = exact_policy_value(&instance, &AlwaysFirst).unwrap();
        assert!((value.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn omla_tree_value_matches_hand_recursion() {
        let (instance, solution) = tables::tests::half_half_instance(Budget::Finite(1));
        let policy = OmlaPolicy::from_solution("omla", &instance, solution).unwrap();
        let value = exact_policy_value(&instance, &policy).unwrap();
        assert!((value.value - 1.75).abs() < 1e-12, "got {}", value.value);
        assert!((value.value - policy.expected_value(&instance)).abs() < 1e-12);
    }

    #[test]
    fn omla_tree_value_matches_tables_across_seeds() {
        for seed in 1..=6 {
            let instance = crate::gen::synthetic(&tiny_config(seed)).unwrap();
            let policy = OmlaPolicy::new(&instance, lp::DEFAULT_TOL).unwrap();
            let expected = policy.expected_value(&instance);
            let exact = exact_policy_value(&instance, &policy).unwrap().value;
            let scale = expected.abs().max(1.0);
            assert!(
                (exact - expected).abs() <= 1e-9 * scale,
                "seed {seed}: tree {exact} vs tables {expected}"
            );
        }
    }

    #[test]
    fn optimum_dominates_every_policy() {
        for seed in [3, 8] {
            let instance = crate::gen::synthetic(&tiny_config(seed)).unwrap();
            let opt = exact_opt(&instance).unwrap().value;
            for name in PolicyName::ALL {
                let policy = build_policy(&instance, name, lp::DEFAULT_TOL).unwrap();
                let value = exact_policy_value(&instance, policy.as_ref())
                    .unwrap()
                    .value;
                assert!(
                    value <= opt + 1e-9,
                    "seed {seed}: {} value {value} beats optimum {opt}",
                    policy.name()
                );
            }
        }
    }

    #[test]
    fn relaxation_upper_bounds_optimum() {
        for seed in 1..=8 {
            let instance = crate::gen::synthetic(&tiny_config(seed)).unwrap();
            let (_, solution) = lp::solve_off(&instance, lp::DEFAULT_TOL).unwrap();
            let opt = exact_opt(&instance).unwrap().value;
            assert!(
                solution.objective >= opt - 1e-6,
                "seed {seed}: relaxation {} below optimum {opt}",
                solution.objective
            );
        }
    }

    #[test]
    fn oversize_instances_are_rejected() {
        let config = crate::gen::SyntheticConfig {
            num_machines: 2,
            num_tasks: 3,
            horizon: 30,
            num_levels: 2,
            edge_prob: 0.7,
            budget_cap: Some(2),
            seed: 1,
            ..Default::default()
        };
        let instance = crate::gen::synthetic(&config).unwrap();
        assert!(matches!(exact_opt(&instance), Err(Error::OracleLimits(_))));
        assert!(matches!(
            exact_policy_value(&instance, &RandomPolicy),
            Err(Error::OracleLimits(_))
        ));
    }
}
