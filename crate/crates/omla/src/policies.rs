//! Online decision rules: the LP-guided sampling policy (OMLA) and the five
//! benchmark policies it is compared against.
//!
//! Policies are stateless: all episode state lives in [`SimState`], all
//! precomputed artifacts (LP solution, value tables) live inside the policy
//! struct and are shared read-only. Every policy exposes both a sampled
//! decision (`decide`) and its exact per-state action distribution
//! (`action_distribution`), which the exact evaluators consume.

use crate::lp::{self, LpSolution};
use crate::model::{Budget, EdgeId, Instance, MachineId, TaskId};
use crate::sim::Substream;
use crate::tables::{self, Tables};
use crate::{Error, Result};

/// Remaining rejection budget of one machine during an episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BudgetLeft {
    Finite(i64),
    Unlimited,
}

/// Mutable per-episode state: the clock and each machine's occupancy and
/// remaining budget. A machine is available iff `t >= occupied_until[u]`
/// and alive iff its budget is positive (unlimited budgets never die).
#[derive(Clone, Debug)]
pub struct SimState {
    pub t: usize,
    pub occupied_until: Vec<usize>,
    pub remaining: Vec<BudgetLeft>,
}

impl SimState {
    pub fn new(instance: &Instance) -> Self {
        SimState {
            t: 1,
            occupied_until: vec![0; instance.num_machines()],
            remaining: instance
                .machines()
                .iter()
                .map(|m| match m.budget {
                    Budget::Finite(d) => BudgetLeft::Finite(d as i64),
                    Budget::Unlimited => BudgetLeft::Unlimited,
                })
                .collect(),
        }
    }

    pub fn available(&self, u: MachineId) -> bool {
        self.t >= self.occupied_until[u]
    }

    pub fn alive(&self, u: MachineId) -> bool {
        match self.remaining[u] {
            BudgetLeft::Finite(d) => d > 0,
            BudgetLeft::Unlimited => true,
        }
    }

    /// Apply a rejection penalty; true when the machine just died.
    pub fn register_rejection(&mut self, u: MachineId, theta: u32) -> bool {
        match &mut self.remaining[u] {
            BudgetLeft::Finite(d) => {
                *d -= theta as i64;
                *d <= 0
            }
            BudgetLeft::Unlimited => false,
        }
    }
}

/// One policy answer for one arrival.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Decision {
    Discard,
    Assign {
        machine: MachineId,
        level: usize,
        edge: EdgeId,
    },
}

/// A named online decision rule. Implementations never consult future
/// arrivals and are deterministic given the randomness substream.
pub trait Policy: Send + Sync {
    fn name(&self) -> &str;

    fn decide(
        &self,
        instance: &Instance,
        state: &SimState,
        v: TaskId,
        rng: &mut Substream,
    ) -> Result<Decision>;

    /// Exact action distribution at this state; probabilities sum to 1.
    fn action_distribution(
        &self,
        instance: &Instance,
        state: &SimState,
        v: TaskId,
    ) -> Result<Vec<(Decision, f64)>>;
}

/// The six stable CLI policy names.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyName {
    Omla,
    Random,
    UtilityGreedy,
    EfficiencyGreedy,
    UtilityGreedyPlus,
    EfficiencyGreedyPlus,
}

impl PolicyName {
    pub const ALL: [PolicyName; 6] = [
        PolicyName::Omla,
        PolicyName::Random,
        PolicyName::UtilityGreedy,
        PolicyName::EfficiencyGreedy,
        PolicyName::UtilityGreedyPlus,
        PolicyName::EfficiencyGreedyPlus,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyName::Omla => "omla",
            PolicyName::Random => "random",
            PolicyName::UtilityGreedy => "ug",
            PolicyName::EfficiencyGreedy => "eg",
            PolicyName::UtilityGreedyPlus => "ug+",
            PolicyName::EfficiencyGreedyPlus => "eg+",
        }
    }
}

impl std::str::FromStr for PolicyName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "omla" => Ok(PolicyName::Omla),
            "random" => Ok(PolicyName::Random),
            "ug" => Ok(PolicyName::UtilityGreedy),
            "eg" => Ok(PolicyName::EfficiencyGreedy),
            "ug+" => Ok(PolicyName::UtilityGreedyPlus),
            "eg+" => Ok(PolicyName::EfficiencyGreedyPlus),
            other => Err(Error::InvalidArgument(format!(
                "unknown policy {other:?}; expected omla, random, ug, eg, ug+ or eg+"
            ))),
        }
    }
}

impl std::fmt::Display for PolicyName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Build a ready-to-run policy, solving whatever LPs it needs.
pub fn build_policy(instance: &Instance, name: PolicyName, tol: f64) -> Result<Box<dyn Policy>> {
    Ok(match name {
        PolicyName::Omla => Box::new(OmlaPolicy::new(instance, tol)?),
        PolicyName::Random => Box::new(RandomPolicy),
        PolicyName::UtilityGreedy => Box::new(GreedyPolicy::utility(instance)),
        PolicyName::EfficiencyGreedy => Box::new(GreedyPolicy::efficiency(instance)),
        PolicyName::UtilityGreedyPlus => Box::new(OmlaPolicy::utility_collapsed(instance, tol)?),
        PolicyName::EfficiencyGreedyPlus => {
            Box::new(OmlaPolicy::efficiency_collapsed(instance, tol)?)
        }
    })
}

/// Sample one `(e,l)` pair with probability `x*_{e,l,t} / p_{v,t}` (the
/// residual maps to Discard), then gate on machine state and on the
/// activation value: assign iff the machine is available, alive, and
/// `Q >= R_{u,t+1}` (ties assign). Hard error when `p_{v,t} = 0`: an
/// arrival there means the arrival sampler is inconsistent.
pub fn omla_decide(
    instance: &Instance,
    state: &SimState,
    v: TaskId,
    tables: &Tables,
    solution: &LpSolution,
    rng: &mut Substream,
) -> Result<Decision> {
    let p = arrival_prob(instance, state, v)?;
    let draw = rng.uniform();
    let mut cum = 0.0;
    for &e in instance.edges_of_task(v) {
        for l in 1..=instance.num_levels() {
            cum += solution.x(e, l, state.t) / p;
            if draw < cum {
                return omla_gate(instance, state, e, l, tables);
            }
        }
    }
    Ok(Decision::Discard)
}

fn arrival_prob(instance: &Instance, state: &SimState, v: TaskId) -> Result<f64> {
    let p = instance.arrival(v, state.t);
    if p == 0.0 {
        return Err(Error::Contract(format!(
            "task {v} arrived at t={} where p_v,t = 0; arrival sampler is inconsistent",
            state.t
        )));
    }
    Ok(p)
}

/// The assign-or-discard gate applied to a sampled pair. Exact comparison,
/// no epsilon: both values come from the same table computation.
fn omla_gate(
    instance: &Instance,
    state: &SimState,
    e: EdgeId,
    l: usize,
    tables: &Tables,
) -> Result<Decision> {
    let u = instance.edge(e).machine;
    if !state.available(u) || !state.alive(u) {
        return Ok(Decision::Discard);
    }
    let (activation, baseline) = match (tables, state.remaining[u]) {
        (Tables::Limited(t), BudgetLeft::Finite(delta)) => {
            (t.q(delta, e, l, state.t), t.r(delta, u, state.t + 1))
        }
        (Tables::Unlimited(t), BudgetLeft::Unlimited) => (t.q(e, l, state.t), t.r(u, state.t + 1)),
        _ => {
            return Err(Error::Contract(
                "value tables do not match the machine's budget regime".to_string(),
            ))
        }
    };
    if activation >= baseline {
        Ok(Decision::Assign {
            machine: u,
            level: l,
            edge: e,
        })
    } else {
        Ok(Decision::Discard)
    }
}

/// Exact action distribution of the OMLA rule at one state.
fn omla_distribution(
    instance: &Instance,
    state: &SimState,
    v: TaskId,
    tables: &Tables,
    solution: &LpSolution,
) -> Result<Vec<(Decision, f64)>> {
    let p = arrival_prob(instance, state, v)?;
    let mut dist = DistributionBuilder::new();
    let mut mass = 0.0;
    for &e in instance.edges_of_task(v) {
        for l in 1..=instance.num_levels() {
            let w = solution.x(e, l, state.t) / p;
            if w > 0.0 {
                dist.add(omla_gate(instance, state, e, l, tables)?, w);
                mass += w;
            }
        }
    }
    if mass > 1.0 + 1e-6 {
        return Err(Error::Contract(format!(
            "sampling mass {mass} exceeds 1 at (v={v}, t={}); x* is not feasible",
            state.t
        )));
    }
    dist.add(Decision::Discard, (1.0 - mass).max(0.0));
    Ok(dist.finish())
}

/// Merges equal decisions, preserving first-seen order.
struct DistributionBuilder {
    entries: Vec<(Decision, f64)>,
}

impl DistributionBuilder {
    fn new() -> Self {
        DistributionBuilder {
            entries: Vec::new(),
        }
    }

    fn add(&mut self, decision: Decision, prob: f64) {
        if prob == 0.0 {
            return;
        }
        match self.entries.iter_mut().find(|(d, _)| *d == decision) {
            Some((_, p)) => *p += prob,
            None => self.entries.push((decision, prob)),
        }
    }

    fn finish(self) -> Vec<(Decision, f64)> {
        self.entries
    }
}

/// OMLA proper, and its level-collapsed variants used as the UG+/EG+
/// machine-selection rule.
pub struct OmlaPolicy {
    label: &'static str,
    solution: LpSolution,
    tables: Tables,
}

impl OmlaPolicy {
    /// The headline policy: full LP, full tables.
    pub fn new(instance: &Instance, tol: f64) -> Result<Self> {
        let (_, solution) = lp::solve_off(instance, tol)?;
        Self::from_solution("omla", instance, solution)
    }

    pub fn from_solution(
        label: &'static str,
        instance: &Instance,
        solution: LpSolution,
    ) -> Result<Self> {
        let tables = tables::compute_for(instance, &solution)?;
        Ok(OmlaPolicy {
            label,
            solution,
            tables,
        })
    }

    /// UG+: each edge keeps only its highest-reward level; the LP is
    /// re-solved with the other columns pinned to zero, so sampling can
    /// only propose the kept level and the machine choice follows the
    /// single-level rule.
    pub fn utility_collapsed(instance: &Instance, tol: f64) -> Result<Self> {
        Self::collapsed("ug+", instance, tol, level_choice_utility(instance))
    }

    /// EG+: as UG+ with the reward-per-expected-delay level.
    pub fn efficiency_collapsed(instance: &Instance, tol: f64) -> Result<Self> {
        Self::collapsed("eg+", instance, tol, level_choice_efficiency(instance))
    }

    fn collapsed(
        label: &'static str,
        instance: &Instance,
        tol: f64,
        choice: Vec<usize>,
    ) -> Result<Self> {
        let problem = lp::build_off_level_choice(instance, &choice)?;
        let solution = lp::solve(&problem, tol)?;
        if solution.status != lp::LpStatus::Optimal {
            return Err(Error::Lp(format!(
                "level-collapsed LP reported {:?} for a valid instance",
                solution.status
            )));
        }
        Self::from_solution(label, instance, solution)
    }

    pub fn solution(&self) -> &LpSolution {
        &self.solution
    }

    pub fn tables(&self) -> &Tables {
        &self.tables
    }

    /// `sum_u R^{Delta_u}_{u,1}`: this policy's exact expected reward.
    pub fn expected_value(&self, instance: &Instance) -> f64 {
        self.tables.initial_value(instance)
    }
}

impl Policy for OmlaPolicy {
    fn name(&self) -> &str {
        self.label
    }

    fn decide(
        &self,
        instance: &Instance,
        state: &SimState,
        v: TaskId,
        rng: &mut Substream,
    ) -> Result<Decision> {
        omla_decide(instance, state, v, &self.tables, &self.solution, rng)
    }

    fn action_distribution(
        &self,
        instance: &Instance,
        state: &SimState,
        v: TaskId,
    ) -> Result<Vec<(Decision, f64)>> {
        omla_distribution(instance, state, v, &self.tables, &self.solution)
    }
}

/// Per-edge level maximizing the reward; ties take the lowest level.
pub fn level_choice_utility(instance: &Instance) -> Vec<usize> {
    (0..instance.num_edges())
        .map(|e| best_level(instance, e, |r, _| r))
        .collect()
}

/// Per-edge level maximizing reward per expected delay slot.
pub fn level_choice_efficiency(instance: &Instance) -> Vec<usize> {
    (0..instance.num_edges())
        .map(|e| best_level(instance, e, |r, ed| r / ed))
        .collect()
}

fn best_level(instance: &Instance, e: EdgeId, key: impl Fn(f64, f64) -> f64) -> usize {
    let mut best = 1;
    let mut best_key = f64::NEG_INFINITY;
    for l in 1..=instance.num_levels() {
        let k = key(
            instance.reward(e, l),
            crate::model::expected_delay(instance.delay(l)),
        );
        if k > best_key {
            best_key = k;
            best = l;
        }
    }
    best
}

/// Uniform pair sampling: pick `(u,l)` uniformly over `E_v x L` before
/// looking at machine state; an unavailable or dead draw is a Discard, not
/// a resample.
pub struct RandomPolicy;

pub fn random_decide(
    instance: &Instance,
    state: &SimState,
    v: TaskId,
    rng: &mut Substream,
) -> Result<Decision> {
    let edges = instance.edges_of_task(v);
    let levels = instance.num_levels();
    let count = edges.len() * levels;
    if count == 0 {
        return Ok(Decision::Discard);
    }
    let idx = rng.below(count);
    let e = edges[idx / levels];
    let l = idx % levels + 1;
    Ok(availability_gate(instance, state, e, l))
}

fn availability_gate(instance: &Instance, state: &SimState, e: EdgeId, l: usize) -> Decision {
    let u = instance.edge(e).machine;
    if state.available(u) && state.alive(u) {
        Decision::Assign {
            machine: u,
            level: l,
            edge: e,
        }
    } else {
        Decision::Discard
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn decide(
        &self,
        instance: &Instance,
        state: &SimState,
        v: TaskId,
        rng: &mut Substream,
    ) -> Result<Decision> {
        random_decide(instance, state, v, rng)
    }

    fn action_distribution(
        &self,
        instance: &Instance,
        state: &SimState,
        v: TaskId,
    ) -> Result<Vec<(Decision, f64)>> {
        let edges = instance.edges_of_task(v);
        let levels = instance.num_levels();
        let count = edges.len() * levels;
        if count == 0 {
            return Ok(vec![(Decision::Discard, 1.0)]);
        }
        let w = 1.0 / count as f64;
        let mut dist = DistributionBuilder::new();
        for &e in edges {
            for l in 1..=levels {
                dist.add(availability_gate(instance, state, e, l), w);
            }
        }
        Ok(dist.finish())
    }
}

/// Ranking key for the greedy benchmarks.
#[derive(Clone, Copy, Debug)]
enum GreedyKey {
    /// `r_{u,v,l}`
    Utility,
    /// `r_{u,v,l} / E[d_l]`
    Efficiency,
}

/// Deterministic top-of-ranking assignment over the available alive pairs;
/// ties break to the lowest machine id, then the lowest level.
pub struct GreedyPolicy {
    key: GreedyKey,
    expected_delays: Vec<f64>,
}

impl GreedyPolicy {
    pub fn utility(instance: &Instance) -> Self {
        Self::with_key(instance, GreedyKey::Utility)
    }

    pub fn efficiency(instance: &Instance) -> Self {
        Self::with_key(instance, GreedyKey::Efficiency)
    }

    fn with_key(instance: &Instance, key: GreedyKey) -> Self {
        GreedyPolicy {
            key,
            expected_delays: (1..=instance.num_levels())
                .map(|l| crate::model::expected_delay(instance.delay(l)))
                .collect(),
        }
    }

    fn pick(&self, instance: &Instance, state: &SimState, v: TaskId) -> Decision {
        let mut best: Option<(f64, MachineId, usize, EdgeId)> = None;
        for &e in instance.edges_of_task(v) {
            let u = instance.edge(e).machine;
            if !state.available(u) || !state.alive(u) {
                continue;
            }
            for l in 1..=instance.num_levels() {
                let k = match self.key {
                    GreedyKey::Utility => instance.reward(e, l),
                    GreedyKey::Efficiency => instance.reward(e, l) / self.expected_delays[l - 1],
                };
                let better = match best {
                    None => true,
                    Some((bk, bu, bl, _)) => k > bk || (k == bk && (u, l) < (bu, bl)),
                };
                if better {
                    best = Some((k, u, l, e));
                }
            }
        }
        match best {
            Some((_, machine, level, edge)) => Decision::Assign {
                machine,
                level,
                edge,
            },
            None => Decision::Discard,
        }
    }
}

impl Policy for GreedyPolicy {
    fn name(&self) -> &str {
        match self.key {
            GreedyKey::Utility => "ug",
            GreedyKey::Efficiency => "eg",
        }
    }

    fn decide(
        &self,
        instance: &Instance,
        state: &SimState,
        v: TaskId,
        _rng: &mut Substream,
    ) -> Result<Decision> {
        Ok(self.pick(instance, state, v))
    }

    fn action_distribution(
        &self,
        instance: &Instance,
        state: &SimState,
        v: TaskId,
    ) -> Result<Vec<(Decision, f64)>> {
        Ok(vec![(self.pick(instance, state, v), 1.0)])
    }
}
