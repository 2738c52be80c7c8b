//! Problem instances: the bipartite graph of machines and tasks, processing
//! levels with rewards and delay distributions, rejection budgets, and the
//! time-indexed arrival probabilities.
//!
//! Time slots are 1-based (`t` in `1..=T`) and so are levels (`l` in
//! `1..=L`); machine, task, and edge ids are dense 0-based indices.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type MachineId = usize;
pub type TaskId = usize;
pub type EdgeId = usize;

/// Absolute tolerance when validating a single probability value.
pub const PROB_TOL: f64 = 1e-9;
/// Absolute tolerance when validating probability sums.
pub const SUM_TOL: f64 = 1e-12;

/// Initial rejection budget of a machine. `Unlimited` is a sentinel, never a
/// large integer; downstream code branches on it explicitly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Budget {
    Finite(u32),
    Unlimited,
}

impl Budget {
    pub fn is_unlimited(self) -> bool {
        matches!(self, Budget::Unlimited)
    }

    pub fn finite(self) -> Option<u32> {
        match self {
            Budget::Finite(b) => Some(b),
            Budget::Unlimited => None,
        }
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Finite(b) => write!(f, "{b}"),
            Budget::Unlimited => write!(f, "inf"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MachineSpec {
    pub id: MachineId,
    pub budget: Budget,
}

#[derive(Clone, Debug)]
pub struct TaskSpec {
    pub id: TaskId,
}

#[derive(Clone, Debug)]
pub struct Edge {
    pub id: EdgeId,
    pub machine: MachineId,
    pub task: TaskId,
    pub accept_prob: f64,
}

/// Distribution of the processing delay for one level.
///
/// The support starts at 1: a machine that accepts at `t` is occupied at
/// least through slot `t` and returns at `t + d`. `tail(k)` is `Pr{d >= k}`,
/// precomputed by suffix summation.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayDist {
    pmf: Vec<f64>,  // pmf[i] = Pr{d = i + 1}
    tail: Vec<f64>, // tail[i] = Pr{d >= i + 1}
}

impl DelayDist {
    /// Build from `pmf[i] = Pr{d = i + 1}`. Trailing zero mass is trimmed;
    /// the mass itself is kept as given (see [`Instance::validate`]).
    pub fn new(mut pmf: Vec<f64>) -> Self {
        while pmf.last() == Some(&0.0) {
            pmf.pop();
        }
        let mut tail = vec![0.0; pmf.len()];
        let mut acc = 0.0;
        for i in (0..pmf.len()).rev() {
            acc += pmf[i];
            tail[i] = acc;
        }
        DelayDist { pmf, tail }
    }

    /// Build from nonnegative weights on `d = 1, 2, ...`, normalized to sum 1.
    pub fn from_weights(weights: Vec<f64>) -> Self {
        let total: f64 = weights.iter().sum();
        assert!(total > 0.0, "delay weights must have positive mass");
        DelayDist::new(weights.into_iter().map(|w| w / total).collect())
    }

    /// Build from a `d -> probability` map. Mass at `d = 0` is clamped into
    /// `d = 1`, keeping total mass; the recursions assume `d >= 1`.
    pub fn from_map(map: &BTreeMap<u32, f64>) -> Result<Self> {
        let max_d = map.keys().copied().max().unwrap_or(0);
        if max_d == 0 && !map.is_empty() {
            return Err(Error::Instance(
                "delay pmf has mass only at d=0".to_string(),
            ));
        }
        if map.is_empty() {
            return Err(Error::Instance("empty delay pmf".to_string()));
        }
        let mut pmf = vec![0.0; max_d as usize];
        for (&d, &p) in map {
            let slot = if d == 0 { 1 } else { d } as usize;
            pmf[slot - 1] += p;
        }
        Ok(DelayDist::new(pmf))
    }

    /// `Pr{d = k}`; zero outside the support.
    pub fn pmf(&self, k: usize) -> f64 {
        if k == 0 || k > self.pmf.len() {
            0.0
        } else {
            self.pmf[k - 1]
        }
    }

    /// `Pr{d >= k}`; `tail(0) = tail(1) = 1` for a proper distribution and
    /// zero beyond the support.
    pub fn tail(&self, k: usize) -> f64 {
        if k <= 1 {
            self.tail.first().copied().unwrap_or(0.0)
        } else if k > self.tail.len() {
            0.0
        } else {
            self.tail[k - 1]
        }
    }

    /// Largest delay with positive recorded mass.
    pub fn support_max(&self) -> usize {
        self.pmf.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.pmf.iter().enumerate().map(|(i, &p)| (i + 1, p))
    }

    pub fn total_mass(&self) -> f64 {
        self.tail.first().copied().unwrap_or(0.0)
    }
}

/// `E[d] = sum_d d * Pr{d}`.
pub fn expected_delay(dist: &DelayDist) -> f64 {
    dist.iter().map(|(d, p)| d as f64 * p).sum()
}

/// All raw data needed to build an [`Instance`]. Structural checks (array
/// dimensions, id density, index ranges) happen in [`Instance::from_parts`];
/// semantic invariants are reported by [`Instance::validate`].
#[derive(Clone, Debug)]
pub struct InstanceParts {
    pub horizon: usize,
    pub machines: Vec<MachineSpec>,
    pub tasks: Vec<TaskSpec>,
    pub edges: Vec<Edge>,
    pub levels: usize,
    /// `rewards[e][l-1] = r_{u,v,l}` for edge `e = (u,v)`.
    pub rewards: Vec<Vec<f64>>,
    /// `theta[l-1]`, the rejection penalty of level `l`.
    pub theta: Vec<u32>,
    /// `arrivals[v][t-1] = p_{v,t}`, task-major.
    pub arrivals: Vec<Vec<f64>>,
    /// `delays[l-1] = D_l`.
    pub delays: Vec<DelayDist>,
}

/// A complete problem datum. Immutable after construction; safe to share
/// read-only across workers.
#[derive(Clone, Debug)]
pub struct Instance {
    horizon: usize,
    machines: Vec<MachineSpec>,
    tasks: Vec<TaskSpec>,
    edges: Vec<Edge>,
    levels: usize,
    rewards: Vec<Vec<f64>>,
    theta: Vec<u32>,
    theta_max: u32,
    arrivals: Vec<Vec<f64>>,
    delays: Vec<DelayDist>,
    edges_of_machine: Vec<Vec<EdgeId>>,
    edges_of_task: Vec<Vec<EdgeId>>,
}

impl Instance {
    pub fn from_parts(parts: InstanceParts) -> Result<Self> {
        let InstanceParts {
            horizon,
            machines,
            tasks,
            edges,
            levels,
            rewards,
            theta,
            arrivals,
            delays,
        } = parts;
        let err = |msg: String| Err(Error::Instance(msg));
        if horizon == 0 {
            return err("horizon T must be positive".into());
        }
        if levels == 0 {
            return err("level count L must be positive".into());
        }
        if machines.is_empty() {
            return err("no machines".into());
        }
        if tasks.is_empty() {
            return err("no tasks".into());
        }
        for (i, m) in machines.iter().enumerate() {
            if m.id != i {
                return err(format!(
                    "machine ids must be dense 0..|U|-1, got {} at {i}",
                    m.id
                ));
            }
        }
        for (i, v) in tasks.iter().enumerate() {
            if v.id != i {
                return err(format!(
                    "task ids must be dense 0..|V|-1, got {} at {i}",
                    v.id
                ));
            }
        }
        for (i, e) in edges.iter().enumerate() {
            if e.id != i {
                return err(format!(
                    "edge ids must be dense 0..|E|-1, got {} at {i}",
                    e.id
                ));
            }
            if e.machine >= machines.len() {
                return err(format!("edge {i} references unknown machine {}", e.machine));
            }
            if e.task >= tasks.len() {
                return err(format!("edge {i} references unknown task {}", e.task));
            }
        }
        if rewards.len() != edges.len() {
            return err(format!(
                "rewards for {} edges, expected {}",
                rewards.len(),
                edges.len()
            ));
        }
        if let Some((e, r)) = rewards.iter().enumerate().find(|(_, r)| r.len() != levels) {
            return err(format!(
                "edge {e} has {} reward levels, expected {levels}",
                r.len()
            ));
        }
        if theta.len() != levels {
            return err(format!("{} penalties, expected {levels}", theta.len()));
        }
        if arrivals.len() != tasks.len() {
            return err(format!(
                "arrival rows for {} tasks, expected {}",
                arrivals.len(),
                tasks.len()
            ));
        }
        if let Some((v, row)) = arrivals
            .iter()
            .enumerate()
            .find(|(_, row)| row.len() != horizon)
        {
            return err(format!(
                "task {v} has {} arrival slots, expected {horizon}",
                row.len()
            ));
        }
        if delays.len() != levels {
            return err(format!(
                "{} delay distributions, expected {levels}",
                delays.len()
            ));
        }

        let mut edges_of_machine = vec![Vec::new(); machines.len()];
        let mut edges_of_task = vec![Vec::new(); tasks.len()];
        for e in &edges {
            edges_of_machine[e.machine].push(e.id);
            edges_of_task[e.task].push(e.id);
        }
        let theta_max = theta.iter().copied().max().unwrap_or(1);
        Ok(Instance {
            horizon,
            machines,
            tasks,
            edges,
            levels,
            rewards,
            theta,
            theta_max,
            arrivals,
            delays,
            edges_of_machine,
            edges_of_task,
        })
    }

    /// Clone the instance back into its assembly form, e.g. to rebuild a
    /// variant with different budgets.
    pub fn to_parts(&self) -> InstanceParts {
        InstanceParts {
            horizon: self.horizon,
            machines: self.machines.clone(),
            tasks: self.tasks.clone(),
            edges: self.edges.clone(),
            levels: self.levels,
            rewards: self.rewards.clone(),
            theta: self.theta.clone(),
            arrivals: self.arrivals.clone(),
            delays: self.delays.clone(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_levels(&self) -> usize {
        self.levels
    }

    pub fn machines(&self) -> &[MachineSpec] {
        &self.machines
    }

    pub fn num_machines(&self) -> usize {
        self.machines.len()
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, e: EdgeId) -> &Edge {
        &self.edges[e]
    }

    /// Edge ids incident to machine `u` (the set `E_u`).
    pub fn edges_of_machine(&self, u: MachineId) -> &[EdgeId] {
        &self.edges_of_machine[u]
    }

    /// Edge ids incident to task `v` (the set `E_v`).
    pub fn edges_of_task(&self, v: TaskId) -> &[EdgeId] {
        &self.edges_of_task[v]
    }

    /// `r_{u,v,l}` for edge `e = (u,v)`; `l` is 1-based.
    pub fn reward(&self, e: EdgeId, l: usize) -> f64 {
        self.rewards[e][l - 1]
    }

    /// `theta_l`; `l` is 1-based.
    pub fn theta(&self, l: usize) -> u32 {
        self.theta[l - 1]
    }

    /// `theta = max_l theta_l`.
    pub fn theta_max(&self) -> u32 {
        self.theta_max
    }

    /// `p_{v,t}`; `t` is 1-based.
    pub fn arrival(&self, v: TaskId, t: usize) -> f64 {
        self.arrivals[v][t - 1]
    }

    /// `sum_v p_{v,t}`.
    pub fn arrival_mass(&self, t: usize) -> f64 {
        self.arrivals.iter().map(|row| row[t - 1]).sum()
    }

    /// `D_l`; `l` is 1-based.
    pub fn delay(&self, l: usize) -> &DelayDist {
        &self.delays[l - 1]
    }

    pub fn budget(&self, u: MachineId) -> Budget {
        self.machines[u].budget
    }

    /// True when every machine has a finite budget.
    pub fn all_finite_budgets(&self) -> bool {
        self.machines.iter().all(|m| !m.budget.is_unlimited())
    }

    /// True when every machine has an unlimited budget.
    pub fn all_unlimited_budgets(&self) -> bool {
        self.machines.iter().all(|m| m.budget.is_unlimited())
    }

    /// Largest finite initial budget, if any machine has one.
    pub fn max_finite_budget(&self) -> Option<u32> {
        self.machines.iter().filter_map(|m| m.budget.finite()).max()
    }

    /// Check every semantic invariant and report the violations.
    /// Side-effect free and idempotent.
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();

        let mut seen = std::collections::BTreeSet::new();
        for e in &self.edges {
            if !seen.insert((e.machine, e.task)) {
                v.push(format!(
                    "duplicate edge for machine {} task {}",
                    e.machine, e.task
                ));
            }
            if !(-PROB_TOL..=1.0 + PROB_TOL).contains(&e.accept_prob) {
                v.push(format!(
                    "edge {}: acceptance probability {} outside [0,1]",
                    e.id, e.accept_prob
                ));
            }
        }

        for (e, row) in self.rewards.iter().enumerate() {
            for (i, &r) in row.iter().enumerate() {
                if !r.is_finite() || r < 0.0 {
                    v.push(format!(
                        "edge {e}: reward at level {} is {r}, expected nonnegative",
                        i + 1
                    ));
                }
            }
            for l in 1..self.levels {
                if row[l - 1] >= row[l] {
                    v.push(format!(
                        "edge {e}: rewards not increasing in level ({} at l={} vs {} at l={})",
                        row[l - 1],
                        l,
                        row[l],
                        l + 1
                    ));
                }
            }
        }

        for (i, th) in self.theta.iter().enumerate() {
            if *th < 1 {
                v.push(format!("penalty theta_{} must be >= 1", i + 1));
            }
        }
        for m in &self.machines {
            if m.budget == Budget::Finite(0) {
                v.push(format!("machine {}: initial budget must be positive", m.id));
            }
        }

        for (l, d) in self.delays.iter().enumerate() {
            let mass = d.total_mass();
            if (mass - 1.0).abs() > SUM_TOL {
                v.push(format!(
                    "delay distribution for level {}: mass {} != 1",
                    l + 1,
                    mass
                ));
            }
            if d.support_max() == 0 {
                v.push(format!("delay distribution for level {} is empty", l + 1));
            }
            if d.iter()
                .any(|(_, p)| !(-PROB_TOL..=1.0 + PROB_TOL).contains(&p))
            {
                v.push(format!(
                    "delay distribution for level {} has values outside [0,1]",
                    l + 1
                ));
            }
        }
        for l in 1..self.levels {
            let (lo, hi) = (
                expected_delay(&self.delays[l - 1]),
                expected_delay(&self.delays[l]),
            );
            if lo >= hi {
                v.push(format!(
                    "expected delays not increasing in level (E[d_{}]={lo} vs E[d_{}]={hi})",
                    l,
                    l + 1
                ));
            }
        }

        for t in 1..=self.horizon {
            let mass = self.arrival_mass(t);
            if mass > 1.0 + SUM_TOL {
                v.push(format!("arrival mass exceeds 1 at t={t} (sum {mass})"));
            }
        }
        for (task, row) in self.arrivals.iter().enumerate() {
            for (i, &p) in row.iter().enumerate() {
                if !(-PROB_TOL..=1.0 + PROB_TOL).contains(&p) {
                    v.push(format!(
                        "arrival probability p[{task}][t={}] = {p} outside [0,1]",
                        i + 1
                    ));
                }
            }
        }

        ValidationReport { violations: v }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut rewards = BTreeMap::new();
        for e in 0..self.num_edges() {
            let mut by_level = BTreeMap::new();
            for l in 1..=self.levels {
                by_level.insert(l.to_string(), self.reward(e, l));
            }
            rewards.insert(e.to_string(), by_level);
        }
        let file = InstanceJson {
            t: self.horizon,
            l: self.levels,
            machines: self
                .machines
                .iter()
                .map(|m| MachineJson {
                    id: m.id,
                    budget: match m.budget {
                        Budget::Finite(b) => BudgetJson::Finite(b),
                        Budget::Unlimited => BudgetJson::Inf("inf".to_string()),
                    },
                })
                .collect(),
            tasks: self.tasks.iter().map(|t| TaskJson { id: t.id }).collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeJson {
                    id: e.id,
                    u: e.machine,
                    v: e.task,
                    q: e.accept_prob,
                })
                .collect(),
            rewards,
            theta: self.theta.clone(),
            arrivals: self.arrivals.clone(),
            delays: self
                .delays
                .iter()
                .map(|d| DelayJson {
                    pmf: d
                        .iter()
                        .filter(|&(_, p)| p != 0.0)
                        .map(|(d, p)| (d.to_string(), p))
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_value(file).expect("instance serialization cannot fail")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let file: InstanceJson = serde_json::from_value(value)?;
        let machines = file
            .machines
            .into_iter()
            .map(|m| {
                Ok(MachineSpec {
                    id: m.id,
                    budget: match m.budget {
                        BudgetJson::Finite(b) => Budget::Finite(b),
                        BudgetJson::Inf(s) if s == "inf" => Budget::Unlimited,
                        BudgetJson::Inf(s) => {
                            return Err(Error::Instance(format!(
                                "machine {}: budget must be an integer or \"inf\", got {s:?}",
                                m.id
                            )))
                        }
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let tasks = file
            .tasks
            .into_iter()
            .map(|t| TaskSpec { id: t.id })
            .collect();
        let edges: Vec<Edge> = file
            .edges
            .into_iter()
            .map(|e| Edge {
                id: e.id,
                machine: e.u,
                task: e.v,
                accept_prob: e.q,
            })
            .collect();

        let mut rewards = Vec::with_capacity(edges.len());
        for e in 0..edges.len() {
            let by_level = file
                .rewards
                .get(&e.to_string())
                .ok_or_else(|| Error::Instance(format!("missing rewards for edge {e}")))?;
            let mut row = Vec::with_capacity(file.l);
            for l in 1..=file.l {
                let r = by_level.get(&l.to_string()).ok_or_else(|| {
                    Error::Instance(format!("missing reward for edge {e} level {l}"))
                })?;
                row.push(*r);
            }
            if by_level.len() != file.l {
                return Err(Error::Instance(format!(
                    "edge {e} has reward entries for unknown levels (expected 1..={})",
                    file.l
                )));
            }
            rewards.push(row);
        }
        if file.rewards.len() != edges.len() {
            return Err(Error::Instance(
                "rewards reference unknown edges".to_string(),
            ));
        }

        let delays = file
            .delays
            .iter()
            .map(|d| {
                let mut map = BTreeMap::new();
                for (k, &p) in &d.pmf {
                    let d_val: u32 = k
                        .parse()
                        .map_err(|_| Error::Instance(format!("bad delay key {k:?}")))?;
                    map.insert(d_val, p);
                }
                DelayDist::from_map(&map)
            })
            .collect::<Result<Vec<_>>>()?;

        Instance::from_parts(InstanceParts {
            horizon: file.t,
            machines,
            tasks,
            edges,
            levels: file.l,
            rewards,
            theta: file.theta,
            arrivals: file.arrivals,
            delays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Instance::from_json(serde_json::from_str(&text)?)
    }
}

/// Outcome of [`Instance::validate`]: empty means every invariant holds.
#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            write!(f, "ok")
        } else {
            for line in &self.violations {
                writeln!(f, "- {line}")?;
            }
            Ok(())
        }
    }
}

// On-disk schema. Key names are fixed; unknown keys are rejected.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceJson {
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "L")]
    l: usize,
    machines: Vec<MachineJson>,
    tasks: Vec<TaskJson>,
    edges: Vec<EdgeJson>,
    rewards: BTreeMap<String, BTreeMap<String, f64>>,
    theta: Vec<u32>,
    arrivals: Vec<Vec<f64>>,
    delays: Vec<DelayJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MachineJson {
    id: usize,
    budget: BudgetJson,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BudgetJson {
    Finite(u32),
    Inf(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskJson {
    id: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeJson {
    id: usize,
    u: usize,
    v: usize,
    q: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DelayJson {
    pmf: BTreeMap<String, f64>,
}
