//! Instance generators: the randomized synthetic protocol used for the
//! benchmark sweeps, and the two-slot spike instance that caps every online
//! policy at half the optimum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Budget, DelayDist, Edge, Instance, InstanceParts, MachineSpec, TaskSpec};
use crate::{Error, Result};

/// Parameters of the synthetic protocol. `Default` is the benchmark setup:
/// 10 machines, 25 tasks, 100 slots, 6 levels, edge probability 0.1,
/// budgets drawn from {1..20}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub num_machines: usize,
    pub num_tasks: usize,
    pub horizon: usize,
    pub num_levels: usize,
    pub edge_prob: f64,
    /// Budgets are drawn uniformly from {1..=cap}; `None` makes every
    /// machine unlimited.
    pub budget_cap: Option<u32>,
    pub seed: u64,
    /// Range of the per-slot total arrival mass.
    pub arrival_mass: (f64, f64),
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_machines: 10,
            num_tasks: 25,
            horizon: 100,
            num_levels: 6,
            edge_prob: 0.1,
            budget_cap: Some(20),
            seed: 0,
            arrival_mass: (0.3, 1.0),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

const REWARD_RETRIES: usize = 100;

/// Draw an instance. Fixed draw order (edges machine-major, then per-edge
/// acceptance, per-edge reward vectors, budgets, arrivals per slot) makes
/// the result a pure function of the config.
///
/// Per edge: acceptance q ~ U(0.5,1); an anchor a ~ U(0.5,1); level rewards
/// r_l ~ U(a*l^0.2, a*l^0.4), redrawn until strictly increasing (bounded
/// retries, then sorted). Delay at level l is Binomial(T, l^1.2/20) with the
/// zero mass folded into d=1; its mean is strictly increasing in l by
/// construction. Penalties are theta_l = l+2. Arrivals per slot: raw task
/// weights U(0,1) normalized to a total mass drawn from `arrival_mass`.
pub fn synthetic(config: &SyntheticConfig) -> Result<Instance> {
    if config.num_machines == 0
        || config.num_tasks == 0
        || config.horizon == 0
        || config.num_levels == 0
    {
        return Err(Error::InvalidArgument(
            "all dimensions must be positive".to_string(),
        ));
    }
    if !(0.0..=1.0).contains(&config.edge_prob) {
        return Err(Error::InvalidArgument(format!(
            "edge probability {} outside [0,1]",
            config.edge_prob
        )));
    }
    if let Some(cap) = config.budget_cap {
        if cap == 0 {
            return Err(Error::InvalidArgument(
                "budget cap must be at least 1".to_string(),
            ));
        }
    }
    let (mass_lo, mass_hi) = config.arrival_mass;
    if !(0.0 <= mass_lo && mass_lo <= mass_hi && mass_hi <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "arrival mass range ({mass_lo}, {mass_hi}) outside [0,1]"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let levels = config.num_levels;

    let mut edges = Vec::new();
    for u in 0..config.num_machines {
        for v in 0..config.num_tasks {
            if rng.gen::<f64>() < config.edge_prob {
                edges.push(Edge {
                    id: edges.len(),
                    machine: u,
                    task: v,
                    accept_prob: 0.0,
                });
            }
        }
    }
    for edge in &mut edges {
        edge.accept_prob = uniform(&mut rng, 0.5, 1.0);
    }

    let mut rewards = Vec::with_capacity(edges.len());
    for edge in &edges {
        let anchor = uniform(&mut rng, 0.5, 1.0);
        let mut retries = 0;
        let row = loop {
            let mut candidate: Vec<f64> = (1..=levels)
                .map(|l| {
                    let l = l as f64;
                    uniform(&mut rng, anchor * l.powf(0.2), anchor * l.powf(0.4))
                })
                .collect();
            if candidate.windows(2).all(|w| w[0] < w[1]) {
                break candidate;
            }
            retries += 1;
            if retries >= REWARD_RETRIES {
                candidate.sort_by(|a, b| a.partial_cmp(b).unwrap());
                break candidate;
            }
        };
        if retries > 0 {
            log::debug!(
                "edge {}: {retries} reward redraws for monotonicity",
                edge.id
            );
        }
        rewards.push(row);
    }

    let delays = (1..=levels)
        .map(|l| binomial_delay(config.horizon, l))
        .collect::<Result<Vec<_>>>()?;
    let theta: Vec<u32> = (1..=levels).map(|l| l as u32 + 2).collect();

    let machines: Vec<MachineSpec> = (0..config.num_machines)
        .map(|u| {
            let budget = match config.budget_cap {
                Some(cap) => {
                    let draw = (rng.gen::<f64>() * f64::from(cap)) as u32;
                    Budget::Finite(draw.min(cap - 1) + 1)
                }
                None => Budget::Unlimited,
            };
            MachineSpec { id: u, budget }
        })
        .collect();

    let mut arrivals = vec![vec![0.0; config.horizon]; config.num_tasks];
    // Slot-major draws into task-major storage; the index is the point.
    #[allow(clippy::needless_range_loop)]
    for t in 0..config.horizon {
        let weights: Vec<f64> = (0..config.num_tasks).map(|_| rng.gen::<f64>()).collect();
        let total: f64 = weights.iter().sum();
        let mass = uniform(&mut rng, mass_lo, mass_hi);
        if total > 0.0 {
            for (v, w) in weights.iter().enumerate() {
                arrivals[v][t] = w / total * mass;
            }
        }
    }

    let instance = Instance::from_parts(InstanceParts {
        horizon: config.horizon,
        machines,
        tasks: (0..config.num_tasks).map(|id| TaskSpec { id }).collect(),
        edges,
        levels,
        rewards,
        theta,
        arrivals,
        delays,
    })?;
    let report = instance.validate();
    if !report.violations.is_empty() {
        return Err(Error::Validation(report.violations.join("; ")));
    }
    Ok(instance)
}

/// Binomial(T, l^1.2/20) over {0..T}, with the mass at 0 folded into d=1.
fn binomial_delay(horizon: usize, level: usize) -> Result<DelayDist> {
    let p = (level as f64).powf(1.2) / 20.0;
    if p >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "level {level} gives binomial delay parameter {p} >= 1"
        )));
    }
    let n = horizon;
    let ln_fact: Vec<f64> = std::iter::once(0.0)
        .chain((1..=n).scan(0.0, |acc, k| {
            *acc += (k as f64).ln();
            Some(*acc)
        }))
        .collect();
    let pmf = |d: usize| -> f64 {
        let ln_choose = ln_fact[n] - ln_fact[d] - ln_fact[n - d];
        (ln_choose + d as f64 * p.ln() + (n - d) as f64 * (1.0 - p).ln()).exp()
    };
    let mut weights = vec![0.0; n.max(1)];
    weights[0] = pmf(0);
    for d in 1..=n {
        weights[d - 1] += pmf(d);
    }
    Ok(DelayDist::from_weights(weights))
}

/// The two-slot spike: one machine, a throwaway task at t=1, then with
/// probability eps a task worth 1/eps. Commitment locks the machine for the
/// whole horizon, so any online policy earns at most 1 while the offline
/// optimum earns 2-eps.
pub fn hardness(eps: f64) -> Result<Instance> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("eps {eps} outside (0,1)")));
    }
    let edges = vec![
        Edge {
            id: 0,
            machine: 0,
            task: 0,
            accept_prob: 1.0,
        },
        Edge {
            id: 1,
            machine: 0,
            task: 1,
            accept_prob: 1.0,
        },
        Edge {
            id: 2,
            machine: 0,
            task: 2,
            accept_prob: 1.0,
        },
    ];
    let instance = Instance::from_parts(InstanceParts {
        horizon: 2,
        machines: vec![MachineSpec {
            id: 0,
            budget: Budget::Unlimited,
        }],
        tasks: (0..3).map(|id| TaskSpec { id }).collect(),
        edges,
        levels: 1,
        rewards: vec![vec![1.0], vec![1.0 / eps], vec![0.0]],
        theta: vec![1],
        arrivals: vec![vec![1.0, 0.0], vec![0.0, eps], vec![0.0, 1.0 - eps]],
        delays: vec![DelayDist::new(vec![0.0, 1.0])],
    })?;
    debug_assert!(instance.validate().violations.is_empty());
    Ok(instance)
}
