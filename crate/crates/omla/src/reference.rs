//! The per-machine reference system and its value tables, used only to
//! verify the competitive-ratio bounds.
//!
//! Each machine `u` is viewed in isolation: at slot `t` a level-`l` proposal
//! arrives with probability `p'_{u,l,t} = sum_{e in E_u} x*_{e,l,t}`, gets
//! accepted with the mass-weighted probability `q'`, and pays the
//! mass-weighted reward `r'`. The tables R-tilde/Q-tilde run the same
//! backward recursion as the original system, with the `(u,l)` pair taking
//! the role of the edge-level pair.

use crate::lp::LpSolution;
use crate::model::{Instance, MachineId};
use crate::{Error, Result};

/// Aggregated reference parameters, indexed by `(u, l, t)`.
#[derive(Clone, Debug)]
pub struct RefParams {
    num_machines: usize,
    num_levels: usize,
    horizon: usize,
    p: Vec<f64>,
    q: Vec<f64>,
    r: Vec<f64>,
}

impl RefParams {
    fn idx(&self, u: MachineId, l: usize, t: usize) -> usize {
        debug_assert!(u < self.num_machines);
        (u * self.num_levels + (l - 1)) * self.horizon + (t - 1)
    }

    /// `p'_{u,l,t}`, the proposal probability.
    pub fn p(&self, u: MachineId, l: usize, t: usize) -> f64 {
        self.p[self.idx(u, l, t)]
    }

    /// `q'_{u,l,t}`, the aggregated acceptance probability (0 when p' = 0).
    pub fn q(&self, u: MachineId, l: usize, t: usize) -> f64 {
        self.q[self.idx(u, l, t)]
    }

    /// `r'_{u,l,t}`, the aggregated reward (0 when p'q' = 0).
    pub fn r(&self, u: MachineId, l: usize, t: usize) -> f64 {
        self.r[self.idx(u, l, t)]
    }
}

/// Aggregate the solved x* into per-machine proposal parameters.
///
/// The zero cases follow the definitions exactly: `q' = 0` when `p' = 0`
/// and `r' = 0` when `p'q' = 0`; no epsilon-regularized division anywhere.
pub fn ref_params(instance: &Instance, solution: &LpSolution) -> RefParams {
    let num_machines = instance.num_machines();
    let num_levels = instance.num_levels();
    let horizon = instance.horizon();
    let size = num_machines * num_levels * horizon;
    let mut params = RefParams {
        num_machines,
        num_levels,
        horizon,
        p: vec![0.0; size],
        q: vec![0.0; size],
        r: vec![0.0; size],
    };
    for u in 0..num_machines {
        for l in 1..=num_levels {
            for t in 1..=horizon {
                let mut p = 0.0;
                let mut qx = 0.0;
                let mut qrx = 0.0;
                for &e in instance.edges_of_machine(u) {
                    let x = solution.x(e, l, t);
                    let q = instance.edge(e).accept_prob;
                    p += x;
                    qx += q * x;
                    qrx += q * instance.reward(e, l) * x;
                }
                let q_prime = if p == 0.0 { 0.0 } else { qx / p };
                let denom = p * q_prime;
                let r_prime = if denom == 0.0 { 0.0 } else { qrx / denom };
                let i = params.idx(u, l, t);
                params.p[i] = p;
                params.q[i] = q_prime;
                params.r[i] = r_prime;
            }
        }
    }
    params
}

/// Reference tables over the global budget range `delta in 1..=delta_max`,
/// indexed `(delta, u, t)` for R-tilde and `(delta, u, l, t)` for Q-tilde.
#[derive(Clone, Debug)]
pub struct RefTables {
    delta_max: u32,
    num_machines: usize,
    num_levels: usize,
    horizon: usize,
    r: Vec<f64>,
    q: Vec<f64>,
}

impl RefTables {
    pub fn delta_max(&self) -> u32 {
        self.delta_max
    }

    /// Total lookup: 0 for `delta <= 0` or `t > T`.
    pub fn r(&self, delta: i64, u: MachineId, t: usize) -> f64 {
        debug_assert!(u < self.num_machines);
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
    pub fn q(&self, delta: i64, u: MachineId, l: usize, t: usize) -> f64 {
        debug_assert!(u < self.num_machines);
        if delta <= 0 || t > self.horizon {
            return 0.0;
        }
        assert!(
            delta as u32 <= self.delta_max,
            "budget {delta} beyond table range"
        );
        let d = delta as usize - 1;
        self.q[((u * self.delta_max as usize + d) * self.num_levels + (l - 1)) * self.horizon
            + (t - 1)]
    }
}

/// Budget-free reference tables for all-unlimited instances.
#[derive(Clone, Debug)]
pub struct RefTablesUnlimited {
    num_machines: usize,
    num_levels: usize,
    horizon: usize,
    r: Vec<f64>,
    q: Vec<f64>,
}

impl RefTablesUnlimited {
    pub fn r(&self, u: MachineId, t: usize) -> f64 {
        debug_assert!(u < self.num_machines);
        if t > self.horizon {
            return 0.0;
        }
        self.r[u * self.horizon + (t - 1)]
    }

    pub fn q(&self, u: MachineId, l: usize, t: usize) -> f64 {
        debug_assert!(u < self.num_machines);
        if t > self.horizon {
            return 0.0;
        }
        self.q[(u * self.num_levels + (l - 1)) * self.horizon + (t - 1)]
    }
}

/// One machine's reference values; bands as in the original-system tables.
pub(crate) struct MachineRefValues {
    pub bands: usize,
    pub horizon: usize,
    /// `band * T + (t-1)`
    pub r: Vec<f64>,
    /// `(band * L + (l-1)) * T + (t-1)`
    pub q: Vec<f64>,
}

impl MachineRefValues {
    pub fn r_at(&self, band: usize, t: usize) -> f64 {
        if t > self.horizon {
            0.0
        } else {
            self.r[band * self.horizon + (t - 1)]
        }
    }
}

pub(crate) fn machine_ref_values(
    instance: &Instance,
    params: &RefParams,
    u: MachineId,
    mode: crate::tables::BudgetMode,
) -> MachineRefValues {
    use crate::tables::BudgetMode;
    let horizon = instance.horizon();
    let levels = instance.num_levels();
    let bands = match mode {
        BudgetMode::Finite(cap) => cap as usize,
        BudgetMode::Unlimited => 1,
    };
    let mut r = vec![0.0; bands * horizon];
    let mut q = vec![0.0; bands * levels * horizon];

    let lookup = |r: &[f64], band: i64, t: usize| -> f64 {
        if band < 0 || t > horizon {
            0.0
        } else {
            r[band as usize * horizon + (t - 1)]
        }
    };

    for band in 0..bands {
        for t in (1..=horizon).rev() {
            let r_next = lookup(&r, band as i64, t + 1);
            let mut acc = 0.0;
            let mut mass = 0.0;
            for l in 1..=levels {
                let mut future = 0.0;
                for (d, pr) in instance.delay(l).iter() {
                    if d > horizon - t {
                        break;
                    }
                    future += pr * lookup(&r, band as i64, t + d);
                }
                let reject_band = match mode {
                    BudgetMode::Finite(_) => band as i64 - instance.theta(l) as i64,
                    BudgetMode::Unlimited => band as i64,
                };
                let q_prime = params.q(u, l, t);
                let qv = q_prime * (params.r(u, l, t) + future)
                    + (1.0 - q_prime) * lookup(&r, reject_band, t + 1);
                q[(band * levels + (l - 1)) * horizon + (t - 1)] = qv;
                let p = params.p(u, l, t);
                acc += p * qv.max(r_next);
                mass += p;
            }
            r[band * horizon + (t - 1)] = acc + (1.0 - mass) * r_next;
        }
    }

    MachineRefValues {
        bands,
        horizon,
        r,
        q,
    }
}

/// Reference tables for an all-finite-budget instance.
pub fn ref_tables(instance: &Instance, params: &RefParams) -> Result<RefTables> {
    if !instance.all_finite_budgets() {
        return Err(Error::Tables(
            "instance has unlimited budgets; use ref_tables_unlimited".to_string(),
        ));
    }
    let delta_max = instance.max_finite_budget().expect("nonempty machine set");
    let cap = delta_max as usize;
    let horizon = instance.horizon();
    let levels = instance.num_levels();
    let mut tables = RefTables {
        delta_max,
        num_machines: instance.num_machines(),
        num_levels: levels,
        horizon,
        r: vec![0.0; instance.num_machines() * cap * horizon],
        q: vec![0.0; instance.num_machines() * cap * levels * horizon],
    };
    for u in 0..instance.num_machines() {
        let values = machine_ref_values(
            instance,
            params,
            u,
            crate::tables::BudgetMode::Finite(delta_max),
        );
        let dst = u * cap * horizon;
        tables.r[dst..dst + cap * horizon].copy_from_slice(&values.r);
        let dst = u * cap * levels * horizon;
        tables.q[dst..dst + cap * levels * horizon].copy_from_slice(&values.q);
    }
    Ok(tables)
}

/// Reference tables for an all-unlimited instance.
pub fn ref_tables_unlimited(instance: &Instance, params: &RefParams) -> Result<RefTablesUnlimited> {
    if !instance.all_unlimited_budgets() {
        return Err(Error::Tables(
            "instance has finite budgets; use ref_tables".to_string(),
        ));
    }
    let horizon = instance.horizon();
    let levels = instance.num_levels();
    let mut tables = RefTablesUnlimited {
        num_machines: instance.num_machines(),
        num_levels: levels,
        horizon,
        r: vec![0.0; instance.num_machines() * horizon],
        q: vec![0.0; instance.num_machines() * levels * horizon],
    };
    for u in 0..instance.num_machines() {
        let values = machine_ref_values(instance, params, u, crate::tables::BudgetMode::Unlimited);
        tables.r[u * horizon..(u + 1) * horizon].copy_from_slice(&values.r);
        let dst = u * levels * horizon;
        tables.q[dst..dst + levels * horizon].copy_from_slice(&values.q);
    }
    Ok(tables)
}

/// `sum_{t,l,e in E_u} q_e r x*`: machine `u`'s share of the LP objective,
/// the quantity the reference lower bounds are stated against.
pub fn machine_lp_share(instance: &Instance, solution: &LpSolution, u: MachineId) -> f64 {
    let mut share = 0.0;
    for &e in instance.edges_of_machine(u) {
        let q = instance.edge(e).accept_prob;
        for l in 1..=instance.num_levels() {
            let r = instance.reward(e, l);
            for t in 1..=instance.horizon() {
                share += q * r * solution.x(e, l, t);
            }
        }
    }
    share
}
