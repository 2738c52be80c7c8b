//! Inequality checker over the full analysis chain: it recomputes every
//! testable bound relating the offline relaxation, the value tables, the
//! reference system and (on tiny instances) the exact optimum, and reports
//! one line per bound.
//!
//! The suite is a falsification harness: on a valid instance every check
//! passes, and a corrupted proposal vector must trip at least one line.

use serde::Serialize;

use crate::lp::{self, LpSolution};
use crate::model::{Budget, Instance, MachineId};
use crate::oracle;
use crate::reference::{self, MachineRefValues};
use crate::tables::{self, BudgetMode, MachineValues};
use crate::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-7;

/// Guarantee constant for unlimited budgets.
pub const UNLIMITED_RATIO: f64 = 0.5;

/// Guarantee constant for a finite budget: delta/(3*delta - 1).
/// Equals 1/2 at delta = 1 and decreases toward 1/3, so the constant of the
/// largest budget lower-bounds the constant of every smaller one.
pub fn limited_ratio(delta: u32) -> f64 {
    assert!(delta >= 1);
    let d = f64::from(delta);
    d / (3.0 * d - 1.0)
}

/// One inequality `lhs >= rhs`, with slack normalized by `max(1, |rhs|)`.
#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    fn bound(name: &str, tol: f64, lhs: f64, rhs: f64, detail: String) -> Self {
        let slack = (lhs - rhs) / rhs.abs().max(1.0);
        CheckResult {
            name: name.to_string(),
            lhs,
            rhs,
            slack,
            pass: slack >= -tol,
            detail,
        }
    }

    /// A row that only aggregates other rows: pass iff all components pass.
    fn composition(name: &str, components: &[&CheckResult], detail: &str) -> Self {
        let pass = components.iter().all(|c| c.pass);
        let value = if pass { 1.0 } else { 0.0 };
        CheckResult {
            name: name.to_string(),
            lhs: value,
            rhs: 1.0,
            slack: value - 1.0,
            pass,
            detail: detail.to_string(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub tol: f64,
    pub pass: bool,
    pub checks: Vec<CheckResult>,
}

impl BoundReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<4} {:>14} {:>14} {:>12}  {:<4}  detail\n",
            "name", "lhs", "rhs", "slack", "pass"
        ));
        for check in &self.checks {
            out.push_str(&format!(
                "{:<4} {:>14.6} {:>14.6} {:>12.3e}  {:<4}  {}\n",
                check.name,
                check.lhs,
                check.rhs,
                check.slack,
                if check.pass { "ok" } else { "FAIL" },
                check.detail
            ));
        }
        out.push_str(&format!(
            "overall: {} (tol {:.1e})\n",
            if self.pass { "pass" } else { "FAIL" },
            self.tol
        ));
        out
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Solve the relaxation for the instance and check every bound against it.
pub fn check_all(instance: &Instance, tol: f64) -> Result<BoundReport> {
    let (_, solution) = lp::solve_off(instance, lp::DEFAULT_TOL)?;
    check_with_solution(instance, &solution, tol)
}

/// Check every bound against an injected proposal vector. The vector is
/// taken as-is, so corrupted proposals surface as failed rows.
pub fn check_with_solution(
    instance: &Instance,
    solution: &LpSolution,
    tol: f64,
) -> Result<BoundReport> {
    let validation = instance.validate();
    if !validation.violations.is_empty() {
        return Err(Error::Validation(validation.violations.join("; ")));
    }
    if solution.dims() != (instance.num_levels(), instance.horizon())
        || solution.x.len() != instance.num_edges() * instance.num_levels() * instance.horizon()
    {
        return Err(Error::Contract(
            "solution dimensions do not match the instance".to_string(),
        ));
    }

    let machines = per_machine_artifacts(instance, solution);
    let mut checks: Vec<CheckResult> = Vec::new();

    if let Some(l1) = check_l1(instance, solution, tol)? {
        checks.push(l1);
    }
    checks.push(check_l2(instance, &machines, tol));

    let has_unlimited = machines
        .iter()
        .any(|m| matches!(m.mode, BudgetMode::Unlimited));
    let has_finite = machines
        .iter()
        .any(|m| matches!(m.mode, BudgetMode::Finite(_)));

    if has_unlimited {
        checks.push(check_ref_floor(instance, &machines, tol, false));
        let l2 = checks.iter().find(|c| c.name == "L2").unwrap().clone();
        let l3 = checks.iter().find(|c| c.name == "L3").unwrap().clone();
        checks.push(CheckResult::composition(
            "L4",
            &[&l2, &l3],
            "policy value identity; composition of L2 and L3",
        ));
    }
    if has_finite {
        checks.push(check_l5(instance, &machines, tol));
        checks.push(check_ref_floor(instance, &machines, tol, true));
        let l2 = checks.iter().find(|c| c.name == "L2").unwrap().clone();
        let l5 = checks.iter().find(|c| c.name == "L5").unwrap().clone();
        let l6 = checks.iter().find(|c| c.name == "L6").unwrap().clone();
        checks.push(CheckResult::composition(
            "L7",
            &[&l2, &l5, &l6],
            "policy value identity; composition of L2, L5 and L6",
        ));
    }

    checks.push(check_guarantee(
        instance, solution, &machines, tol, has_finite,
    ));

    let pass = checks.iter().all(|c| c.pass);
    Ok(BoundReport { tol, pass, checks })
}

struct MachineArtifacts {
    u: MachineId,
    mode: BudgetMode,
    values: MachineValues,
    refs: MachineRefValues,
    share: f64,
}

fn per_machine_artifacts(instance: &Instance, solution: &LpSolution) -> Vec<MachineArtifacts> {
    let params = reference::ref_params(instance, solution);
    (0..instance.num_machines())
        .map(|u| {
            let mode = match instance.budget(u) {
                Budget::Finite(delta) => BudgetMode::Finite(delta),
                Budget::Unlimited => BudgetMode::Unlimited,
            };
            MachineArtifacts {
                u,
                mode,
                values: tables::machine_values(instance, solution, u, mode),
                refs: reference::machine_ref_values(instance, &params, u, mode),
                share: reference::machine_lp_share(instance, solution, u),
            }
        })
        .collect()
}

/// Tiny instances only: the relaxation upper-bounds the exact optimum.
fn check_l1(instance: &Instance, solution: &LpSolution, tol: f64) -> Result<Option<CheckResult>> {
    if oracle::TinyLimits::default().check(instance).is_err() {
        return Ok(None);
    }
    let opt = oracle::exact_opt(instance)?;
    Ok(Some(CheckResult::bound(
        "L1",
        tol,
        solution.objective,
        opt.value,
        format!("relaxation vs exact optimum over {} nodes", opt.nodes),
    )))
}

/// Original-system values dominate reference-system values entrywise.
fn check_l2(instance: &Instance, machines: &[MachineArtifacts], tol: f64) -> CheckResult {
    let mut worst: Option<CheckResult> = None;
    for m in machines {
        for band in 0..m.values.bands {
            for t in 1..=instance.horizon() {
                let lhs = m.values.r_at(band, t);
                let rhs = m.refs.r_at(band, t);
                let candidate = CheckResult::bound(
                    "L2",
                    tol,
                    lhs,
                    rhs,
                    format!("worst at u={}, {}, t={t}", m.u, band_label(m.mode, band)),
                );
                if worst.as_ref().is_none_or(|w| candidate.slack < w.slack) {
                    worst = Some(candidate);
                }
            }
        }
    }
    worst.expect("at least one machine")
}

fn band_label(mode: BudgetMode, band: usize) -> String {
    match mode {
        BudgetMode::Finite(_) => format!("delta={}", band + 1),
        BudgetMode::Unlimited => "delta=inf".to_string(),
    }
}

/// Reference-system start value floors a constant fraction of the machine's
/// relaxation share: 1/2 for unlimited machines (L3), delta/(3*delta-1) for
/// finite ones (L6).
fn check_ref_floor(
    instance: &Instance,
    machines: &[MachineArtifacts],
    tol: f64,
    finite: bool,
) -> CheckResult {
    let _ = instance;
    let name = if finite { "L6" } else { "L3" };
    let mut worst: Option<CheckResult> = None;
    for m in machines {
        let constant = match m.mode {
            BudgetMode::Finite(delta) if finite => limited_ratio(delta),
            BudgetMode::Unlimited if !finite => UNLIMITED_RATIO,
            _ => continue,
        };
        let lhs = m.refs.r_at(m.refs.bands - 1, 1);
        let rhs = constant * m.share;
        let candidate = CheckResult::bound(
            name,
            tol,
            lhs,
            rhs,
            format!("worst at u={}, constant {constant:.6}", m.u),
        );
        if worst.as_ref().is_none_or(|w| candidate.slack < w.slack) {
            worst = Some(candidate);
        }
    }
    worst.expect("caller checked the regime is present")
}

/// Budget-induction inequality on reference values:
/// R~ at budget (delta - theta_l) is at least ((delta - theta_l)/delta) of
/// R~ at budget delta, for every finite machine, level and slot.
fn check_l5(instance: &Instance, machines: &[MachineArtifacts], tol: f64) -> CheckResult {
    let mut worst: Option<CheckResult> = None;
    for m in machines {
        let BudgetMode::Finite(cap) = m.mode else {
            continue;
        };
        for delta in 1..=cap {
            for l in 1..=instance.num_levels() {
                let reduced = delta as i64 - instance.theta(l) as i64;
                for t in 1..=instance.horizon() {
                    let lhs = if reduced >= 1 {
                        m.refs.r_at(reduced as usize - 1, t)
                    } else {
                        0.0
                    };
                    let rhs = (reduced as f64 / delta as f64) * m.refs.r_at(delta as usize - 1, t);
                    let candidate = CheckResult::bound(
                        "L5",
                        tol,
                        lhs,
                        rhs,
                        format!("worst at u={}, delta={delta}, l={l}, t={t}", m.u),
                    );
                    if worst.as_ref().is_none_or(|w| candidate.slack < w.slack) {
                        worst = Some(candidate);
                    }
                }
            }
        }
    }
    worst.expect("caller checked a finite machine exists")
}

/// The end-to-end guarantee: the policy's exact expected value, read off the
/// tables as sum_u R_{u,1}, is at least the competitive constant times the
/// relaxation objective. With any finite budget present the constant of the
/// largest budget applies; otherwise 1/2.
fn check_guarantee(
    instance: &Instance,
    solution: &LpSolution,
    machines: &[MachineArtifacts],
    tol: f64,
    has_finite: bool,
) -> CheckResult {
    let (name, constant) = if has_finite {
        let delta_max = instance.max_finite_budget().expect("finite budget present");
        ("T2", limited_ratio(delta_max))
    } else {
        ("T1", UNLIMITED_RATIO)
    };
    let lhs: f64 = machines
        .iter()
        .map(|m| m.values.r_at(m.values.bands - 1, 1))
        .sum();
    let rhs = constant * solution.objective;
    CheckResult::bound(
        name,
        tol,
        lhs,
        rhs,
        format!("sum of start values vs {constant:.6} x relaxation"),
    )
}
