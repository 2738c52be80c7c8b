//! The acceptance gate: ten end-to-end criteria covering the relaxation
//! bound, every per-machine and end-to-end bound inequality, the expectation
//! identities, the hardness construction, benchmark dominance, build-time
//! scaling, and bit-level determinism. Each test prints one
//! `criterion N ...: PASS/FAIL` line (visible under `--nocapture`).

use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use omla::gen::{self, SyntheticConfig};
use omla::lp::{self, LpSolution};
use omla::model::{Budget, Instance};
use omla::oracle;
use omla::policies::{build_policy, OmlaPolicy, Policy, PolicyName};
use omla::sim::monte_carlo;
use omla::tables;
use omla::verify;

fn conclude(criterion: u32, label: &str, failures: &[String], detail: String) {
    let verdict = if failures.is_empty() { "PASS" } else { "FAIL" };
    println!("criterion {criterion:>2} ({label}): {verdict} [{detail}]");
    assert!(
        failures.is_empty(),
        "criterion {criterion}: {}",
        failures.join("; ")
    );
}

fn budget_check(criterion: u32, elapsed: Duration, budget: Duration, failures: &mut Vec<String>) {
    if elapsed > budget {
        failures.push(format!(
            "criterion {criterion} took {elapsed:.1?}, budget {budget:.1?}"
        ));
    }
}

/// The instance's guaranteed fraction of the relaxation objective.
fn guarantee(instance: &Instance) -> f64 {
    match instance.max_finite_budget() {
        Some(delta) => verify::limited_ratio(delta),
        None => verify::UNLIMITED_RATIO,
    }
}

#[test]
fn criterion_01_relaxation_dominates_the_exact_optimum() {
    let start = Instant::now();
    let mut failures = Vec::new();
    for seed in 0..50u64 {
        let config = SyntheticConfig {
            num_machines: 1 + (seed as usize % 2),
            num_tasks: 1 + (seed as usize % 3),
            horizon: 2 + (seed as usize % 2),
            num_levels: 1 + (seed as usize % 2),
            edge_prob: 0.7,
            budget_cap: match seed % 3 {
                0 => None,
                1 => Some(1),
                _ => Some(2),
            },
            seed: 1000 + seed,
            ..SyntheticConfig::default()
        };
        let instance = gen::synthetic(&config).unwrap();
        let (_, solution) = lp::solve_off(&instance, lp::DEFAULT_TOL).unwrap();
        let opt = oracle::exact_opt(&instance).unwrap();
        if solution.objective < opt.value - 1e-6 {
            failures.push(format!(
                "seed {}: relaxation {} below optimum {}",
                config.seed, solution.objective, opt.value
            ));
        }
    }
    let elapsed = start.elapsed();
    budget_check(1, elapsed, Duration::from_secs(60), &mut failures);
    conclude(
        1,
        "relaxation upper-bounds the exact optimum",
        &failures,
        format!("50 tiny instances in {elapsed:.1?}"),
    );
}

/// The 20 shared small instances for criteria 2-4.
fn small_instances() -> Vec<Instance> {
    (0..20u64)
        .map(|i| {
            let config = SyntheticConfig {
                num_machines: 2 + (i as usize % 4),
                num_tasks: 4 + (i as usize % 5),
                horizon: 10 + (i as usize % 11),
                num_levels: 2 + (i as usize % 2),
                edge_prob: 0.4,
                budget_cap: Some(1 + (i as u32 % 4)),
                seed: 1100 + i,
                ..SyntheticConfig::default()
            };
            gen::synthetic(&config).unwrap()
        })
        .collect()
}

fn unlimited_variant(instance: &Instance) -> Instance {
    let mut parts = instance.to_parts();
    for m in &mut parts.machines {
        m.budget = Budget::Unlimited;
    }
    Instance::from_parts(parts).unwrap()
}

/// Pull one named row out of a full bound report, recording a failure if it
/// is missing or failing.
fn row_must_pass(
    report: &verify::BoundReport,
    name: &str,
    context: &str,
    failures: &mut Vec<String>,
) {
    match report.check(name) {
        None => failures.push(format!("{context}: no {name} row")),
        Some(row) if !row.pass => failures.push(format!(
            "{context}: {name} slack {} ({})",
            row.slack, row.detail
        )),
        Some(_) => {}
    }
}

#[test]
fn criterion_02_original_values_dominate_reference_values() {
    let start = Instant::now();
    let mut failures = Vec::new();
    for (i, instance) in small_instances().iter().enumerate() {
        let report = verify::check_all(instance, verify::DEFAULT_TOL).unwrap();
        row_must_pass(&report, "L2", &format!("instance {i}"), &mut failures);
    }
    let elapsed = start.elapsed();
    budget_check(2, elapsed, Duration::from_secs(30), &mut failures);
    conclude(
        2,
        "R dominates the reference tables entrywise",
        &failures,
        format!("20 small instances in {elapsed:.1?}"),
    );
}

#[test]
fn criterion_03_reference_values_shrink_gracefully_with_budget() {
    let start = Instant::now();
    let mut failures = Vec::new();
    for (i, instance) in small_instances().iter().enumerate() {
        let report = verify::check_all(instance, verify::DEFAULT_TOL).unwrap();
        row_must_pass(&report, "L5", &format!("instance {i}"), &mut failures);
    }
    let elapsed = start.elapsed();
    budget_check(3, elapsed, Duration::from_secs(30), &mut failures);
    conclude(
        3,
        "budget-reduced reference floor",
        &failures,
        format!("20 small instances in {elapsed:.1?}"),
    );
}

#[test]
fn criterion_04_per_machine_floors_hold_in_both_regimes() {
    let start = Instant::now();
    let mut failures = Vec::new();
    for (i, instance) in small_instances().iter().enumerate() {
        let finite = verify::check_all(instance, verify::DEFAULT_TOL).unwrap();
        row_must_pass(
            &finite,
            "L6",
            &format!("instance {i} finite"),
            &mut failures,
        );

        let unlimited = unlimited_variant(instance);
        let report = verify::check_all(&unlimited, verify::DEFAULT_TOL).unwrap();
        row_must_pass(
            &report,
            "L3",
            &format!("instance {i} unlimited"),
            &mut failures,
        );
    }
    let elapsed = start.elapsed();
    budget_check(4, elapsed, Duration::from_secs(30), &mut failures);
    conclude(
        4,
        "per-machine reference floors, both budget regimes",
        &failures,
        format!("20 small instances x 2 regimes in {elapsed:.1?}"),
    );
}

#[test]
fn criterion_05_start_values_clear_the_guarantee_exactly() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let caps = [None, Some(1), Some(5), Some(20)];
    for i in 0..20u64 {
        let config = SyntheticConfig {
            num_machines: 10,
            num_tasks: 25,
            horizon: 50,
            num_levels: if (i / 4) % 2 == 0 { 2 } else { 6 },
            budget_cap: caps[i as usize % 4],
            seed: 1200 + i,
            ..SyntheticConfig::default()
        };
        let instance = gen::synthetic(&config).unwrap();
        let (_, solution) = lp::solve_off(&instance, lp::DEFAULT_TOL).unwrap();
        let value = tables::compute_for(&instance, &solution)
            .unwrap()
            .initial_value(&instance);
        let bound = guarantee(&instance);
        if value < bound * solution.objective - 1e-9 {
            failures.push(format!(
                "seed {}: sum_u R_u1 = {value} under {bound} x {}",
                config.seed, solution.objective
            ));
        }
    }
    let elapsed = start.elapsed();
    budget_check(5, elapsed, Duration::from_secs(600), &mut failures);
    conclude(
        5,
        "competitive guarantee against the relaxation, exact form",
        &failures,
        format!("20 reduced-scale instances in {elapsed:.1?}"),
    );
}

#[test]
fn criterion_06_expectation_identity() {
    let start = Instant::now();
    let mut failures = Vec::new();

    // Monte Carlo agreement at n = 1e5 on five regression instances.
    for i in 0..5u64 {
        let config = SyntheticConfig {
            num_machines: 3,
            num_tasks: 6,
            horizon: 10,
            num_levels: 2,
            edge_prob: 0.4,
            budget_cap: Some(3),
            seed: 1300 + i,
            ..SyntheticConfig::default()
        };
        let instance = gen::synthetic(&config).unwrap();
        let (_, solution) = lp::solve_off(&instance, lp::DEFAULT_TOL).unwrap();
        let expected = tables::compute_for(&instance, &solution)
            .unwrap()
            .initial_value(&instance);
        let policy = OmlaPolicy::from_solution("omla", &instance, solution).unwrap();
        let summary = monte_carlo(&instance, &policy, 100_000, 77).unwrap();
        let gap = (summary.mean - expected).abs();
        if gap > 4.0 * summary.stderr {
            failures.push(format!(
                "seed {}: |{} - {expected}| = {gap} beyond 4 x stderr {}",
                config.seed, summary.mean, summary.stderr
            ));
        }
    }

    // Exact agreement on tiny instances via the chance-tree evaluator.
    for i in 0..5u64 {
        let config = SyntheticConfig {
            num_machines: 2,
            num_tasks: 3,
            horizon: 3,
            num_levels: 2,
            edge_prob: 0.7,
            budget_cap: Some(2),
            seed: 1350 + i,
            ..SyntheticConfig::default()
        };
        let instance = gen::synthetic(&config).unwrap();
        let (_, solution) = lp::solve_off(&instance, lp::DEFAULT_TOL).unwrap();
        let expected = tables::compute_for(&instance, &solution)
            .unwrap()
            .initial_value(&instance);
        let policy = OmlaPolicy::from_solution("omla", &instance, solution).unwrap();
        let exact = oracle::exact_policy_value(&instance, &policy).unwrap();
        let rel = (exact.value - expected).abs() / expected.abs().max(1.0);
        if rel > 1e-9 {
            failures.push(format!(
                "seed {}: exact {} vs tables {expected} (relative {rel:e})",
                config.seed, exact.value
            ));
        }
    }

    conclude(
        6,
        "sum_u R_u1 equals the policy's expected reward",
        &failures,
        format!(
            "5 Monte Carlo + 5 exact instances in {:.1?}",
            start.elapsed()
        ),
    );
}

#[test]
fn criterion_07_hardness_reproduction() {
    let start = Instant::now();
    let mut failures = Vec::new();
    for eps in [0.1, 0.5] {
        let instance = gen::hardness(eps).unwrap();
        let opt = oracle::exact_opt(&instance).unwrap();
        if (opt.value - (2.0 - eps)).abs() > 1e-9 {
            failures.push(format!(
                "eps {eps}: optimum {} is not {}",
                opt.value,
                2.0 - eps
            ));
        }
        for name in PolicyName::ALL {
            let policy = build_policy(&instance, name, lp::DEFAULT_TOL).unwrap();
            let value = oracle::exact_policy_value(&instance, policy.as_ref()).unwrap();
            if value.value > 1.0 + 1e-9 {
                failures.push(format!(
                    "eps {eps}: {} earns {} over the unit cap",
                    policy.name(),
                    value.value
                ));
            }
            let ratio = value.value / opt.value;
            if ratio > 1.0 / (2.0 - eps) + 1e-9 {
                failures.push(format!(
                    "eps {eps}: {} ratio {ratio} over 1/(2-eps)",
                    policy.name()
                ));
            }
        }
    }
    conclude(
        7,
        "spike instance caps every policy at the hardness ratio",
        &failures,
        format!(
            "eps in {{0.1, 0.5}}, six policies, in {:.1?}",
            start.elapsed()
        ),
    );
}

#[test]
fn criterion_08_benchmark_comparison_under_common_random_numbers() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut exceptions = 0usize;
    for i in 0..10u64 {
        let config = SyntheticConfig {
            num_machines: 10,
            num_tasks: 25,
            horizon: 50,
            num_levels: 6,
            budget_cap: Some(20),
            seed: 1400 + i,
            ..SyntheticConfig::default()
        };
        let instance = gen::synthetic(&config).unwrap();
        let (_, solution) = lp::solve_off(&instance, lp::DEFAULT_TOL).unwrap();
        let lp_off = solution.objective;

        let mut ratios = Vec::new();
        for name in PolicyName::ALL {
            let policy: Box<dyn Policy> = match name {
                PolicyName::Omla => Box::new(
                    OmlaPolicy::from_solution("omla", &instance, solution.clone()).unwrap(),
                ),
                other => build_policy(&instance, other, lp::DEFAULT_TOL).unwrap(),
            };
            let summary = monte_carlo(&instance, policy.as_ref(), 250, 4242).unwrap();
            ratios.push((name, summary.mean / lp_off, summary.stderr / lp_off));
        }

        let (_, omla_ratio, omla_se) = ratios[0];
        for &(name, ratio, se) in &ratios[1..] {
            let pooled = (omla_se * omla_se + se * se).sqrt();
            if omla_ratio < ratio - 2.0 * pooled {
                exceptions += 1;
                println!(
                    "criterion  8 exception: seed {} {} {ratio:.4} beats omla {omla_ratio:.4} \
                     beyond 2 x pooled stderr {pooled:.4}",
                    config.seed,
                    name.as_str(),
                );
                if name == PolicyName::Random {
                    failures.push(format!(
                        "seed {}: omla {omla_ratio} trails random {ratio} - 2 x {pooled}",
                        config.seed
                    ));
                }
            }
        }
    }
    conclude(
        8,
        "omla holds its own against every benchmark",
        &failures,
        format!(
            "10 instances, n = 250, {exceptions} logged exception(s), in {:.1?}",
            start.elapsed()
        ),
    );
}

#[test]
fn criterion_09_build_time_scales_no_worse_than_quadratically() {
    let build_time = |horizon: usize| -> Duration {
        let config = SyntheticConfig {
            num_machines: 10,
            num_tasks: 25,
            horizon,
            num_levels: 6,
            budget_cap: Some(20),
            seed: 1500,
            ..SyntheticConfig::default()
        };
        let instance = gen::synthetic(&config).unwrap();
        let zero = LpSolution::from_vector(
            &instance,
            vec![0.0; instance.num_edges() * instance.num_levels() * instance.horizon()],
        );
        (0..3)
            .map(|_| {
                let tick = Instant::now();
                let tables = tables::compute_for(&instance, &zero).unwrap();
                assert_eq!(tables.initial_value(&instance), 0.0);
                tick.elapsed()
            })
            .min()
            .unwrap()
    };

    let base = build_time(100);
    let doubled = build_time(200);
    let factor = doubled.as_secs_f64() / base.as_secs_f64().max(1e-9);
    let failures = if factor <= 6.0 {
        Vec::new()
    } else {
        vec![format!(
            "T=200 build {doubled:.1?} is {factor:.2} x T=100 build {base:.1?}"
        )]
    };
    conclude(
        9,
        "doubling the horizon at most 6x-es the table build",
        &failures,
        format!("T=100 {base:.1?}, T=200 {doubled:.1?}, factor {factor:.2}"),
    );
}

#[test]
fn criterion_10_bench_output_is_byte_identical() {
    let start = Instant::now();
    let dir = tempfile::TempDir::new().unwrap();
    let instance = dir.path().join("inst.json");
    let gen_out = Command::new(env!("CARGO_BIN_EXE_omla"))
        .args([
            "gen",
            "--machines",
            "5",
            "--tasks",
            "10",
            "--horizon",
            "20",
            "--levels",
            "3",
            "--edge-prob",
            "0.4",
            "--budget-cap",
            "5",
            "--seed",
            "15",
            "--out",
            instance.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(gen_out.status.success());

    let bench = |jobs: &str, name: &str| -> Vec<u8> {
        let csv = dir.path().join(name);
        let out = Command::new(env!("CARGO_BIN_EXE_omla"))
            .args([
                "bench",
                "--instance",
                instance.to_str().unwrap(),
                "--n",
                "100",
                "--seed",
                "9",
                "--jobs",
                jobs,
                "--out",
                csv.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        fs::read(&csv).unwrap()
    };

    let first = bench("1", "first.csv");
    let second = bench("1", "second.csv");
    let parallel = bench("8", "parallel.csv");
    let mut failures = Vec::new();
    if first != second {
        failures.push("identical flags produced different CSVs".to_string());
    }
    if first != parallel {
        failures.push("--jobs 1 and --jobs 8 produced different CSVs".to_string());
    }
    conclude(
        10,
        "bench runs are byte-identical across repeats and job counts",
        &failures,
        format!("3 runs compared in {:.1?}", start.elapsed()),
    );
}
