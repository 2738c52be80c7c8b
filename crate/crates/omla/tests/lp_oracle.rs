//! Cross-checks of the production LP path against an independently built
//! dense formulation solved by an independently written tableau simplex.

mod common;

use common::{dense_off, solution_vector};
use omla::gen::{self, SyntheticConfig};
use omla::lp;
use omla::model::{Budget, DelayDist, Edge, Instance, InstanceParts, MachineSpec, TaskSpec};
use proptest::prelude::*;

fn unit_instance() -> Instance {
    Instance::from_parts(InstanceParts {
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
            accept_prob: 1.0,
        }],
        levels: 1,
        rewards: vec![vec![5.0]],
        theta: vec![1],
        arrivals: vec![vec![1.0]],
        delays: vec![DelayDist::new(vec![1.0])],
    })
    .unwrap()
}

/// One variable, five constraints: sweep x over [0,1] and keep the best
/// feasible value. The optimum is x = 1 with objective 5.
#[test]
fn grid_search_confirms_the_unit_instance() {
    let instance = unit_instance();
    let oracle = dense_off(&instance);
    assert_eq!(oracle.c.len(), 1);
    assert_eq!(oracle.b.len(), 5);

    let mut best = f64::NEG_INFINITY;
    let mut best_x = f64::NAN;
    for step in 0..=1000 {
        let x = [step as f64 / 1000.0];
        if oracle.max_violation(&x) <= 1e-12 && oracle.objective(&x) > best {
            best = oracle.objective(&x);
            best_x = x[0];
        }
    }
    assert!((best - 5.0).abs() < 1e-9, "grid optimum {best}");
    assert!((best_x - 1.0).abs() < 1e-9, "grid argmax {best_x}");

    let (_, solution) = lp::solve_off(&instance, lp::DEFAULT_TOL).unwrap();
    assert!((solution.objective - 5.0).abs() < 1e-9);
    assert!((solution.x(0, 1, 1) - 1.0).abs() < 1e-9);
}

#[test]
fn objectives_match_the_tableau_oracle_on_a_mid_size_instance() {
    let config = SyntheticConfig {
        num_machines: 3,
        num_tasks: 5,
        horizon: 10,
        num_levels: 2,
        edge_prob: 0.4,
        budget_cap: Some(3),
        seed: 42,
        ..SyntheticConfig::default()
    };
    let instance = gen::synthetic(&config).unwrap();
    assert!(instance.num_edges() > 0, "seed 42 should draw edges");

    let (_, solution) = lp::solve_off(&instance, lp::DEFAULT_TOL).unwrap();
    let oracle = dense_off(&instance);
    let reference = oracle.maximize();

    let rel = (solution.objective - reference).abs() / reference.abs().max(1.0);
    assert!(
        rel < 1e-6,
        "production {} vs oracle {reference}",
        solution.objective
    );
    assert!(
        oracle.max_violation(&solution_vector(&instance, &solution)) <= 1e-7,
        "production solution violates an independently built row"
    );
}

/// Re-solving with a machine removed can lose at most that machine's reward
/// contribution in the original optimum.
#[test]
fn dropping_a_machine_costs_at_most_its_own_contribution() {
    let config = SyntheticConfig {
        num_machines: 3,
        num_tasks: 5,
        horizon: 8,
        num_levels: 2,
        edge_prob: 0.5,
        budget_cap: Some(4),
        seed: 7,
        ..SyntheticConfig::default()
    };
    let instance = gen::synthetic(&config).unwrap();
    let (_, solution) = lp::solve_off(&instance, lp::DEFAULT_TOL).unwrap();

    let dropped: usize = 0;
    let contribution: f64 = instance
        .edges_of_machine(dropped)
        .iter()
        .map(|&e| {
            let q = instance.edge(e).accept_prob;
            (1..=instance.num_levels())
                .flat_map(|l| (1..=instance.horizon()).map(move |t| (l, t)))
                .map(|(l, t)| q * instance.reward(e, l) * solution.x(e, l, t))
                .sum::<f64>()
        })
        .sum();

    let mut parts = instance.to_parts();
    parts.machines.remove(dropped);
    for m in &mut parts.machines {
        m.id -= 1;
    }
    parts.edges.retain(|e| e.machine != dropped);
    let kept: Vec<usize> = parts.edges.iter().map(|e| e.id).collect();
    parts.rewards = kept
        .iter()
        .map(|&e| instance.to_parts().rewards[e].clone())
        .collect();
    for (i, e) in parts.edges.iter_mut().enumerate() {
        e.id = i;
        e.machine -= 1;
    }
    let reduced = Instance::from_parts(parts).unwrap();
    let (_, reduced_solution) = lp::solve_off(&reduced, lp::DEFAULT_TOL).unwrap();

    assert!(
        reduced_solution.objective >= solution.objective - contribution - 1e-7,
        "dropping machine {dropped} lost {} but its contribution was {contribution}",
        solution.objective - reduced_solution.objective
    );
    assert!(reduced_solution.objective <= solution.objective + 1e-7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Production objective equals the independent tableau optimum, and the
    /// production point is feasible for the independently built rows.
    #[test]
    fn production_simplex_agrees_with_tableau_oracle(
        num_machines in 1usize..=2,
        num_tasks in 1usize..=3,
        // T = 1 with two levels degenerates the generator's binomial delays
        // (both levels collapse to E[d] = 1), so the sweep starts at T = 2;
        // the grid-search test covers T = 1.
        horizon in 2usize..=4,
        num_levels in 1usize..=2,
        edge_prob in 0.3f64..=1.0,
        cap in prop_oneof![Just(None), (1u32..=3).prop_map(Some)],
        seed in 0u64..=10_000,
    ) {
        let config = SyntheticConfig {
            num_machines,
            num_tasks,
            horizon,
            num_levels,
            edge_prob,
            budget_cap: cap,
            seed,
            ..SyntheticConfig::default()
        };
        let instance = gen::synthetic(&config).unwrap();
        let (_, solution) = lp::solve_off(&instance, lp::DEFAULT_TOL).unwrap();
        let oracle = dense_off(&instance);
        let reference = oracle.maximize();

        let rel = (solution.objective - reference).abs() / reference.abs().max(1.0);
        prop_assert!(rel < 1e-6, "production {} vs oracle {}", solution.objective, reference);
        prop_assert!(
            oracle.max_violation(&solution_vector(&instance, &solution)) <= 1e-7
        );
    }
}
