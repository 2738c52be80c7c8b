//! Shared helpers for the integration suites: an independent dense-tableau
//! simplex plus a from-scratch constraint builder, used to cross-check the
//! production LP path without sharing any of its code.

#![allow(dead_code)]
// Tableau code indexes rows and columns directly on purpose.
#![allow(clippy::needless_range_loop)]

use omla::model::{Budget, Instance};

/// A dense `max c.x  s.t.  A x <= b, x >= 0` program with `b >= 0`, so the
/// all-slack basis is feasible and no phase-1 is needed.
pub struct DenseLp {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl DenseLp {
    /// Full-tableau simplex under Bland's rule (lowest eligible index in and
    /// out). Slow and cycle-proof; the point is independence, not speed.
    pub fn maximize(&self) -> f64 {
        const EPS: f64 = 1e-9;
        let m = self.b.len();
        let n = self.c.len();
        let width = n + m + 1;
        let mut t = vec![vec![0.0f64; width]; m + 1];
        for (i, row) in self.a.iter().enumerate() {
            assert_eq!(row.len(), n, "ragged constraint matrix");
            assert!(self.b[i] >= 0.0, "negative rhs breaks the slack basis");
            t[i][..n].copy_from_slice(row);
            t[i][n + i] = 1.0;
            t[i][width - 1] = self.b[i];
        }
        for j in 0..n {
            t[m][j] = -self.c[j];
        }
        let mut basis: Vec<usize> = (n..n + m).collect();
        while let Some(enter) = (0..n + m).find(|&j| t[m][j] < -EPS) {
            let mut leave: Option<usize> = None;
            let mut best = f64::INFINITY;
            for i in 0..m {
                if t[i][enter] > EPS {
                    let ratio = t[i][width - 1] / t[i][enter];
                    let tied = (ratio - best).abs() <= 1e-12;
                    if ratio < best - 1e-12 || (tied && leave.is_some_and(|r| basis[i] < basis[r]))
                    {
                        best = ratio;
                        leave = Some(i);
                    }
                }
            }
            let leave = leave.expect("unbounded oracle LP");
            let pivot = t[leave][enter];
            for j in 0..width {
                t[leave][j] /= pivot;
            }
            for i in 0..=m {
                if i == leave {
                    continue;
                }
                let factor = t[i][enter];
                if factor != 0.0 {
                    for j in 0..width {
                        t[i][j] -= factor * t[leave][j];
                    }
                }
            }
            basis[leave] = enter;
        }
        t[m][width - 1]
    }

    /// Worst constraint violation of a candidate point, including
    /// nonnegativity; <= 0 means feasible.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().fold(0.0f64, |w, &xi| w.max(-xi));
        for (row, &rhs) in self.a.iter().zip(&self.b) {
            let lhs: f64 = row.iter().zip(x).map(|(a, xi)| a * xi).sum();
            worst = worst.max(lhs - rhs);
        }
        worst
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(c, xi)| c * xi).sum()
    }
}

/// The offline relaxation, rebuilt from the instance with nothing shared
/// with the production builder: occupancy and budget coefficients come from
/// a local tail summation over the delay pmf.
pub fn dense_off(instance: &Instance) -> DenseLp {
    let horizon = instance.horizon();
    let levels = instance.num_levels();
    let n = instance.num_edges() * levels * horizon;
    let col = |e: usize, l: usize, t: usize| (e * levels + (l - 1)) * horizon + (t - 1);
    let tail = |l: usize, k: usize| -> f64 {
        instance
            .delay(l)
            .iter()
            .filter(|&(d, _)| d >= k)
            .map(|(_, p)| p)
            .sum()
    };

    let mut c = vec![0.0; n];
    for e in 0..instance.num_edges() {
        let q = instance.edge(e).accept_prob;
        for l in 1..=levels {
            for t in 1..=horizon {
                c[col(e, l, t)] = q * instance.reward(e, l);
            }
        }
    }

    let mut a = Vec::new();
    let mut b = Vec::new();
    for u in 0..instance.num_machines() {
        for t in 1..=horizon {
            let mut row = vec![0.0; n];
            for &e in instance.edges_of_machine(u) {
                let q = instance.edge(e).accept_prob;
                for l in 1..=levels {
                    for tp in 1..t {
                        row[col(e, l, tp)] += q * tail(l, t - tp + 1);
                    }
                    row[col(e, l, t)] += q;
                }
            }
            a.push(row);
            b.push(1.0);
        }
    }
    let theta_max = instance.theta_max() as f64;
    for u in 0..instance.num_machines() {
        let Budget::Finite(delta) = instance.budget(u) else {
            continue;
        };
        let mut row = vec![0.0; n];
        for &e in instance.edges_of_machine(u) {
            let q = instance.edge(e).accept_prob;
            for l in 1..=levels {
                for t in 1..=horizon {
                    row[col(e, l, t)] += theta_max * q * tail(l, horizon - t + 1)
                        + (1.0 - q) * instance.theta(l) as f64;
                }
            }
        }
        a.push(row);
        b.push(delta as f64 + theta_max - 1.0);
    }
    for v in 0..instance.num_tasks() {
        for t in 1..=horizon {
            let mut row = vec![0.0; n];
            for &e in instance.edges_of_task(v) {
                for l in 1..=levels {
                    row[col(e, l, t)] += 1.0;
                }
            }
            a.push(row);
            b.push(instance.arrival(v, t));
        }
    }
    for v in 0..instance.num_tasks() {
        for &e in instance.edges_of_task(v) {
            for t in 1..=horizon {
                let mut row = vec![0.0; n];
                for l in 1..=levels {
                    row[col(e, l, t)] += 1.0;
                }
                a.push(row);
                b.push(instance.arrival(v, t));
            }
        }
    }
    for u in 0..instance.num_machines() {
        for t in 1..=horizon {
            let mut row = vec![0.0; n];
            for &e in instance.edges_of_machine(u) {
                for l in 1..=levels {
                    row[col(e, l, t)] += 1.0;
                }
            }
            a.push(row);
            b.push(1.0);
        }
    }
    DenseLp { a, b, c }
}

/// Flatten a production solution into the oracle's column order.
pub fn solution_vector(instance: &Instance, solution: &omla::lp::LpSolution) -> Vec<f64> {
    let mut x =
        Vec::with_capacity(instance.num_edges() * instance.num_levels() * instance.horizon());
    for e in 0..instance.num_edges() {
        for l in 1..=instance.num_levels() {
            for t in 1..=instance.horizon() {
                x.push(solution.x(e, l, t));
            }
        }
    }
    x
}
