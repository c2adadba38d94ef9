//! Test-only oracles. Each works straight from the MDP tables and θ and
//! shares no code path with the library's solvers.
#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]


use pgcompat_core::{Mdp, SoftmaxPolicy};

/// Softmax over one logit row, written out independently of the crate.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// π as a dense `[s][a]` table from θ; terminal rows are zero.
pub fn policy_table(mdp: &Mdp, theta: &[f64]) -> Vec<Vec<f64>> {
    let na = mdp.num_actions();
    let mut next = 0;
    (0..mdp.num_states())
        .map(|s| {
            if mdp.is_terminal(s) {
                vec![0.0; na]
            } else {
                let row = softmax(&theta[next..next + na]);
                next += na;
                row
            }
        })
        .collect()
}

/// Value iteration for a fixed policy: `v ← r_π + γ P_π v`, `sweeps` times.
pub fn value_iteration(mdp: &Mdp, theta: &[f64], sweeps: usize) -> Vec<f64> {
    let pi = policy_table(mdp, theta);
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut v = vec![0.0; ns];
    for _ in 0..sweeps {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            if mdp.is_terminal(s) {
                continue;
            }
            for a in 0..na {
                let cont: f64 = (0..ns).map(|j| mdp.transition(s, a, j) * v[j]).sum();
                next[s] += pi[s][a] * (mdp.reward(s, a) + mdp.gamma() * cont);
            }
        }
        v = next;
    }
    v
}

/// `ρ(θ)` by value iteration.
pub fn rho_by_iteration(mdp: &Mdp, theta: &[f64], sweeps: usize) -> f64 {
    let v = value_iteration(mdp, theta, sweeps);
    mdp.initial().iter().zip(&v).map(|(m, x)| m * x).sum()
}

/// Truncated power series `Σ_{t=0}^{T} γ^t (P_π^T)^t μ0`, restricted to
/// non-terminal states.
pub fn occupancy_series(mdp: &Mdp, theta: &[f64], terms: usize) -> Vec<f64> {
    let pi = policy_table(mdp, theta);
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut dist: Vec<f64> = mdp.initial().to_vec();
    let mut total = vec![0.0; ns];
    let mut discount = 1.0;
    for _ in 0..=terms {
        for s in 0..ns {
            if !mdp.is_terminal(s) {
                total[s] += discount * dist[s];
            }
        }
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            if mdp.is_terminal(s) {
                continue;
            }
            for a in 0..na {
                for j in 0..ns {
                    next[j] += dist[s] * pi[s][a] * mdp.transition(s, a, j);
                }
            }
        }
        dist = next;
        discount *= mdp.gamma();
    }
    total
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

pub fn rel_max_err(a: &[f64], b: &[f64]) -> f64 {
    max_abs_diff(a, b) / max_abs(b).max(f64::EPSILON)
}

/// Random test case generator cycling through sizes and discounts.
pub fn ensemble_case(i: u64) -> (Mdp, SoftmaxPolicy) {
    let ns = 3 + (i as usize * 7) % 18;
    let na = 2 + (i as usize * 3) % 4;
    let gamma = [0.5, 0.9, 0.99][i as usize % 3];
    let mdp = pgcompat_core::make_random_mdp(ns, na, gamma, 1000 + i);
    let policy = SoftmaxPolicy::random(&mdp, 2.0, 5000 + i);
    (mdp, policy)
}
