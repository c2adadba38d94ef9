//! Exact policy evaluation by dense linear solves.
//!
//! Only non-terminal states enter the linear systems. Terminal states carry
//! `v = 0` and `d = 0`; the policy is undefined there and every gradient sum
//! weights states through `π(s,·)`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::linalg::{LinalgError, Lu, Matrix};
use crate::mdp::Mdp;
use crate::policy::SoftmaxPolicy;

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    /// `I − γP_π` could not be factorized; the MDP violates its termination guarantee.
    Singular(LinalgError),
    /// Policy was built for a different state/action layout.
    LayoutMismatch,
    InvalidStep(f64),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Singular(e) => write!(f, "policy evaluation system is singular: {e}"),
            Self::LayoutMismatch => {
                f.write_str("policy does not match the MDP's state/action layout")
            }
            Self::InvalidStep(h) => write!(f, "finite-difference step {h} outside (0, 1e-2]"),
        }
    }
}

impl From<LinalgError> for EvalError {
    fn from(e: LinalgError) -> Self {
        Self::Singular(e)
    }
}

/// State values, action values and the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Values {
    pub v: Vec<f64>,
    /// Row-major `[s][a]`.
    pub q: Vec<f64>,
    pub rho: f64,
}

/// Everything the gradient identities need, computed without sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    /// Unnormalized discounted occupancy, zero on terminal states.
    pub d: Vec<f64>,
    pub v: Vec<f64>,
    /// Row-major `[s][a]`.
    pub q: Vec<f64>,
    pub rho: f64,
    pub grad_rho: Vec<f64>,
    num_actions: usize,
}

impl ExactSolution {
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.num_actions + a]
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
}

/// Factorization of `I − γ P_π` over the non-terminal states.
struct EvaluationSystem {
    lu: Lu,
    /// Non-terminal state for each row of the system.
    states: Vec<usize>,
}

impl EvaluationSystem {
    fn build(mdp: &Mdp, policy: &SoftmaxPolicy) -> Result<Self, EvalError> {
        check_layout(mdp, policy)?;
        let states: Vec<usize> = mdp.non_terminal_states().collect();
        let mut row_of = vec![usize::MAX; mdp.num_states()];
        for (i, &s) in states.iter().enumerate() {
            row_of[s] = i;
        }
        let n = states.len();
        let gamma = mdp.gamma();
        let mut m = Matrix::identity(n);
        for (i, &s) in states.iter().enumerate() {
            for a in 0..mdp.num_actions() {
                let pa = policy.prob(s, a);
                for (next, &p) in mdp.transition_row(s, a).iter().enumerate() {
                    let j = row_of[next];
                    if p != 0.0 && j != usize::MAX {
                        m[(i, j)] -= gamma * pa * p;
                    }
                }
            }
        }
        Ok(Self {
            lu: Lu::factor(m)?,
            states,
        })
    }

    fn values(&self, mdp: &Mdp, policy: &SoftmaxPolicy) -> Result<Values, EvalError> {
        let na = mdp.num_actions();
        let r_pi: Vec<f64> = self
            .states
            .iter()
            .map(|&s| (0..na).map(|a| policy.prob(s, a) * mdp.reward(s, a)).sum())
            .collect();
        let v_sub = self.lu.solve(&r_pi)?;
        let mut v = vec![0.0; mdp.num_states()];
        for (&s, &x) in self.states.iter().zip(&v_sub) {
            v[s] = x;
        }
        let q = action_values(mdp, &v);
        let rho = mdp.initial().iter().zip(&v).map(|(m, x)| m * x).sum();
        Ok(Values { v, q, rho })
    }

    fn occupancy(&self, mdp: &Mdp) -> Result<Vec<f64>, EvalError> {
        let mu: Vec<f64> = self.states.iter().map(|&s| mdp.initial()[s]).collect();
        let d_sub = self.lu.solve_transpose(&mu)?;
        let mut d = vec![0.0; mdp.num_states()];
        for (&s, &x) in self.states.iter().zip(&d_sub) {
            d[s] = x;
        }
        Ok(d)
    }
}

fn check_layout(mdp: &Mdp, policy: &SoftmaxPolicy) -> Result<(), EvalError> {
    let layout = policy.layout();
    let consistent = layout.num_states() == mdp.num_states()
        && layout.num_actions() == mdp.num_actions()
        && (0..mdp.num_states()).all(|s| layout.block_offset(s).is_none() == mdp.is_terminal(s));
    if consistent {
        Ok(())
    } else {
        Err(EvalError::LayoutMismatch)
    }
}

/// `q(s,a) = R(s,a) + γ Σ_{s'} P(s'|s,a) v(s')`; zero on terminal rows.
fn action_values(mdp: &Mdp, v: &[f64]) -> Vec<f64> {
    let na = mdp.num_actions();
    let mut q = vec![0.0; mdp.num_states() * na];
    for s in mdp.non_terminal_states() {
        for a in 0..na {
            let cont: f64 = mdp
                .transition_row(s, a)
                .iter()
                .zip(v)
                .map(|(p, x)| p * x)
                .sum();
            q[s * na + a] = mdp.reward(s, a) + mdp.gamma() * cont;
        }
    }
    q
}

/// Solves `(I − γP_π) v = r_π` and derives `q` and `ρ = μ0·v`.
pub fn solve_values(mdp: &Mdp, policy: &SoftmaxPolicy) -> Result<Values, EvalError> {
    EvaluationSystem::build(mdp, policy)?.values(mdp, policy)
}

/// Solves `d = μ0 + γ P_π^T d` over non-terminal states.
pub fn solve_occupancy(mdp: &Mdp, policy: &SoftmaxPolicy) -> Result<Vec<f64>, EvalError> {
    EvaluationSystem::build(mdp, policy)?.occupancy(mdp)
}

/// `Σ_s d(s) Σ_a π(s,a) g(s,a) ψ(s,a)` for a table `g` over `[s][a]`,
/// exploiting the block structure of ψ.
pub(crate) fn weighted_score_sum(
    policy: &SoftmaxPolicy,
    d: &[f64],
    mut g: impl FnMut(usize, usize) -> f64,
) -> Vec<f64> {
    let na = policy.num_actions();
    let mut out = vec![0.0; policy.num_params()];
    for (s, off) in policy.layout().blocks() {
        let probs = policy.probabilities(s).expect("non-terminal block");
        let block = &mut out[off..off + na];
        for a in 0..na {
            let weight = d[s] * probs[a] * g(s, a);
            if weight == 0.0 {
                continue;
            }
            for (b, slot) in block.iter_mut().enumerate() {
                let psi = if a == b { 1.0 - probs[b] } else { -probs[b] };
                *slot += weight * psi;
            }
        }
    }
    out
}

/// `∇ρ = Σ_s d(s) Σ_a π(s,a) q(s,a) ψ(s,a)`.
pub fn exact_policy_gradient(mdp: &Mdp, policy: &SoftmaxPolicy) -> Result<Vec<f64>, EvalError> {
    Ok(evaluate(mdp, policy)?.grad_rho)
}

/// Builds the full [`ExactSolution`] from a single factorization.
pub fn evaluate(mdp: &Mdp, policy: &SoftmaxPolicy) -> Result<ExactSolution, EvalError> {
    let system = EvaluationSystem::build(mdp, policy)?;
    let Values { v, q, rho } = system.values(mdp, policy)?;
    let d = system.occupancy(mdp)?;
    let na = mdp.num_actions();
    let grad_rho = weighted_score_sum(policy, &d, |s, a| q[s * na + a]);
    Ok(ExactSolution {
        d,
        v,
        q,
        rho,
        grad_rho,
        num_actions: na,
    })
}

/// Central differences of ρ, one coordinate at a time.
pub fn finite_difference_gradient(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    h: f64,
) -> Result<Vec<f64>, EvalError> {
    if !(h > 0.0 && h <= 1e-2) {
        return Err(EvalError::InvalidStep(h));
    }
    check_layout(mdp, policy)?;
    (0..policy.num_params())
        .map(|i| {
            let plus = solve_values(mdp, &policy.perturbed(i, h))?.rho;
            let minus = solve_values(mdp, &policy.perturbed(i, -h))?.rho;
            Ok((plus - minus) / (2.0 * h))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{make_two_arm_bandit, MdpTables};

    #[test]
    fn bandit_values_and_occupancy() {
        let mdp = make_two_arm_bandit(1.0);
        let policy = SoftmaxPolicy::new(&mdp, alloc::vec![0.3, -1.2]).unwrap();
        let sol = evaluate(&mdp, &policy).unwrap();
        assert_eq!(sol.q(0, 0), 1.0);
        assert_eq!(sol.q(0, 1), 0.0);
        assert!((sol.rho - policy.prob(0, 0)).abs() < 1e-15);
        assert!((sol.d[0] - 1.0).abs() < 1e-15);
        assert_eq!(sol.d[1], 0.0);
        assert_eq!(sol.v[1], 0.0);
    }

    #[test]
    fn self_loop_geometric_occupancy() {
        let mdp = Mdp::from_tables(MdpTables {
            num_states: 1,
            num_actions: 2,
            transition: alloc::vec![1.0, 1.0],
            reward: alloc::vec![1.0, 0.0],
            gamma: 0.9,
            initial: alloc::vec![1.0],
            terminal: alloc::vec![false],
        })
        .unwrap();
        let policy = SoftmaxPolicy::zeros(&mdp);
        let d = solve_occupancy(&mdp, &policy).unwrap();
        assert!((d[0] - 10.0).abs() < 1e-12);
        let vals = solve_values(&mdp, &policy).unwrap();
        assert!((vals.v[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn trapped_gamma_one_is_singular() {
        let mdp = Mdp::from_tables(MdpTables {
            num_states: 1,
            num_actions: 1,
            transition: alloc::vec![1.0],
            reward: alloc::vec![1.0],
            gamma: 1.0,
            initial: alloc::vec![1.0],
            terminal: alloc::vec![false],
        })
        .unwrap();
        let policy = SoftmaxPolicy::zeros(&mdp);
        assert!(matches!(
            solve_values(&mdp, &policy),
            Err(EvalError::Singular(_))
        ));
    }

    #[test]
    fn step_is_validated() {
        let mdp = make_two_arm_bandit(1.0);
        let policy = SoftmaxPolicy::zeros(&mdp);
        assert!(finite_difference_gradient(&mdp, &policy, 0.0).is_err());
        assert!(finite_difference_gradient(&mdp, &policy, 0.1).is_err());
        assert!(finite_difference_gradient(&mdp, &policy, 1e-2).is_ok());
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let bandit = make_two_arm_bandit(1.0);
        let other = crate::mdp::make_random_mdp(3, 2, 0.9, 0);
        let policy = SoftmaxPolicy::zeros(&other);
        assert_eq!(evaluate(&bandit, &policy), Err(EvalError::LayoutMismatch));
    }
}
