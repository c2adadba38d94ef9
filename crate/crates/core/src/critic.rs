//! Compatible critics and the gradient expressions assembled from them.
//!
//! A compatible critic is `f_w(s,a) = w·ψ(s,a)`. Fitting it to `q` (no
//! baseline) gives a stationary point `w*` of `L`; fitting it to `q − b` gives
//! a stationary point `w̃*` of the residual loss `L̃`. Both fits solve the
//! weighted normal equations `A w = c` with
//!
//! ```text
//! A = Σ_s d(s) Σ_a π(s,a) ψ(s,a) ψ(s,a)^T
//! c = Σ_s d(s) Σ_a π(s,a) (q(s,a) − b(s,a)) ψ(s,a)
//! ```
//!
//! `A` is always singular for a softmax policy (each state block annihilates
//! the all-ones vector), so the minimum-norm solution is returned.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::baselines::Baseline;
use crate::exact::{weighted_score_sum, ExactSolution};
use crate::fingerprint::{Fingerprint, FingerprintBuilder};
use crate::linalg::{self, max_abs_diff, min_norm_solve, norm2, Matrix, DEFAULT_RCOND};
use crate::mdp::Mdp;
use crate::policy::SoftmaxPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    /// Target `q`, loss `L`, weights `w*`.
    QValues,
    /// Target `q − b`, loss `L̃`, weights `w̃*`.
    Residual,
}

impl TargetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::QValues => "q_values",
            Self::Residual => "residual",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CriticError {
    /// The critic was fit against a different baseline, policy or MDP.
    PairingMismatch {
        expected: Fingerprint,
        found: Fingerprint,
    },
    WrongTarget {
        expected: TargetKind,
        found: TargetKind,
    },
    WrongLength {
        expected: usize,
        found: usize,
    },
    Linalg(linalg::LinalgError),
}

impl fmt::Display for CriticError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PairingMismatch { expected, found } => write!(
                f,
                "critic was fit against a different (MDP, policy, baseline) triple: expected {expected}, found {found}"
            ),
            Self::WrongTarget { expected, found } => write!(
                f,
                "critic target is `{}`, this expression needs `{}`",
                found.as_str(),
                expected.as_str()
            ),
            Self::WrongLength { expected, found } => {
                write!(f, "vector has {found} entries, expected {expected}")
            }
            Self::Linalg(e) => write!(f, "{e}"),
        }
    }
}

impl From<linalg::LinalgError> for CriticError {
    fn from(e: linalg::LinalgError) -> Self {
        Self::Linalg(e)
    }
}

/// Hash binding a critic to the exact (MDP, θ, baseline) it was fit for.
pub fn pairing_fingerprint(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    baseline: Option<&Baseline>,
) -> Fingerprint {
    let builder = FingerprintBuilder::new()
        .tag("critic-pairing")
        .fingerprint(mdp.fingerprint())
        .fingerprint(policy.fingerprint());
    match baseline {
        Some(b) => builder.tag("baseline").fingerprint(b.fingerprint()),
        None => builder.tag("none"),
    }
    .finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    pub a: Matrix,
    pub c: Vec<f64>,
}

/// Assembles `A` and `c` in fixed state-major order.
pub fn build_normal_equations(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    exact: &ExactSolution,
    baseline: Option<&Baseline>,
) -> NormalEquations {
    let n = policy.num_params();
    let na = mdp.num_actions();
    let mut a_mat = Matrix::zeros(n, n);
    for (s, off) in policy.layout().blocks() {
        let probs = policy.probabilities(s).expect("non-terminal block");
        let ds = exact.d[s];
        for (a, &pa) in probs.iter().enumerate() {
            let weight = ds * pa;
            if weight == 0.0 {
                continue;
            }
            let psi = policy.score_block(s, a).expect("non-terminal block");
            for i in 0..na {
                for j in i..na {
                    let term = weight * (psi[i] * psi[j]);
                    a_mat[(off + i, off + j)] += term;
                    if i != j {
                        a_mat[(off + j, off + i)] += term;
                    }
                }
            }
        }
    }
    let c = weighted_score_sum(policy, &exact.d, |s, a| {
        exact.q(s, a) - baseline.map_or(0.0, |b| b.get(s, a))
    });
    NormalEquations { a: a_mat, c }
}

/// A fitted compatible critic.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticFit {
    pub w: Vec<f64>,
    /// `f_w(s,a)` row-major over `[s][a]`; zero on terminal states.
    pub fitted: Vec<f64>,
    /// `L(w)` or `L̃(w)` depending on `target_kind`.
    pub loss_value: f64,
    pub target_kind: TargetKind,
    /// Numerical rank of `A`.
    pub rank: usize,
    /// `‖A w − c‖₂`
    pub normal_residual: f64,
    /// Orthonormal basis of the numerical nullspace of `A`.
    pub nullspace: Vec<Vec<f64>>,
    pairing: Fingerprint,
}

impl CriticFit {
    pub fn pairing(&self) -> Fingerprint {
        self.pairing
    }

    pub fn value(&self, s: usize, a: usize, num_actions: usize) -> f64 {
        self.fitted[s * num_actions + a]
    }

    /// Same critic with different weights (fitted table recomputed, pairing
    /// kept). Used to check that any critical point gives the same gradient.
    pub fn with_weights(&self, policy: &SoftmaxPolicy, w: Vec<f64>) -> Self {
        let fitted = fitted_table(policy, &w);
        Self {
            w,
            fitted,
            ..self.clone()
        }
    }
}

/// `f_w(s,a) = w·ψ(s,a)` as a table over `[s][a]`.
pub fn fitted_table(policy: &SoftmaxPolicy, w: &[f64]) -> Vec<f64> {
    let layout = policy.layout();
    let na = layout.num_actions();
    let mut out = vec![0.0; layout.num_states() * na];
    for (s, off) in layout.blocks() {
        let probs = policy.probabilities(s).expect("non-terminal block");
        let block = &w[off..off + na];
        let mean: f64 = block.iter().zip(probs).map(|(x, p)| x * p).sum();
        for a in 0..na {
            out[s * na + a] = block[a] - mean;
        }
    }
    out
}

/// `½ Σ_s d(s) Σ_a π(s,a) (f(s,a) − target(s,a))²`
fn weighted_loss(
    policy: &SoftmaxPolicy,
    exact: &ExactSolution,
    fitted: &[f64],
    baseline: Option<&Baseline>,
) -> f64 {
    let na = policy.num_actions();
    let mut loss = 0.0;
    for (s, _) in policy.layout().blocks() {
        let probs = policy.probabilities(s).expect("non-terminal block");
        for a in 0..na {
            let target = exact.q(s, a) - baseline.map_or(0.0, |b| b.get(s, a));
            let err = fitted[s * na + a] - target;
            loss += exact.d[s] * probs[a] * err * err;
        }
    }
    0.5 * loss
}

/// Minimum-norm critical point of `L` (no baseline) or `L̃` (with baseline).
pub fn fit_critic(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    exact: &ExactSolution,
    baseline: Option<&Baseline>,
) -> Result<CriticFit, CriticError> {
    let NormalEquations { a, c } = build_normal_equations(mdp, policy, exact, baseline);
    let sol = min_norm_solve(&a, &c, DEFAULT_RCOND)?;
    let aw = a.mul_vec(&sol.x);
    let normal_residual = norm2(&aw.iter().zip(&c).map(|(x, y)| x - y).collect::<Vec<_>>());
    let fitted = fitted_table(policy, &sol.x);
    let loss_value = weighted_loss(policy, exact, &fitted, baseline);
    Ok(CriticFit {
        w: sol.x,
        fitted,
        loss_value,
        target_kind: if baseline.is_some() {
            TargetKind::Residual
        } else {
            TargetKind::QValues
        },
        rank: sol.rank,
        normal_residual,
        nullspace: sol.nullspace,
        pairing: pairing_fingerprint(mdp, policy, baseline),
    })
}

fn check_pairing(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    critic: &CriticFit,
    baseline: Option<&Baseline>,
    expected_kind: TargetKind,
) -> Result<(), CriticError> {
    if critic.target_kind != expected_kind {
        return Err(CriticError::WrongTarget {
            expected: expected_kind,
            found: critic.target_kind,
        });
    }
    let expected = pairing_fingerprint(mdp, policy, baseline);
    if critic.pairing != expected {
        return Err(CriticError::PairingMismatch {
            expected,
            found: critic.pairing,
        });
    }
    Ok(())
}

/// `Σ_s d(s) Σ_a π(s,a) (f_{w̃*}(s,a) + b(s,a)) ψ(s,a)`, which equals `∇ρ`
/// for every baseline provided the critic was fit against that baseline.
pub fn assemble_gradient_thm1(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    exact: &ExactSolution,
    critic: &CriticFit,
    baseline: &Baseline,
) -> Result<Vec<f64>, CriticError> {
    check_pairing(mdp, policy, critic, Some(baseline), TargetKind::Residual)?;
    let na = mdp.num_actions();
    Ok(weighted_score_sum(policy, &exact.d, |s, a| {
        critic.fitted[s * na + a] + baseline.get(s, a)
    }))
}

/// `Σ_s d(s) Σ_a π(s,a) (f_{w*}(s,a) − b(s)) ψ(s,a)` with a state-only baseline.
pub fn assemble_gradient_s2(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    exact: &ExactSolution,
    critic: &CriticFit,
    state_baseline: &[f64],
) -> Result<Vec<f64>, CriticError> {
    check_pairing(mdp, policy, critic, None, TargetKind::QValues)?;
    if state_baseline.len() != mdp.num_states() {
        return Err(CriticError::WrongLength {
            expected: mdp.num_states(),
            found: state_baseline.len(),
        });
    }
    let na = mdp.num_actions();
    Ok(weighted_score_sum(policy, &exact.d, |s, a| {
        critic.fitted[s * na + a] - state_baseline[s]
    }))
}

/// `Σ_s d(s) Σ_a π(s,a) b(s,a) ψ(s,a)`. Zero for state-only baselines; for
/// action-dependent ones it is exactly the bias of the naive scheme.
pub fn baseline_leakage(
    policy: &SoftmaxPolicy,
    exact: &ExactSolution,
    baseline: &Baseline,
) -> Vec<f64> {
    weighted_score_sum(policy, &exact.d, |s, a| baseline.get(s, a))
}

/// What happens when an action-dependent baseline is plugged into the
/// action-independent form with the ordinary critic `w*`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    /// `Σ dπ (f_{w*} − b(s,a)) ψ`
    pub naive_gradient: Vec<f64>,
    pub true_gradient: Vec<f64>,
    pub leakage: Vec<f64>,
    /// `‖naive − ∇ρ‖₂`
    pub bias_norm: f64,
    /// `‖naive + leakage − ∇ρ‖∞`, zero up to rounding.
    pub decomposition_error: f64,
}

pub fn bias_probe(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    exact: &ExactSolution,
    baseline: &Baseline,
) -> Result<BiasReport, CriticError> {
    let critic = fit_critic(mdp, policy, exact, None)?;
    let na = mdp.num_actions();
    let naive_gradient = weighted_score_sum(policy, &exact.d, |s, a| {
        critic.fitted[s * na + a] - baseline.get(s, a)
    });
    let leakage = baseline_leakage(policy, exact, baseline);
    let diff: Vec<f64> = naive_gradient
        .iter()
        .zip(&exact.grad_rho)
        .map(|(x, y)| x - y)
        .collect();
    let recombined: Vec<f64> = naive_gradient
        .iter()
        .zip(&leakage)
        .map(|(x, l)| x + l)
        .collect();
    Ok(BiasReport {
        bias_norm: norm2(&diff),
        decomposition_error: max_abs_diff(&recombined, &exact.grad_rho),
        naive_gradient,
        true_gradient: exact.grad_rho.clone(),
        leakage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{make_baseline, BaselineKind};
    use crate::exact::evaluate;
    use crate::mdp::make_two_arm_bandit;

    fn bandit() -> (Mdp, SoftmaxPolicy, ExactSolution) {
        let mdp = make_two_arm_bandit(1.0);
        let policy = SoftmaxPolicy::zeros(&mdp);
        let exact = evaluate(&mdp, &policy).unwrap();
        (mdp, policy, exact)
    }

    #[test]
    fn bandit_normal_equations_by_hand() {
        // Two actions, π = (½, ½), d = 1, q = (1, 0):
        // A = Σ_a ½ ψψᵀ with ψ(a0) = (½, −½), ψ(a1) = (−½, ½) → ¼[[1,−1],[−1,1]]
        // c = ½·1·(½, −½) + ½·0·(−½, ½) = (¼, −¼)
        let (mdp, policy, exact) = bandit();
        let ne = build_normal_equations(&mdp, &policy, &exact, None);
        assert_eq!(ne.a.as_slice(), &[0.25, -0.25, -0.25, 0.25]);
        assert_eq!(ne.c, vec![0.25, -0.25]);
    }

    #[test]
    fn bandit_q_fit() {
        let (mdp, policy, exact) = bandit();
        let fit = fit_critic(&mdp, &policy, &exact, None).unwrap();
        assert_eq!(fit.target_kind, TargetKind::QValues);
        assert_eq!(fit.rank, 1);
        assert!((fit.value(0, 0, 2) - 0.5).abs() < 1e-14);
        assert!((fit.value(0, 1, 2) + 0.5).abs() < 1e-14);
        // f = q − v exactly, so the loss is ½ Σ π (v)² = ½ · 0.25
        assert!((fit.loss_value - 0.125).abs() < 1e-14);
    }

    #[test]
    fn q_baseline_gives_zero_critic() {
        let (mdp, policy, exact) = bandit();
        let b = Baseline::from_q(&mdp, &exact);
        let fit = fit_critic(&mdp, &policy, &exact, Some(&b)).unwrap();
        assert!(fit.w.iter().all(|&x| x == 0.0));
        assert!(fit.fitted.iter().all(|&x| x == 0.0));
        let g = assemble_gradient_thm1(&mdp, &policy, &exact, &fit, &b).unwrap();
        assert!(max_abs_diff(&g, &[0.25, -0.25]) < 1e-15);
    }

    #[test]
    fn mispaired_critic_is_rejected() {
        let (mdp, policy, exact) = bandit();
        let b1 = make_baseline(&BaselineKind::Constant(1.0), &mdp, &policy, &exact);
        let b2 = make_baseline(&BaselineKind::Constant(2.0), &mdp, &policy, &exact);
        let fit = fit_critic(&mdp, &policy, &exact, Some(&b1)).unwrap();
        assert!(matches!(
            assemble_gradient_thm1(&mdp, &policy, &exact, &fit, &b2),
            Err(CriticError::PairingMismatch { .. })
        ));
        let q_fit = fit_critic(&mdp, &policy, &exact, None).unwrap();
        assert!(matches!(
            assemble_gradient_thm1(&mdp, &policy, &exact, &q_fit, &b1),
            Err(CriticError::WrongTarget { .. })
        ));
        assert!(matches!(
            assemble_gradient_s2(&mdp, &policy, &exact, &fit, &[0.0, 0.0]),
            Err(CriticError::WrongTarget { .. })
        ));
        assert!(matches!(
            assemble_gradient_s2(&mdp, &policy, &exact, &q_fit, &[0.0]),
            Err(CriticError::WrongLength { .. })
        ));
    }

    #[test]
    fn leakage_of_q_baseline_is_the_gradient() {
        let (mdp, policy, exact) = bandit();
        let b = Baseline::from_q(&mdp, &exact);
        let leak = baseline_leakage(&policy, &exact, &b);
        assert!(max_abs_diff(&leak, &[0.25, -0.25]) < 1e-15);
        let report = bias_probe(&mdp, &policy, &exact, &b).unwrap();
        assert!((report.bias_norm - libm::sqrt(0.125)).abs() < 1e-14);
        assert!(report.decomposition_error < 1e-15);
    }
}
