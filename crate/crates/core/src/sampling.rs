//! Monte Carlo episodes and sampled gradient estimators.
//!
//! Every estimator weights step `t` by `γ^t`, matching the discount folded
//! into the occupancy `d`. Episode `i` draws from its own ChaCha stream
//! derived from `(seed, i)`, so results do not depend on evaluation order.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::Baseline;
use crate::critic::{pairing_fingerprint, CriticError, CriticFit, TargetKind};
use crate::mdp::Mdp;
use crate::policy::SoftmaxPolicy;

/// Hard upper bound on the horizon.
pub const MAX_HORIZON: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub t: usize,
    pub state: usize,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub rewards: Vec<f64>,
    pub discounted_return: f64,
    /// The horizon cap stopped the episode before a terminal state.
    pub truncated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `Σ_t γ^t R_t` recomputed from the rewards.
    pub fn recompute_return(&self, gamma: f64) -> f64 {
        let mut discount = 1.0;
        let mut total = 0.0;
        for r in &self.rewards {
            total += discount * r;
            discount *= gamma;
        }
        total
    }
}

/// Smallest `H` with `γ^H < 1e-10` and `γ^H R_max / (1 − γ) < 1e-9`, capped
/// at [`MAX_HORIZON`]. For `γ = 1` the cap itself.
pub fn horizon_cap(mdp: &Mdp) -> usize {
    let gamma = mdp.gamma();
    if gamma >= 1.0 {
        return MAX_HORIZON;
    }
    let tail_scale = mdp.max_abs_reward() / (1.0 - gamma);
    let mut g = 1.0;
    for h in 0..MAX_HORIZON {
        if g < 1e-10 && g * tail_scale < 1e-9 {
            return h;
        }
        g *= gamma;
    }
    MAX_HORIZON
}

/// Draws an index from a probability vector using one uniform variate.
fn sample_index<R: RngCore + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Rolls out one episode: `S0 ~ μ0`, `A_t ~ π(S_t,·)`, `S_{t+1} ~ P(·|S_t,A_t)`,
/// stopping at a terminal state or after `horizon` steps.
pub fn simulate_episode<R: RngCore + ?Sized>(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    horizon: usize,
    rng: &mut R,
) -> Trajectory {
    let gamma = mdp.gamma();
    let mut steps = Vec::new();
    let mut rewards = Vec::new();
    let mut discounted_return = 0.0;
    let mut discount = 1.0;
    let mut state = sample_index(rng, mdp.initial());
    let mut truncated = false;
    let mut t = 0;
    while !mdp.is_terminal(state) {
        if t >= horizon {
            truncated = true;
            break;
        }
        let probs = policy.probabilities(state).expect("non-terminal state");
        let action = sample_index(rng, probs);
        let reward = mdp.reward(state, action);
        steps.push(Step { t, state, action });
        rewards.push(reward);
        discounted_return += discount * reward;
        discount *= gamma;
        state = sample_index(rng, mdp.transition_row(state, action));
        t += 1;
    }
    Trajectory {
        steps,
        rewards,
        discounted_return,
        truncated,
    }
}

/// RNG for episode `index` under root `seed`.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Reinforce,
    ReinforceStateBaseline,
    Thm1Critic,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Reinforce => "reinforce",
            Self::ReinforceStateBaseline => "reinforce_state_baseline",
            Self::Thm1Critic => "thm1_critic",
        }
    }
}

/// A sampled gradient estimator together with whatever it needs.
#[derive(Debug, Clone, Copy)]
pub enum Estimator<'a> {
    /// `Σ_t γ^t ψ(S_t,A_t) G_t`
    Reinforce,
    /// `Σ_t γ^t ψ(S_t,A_t) (G_t − b(S_t))`
    ReinforceStateBaseline { state_baseline: &'a [f64] },
    /// `Σ_t γ^t ψ(S_t,A_t) (f_{w̃*}(S_t,A_t) + b(S_t,A_t))`
    Thm1Critic {
        critic: &'a CriticFit,
        baseline: &'a Baseline,
    },
}

impl Estimator<'_> {
    pub fn kind(&self) -> EstimatorKind {
        match self {
            Self::Reinforce => EstimatorKind::Reinforce,
            Self::ReinforceStateBaseline { .. } => EstimatorKind::ReinforceStateBaseline,
            Self::Thm1Critic { .. } => EstimatorKind::Thm1Critic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SamplingError {
    NoEpisodes,
    WrongLength { expected: usize, found: usize },
    Critic(CriticError),
}

impl fmt::Display for SamplingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NoEpisodes => f.write_str("num_episodes must be at least 1"),
            Self::WrongLength { expected, found } => {
                write!(f, "state baseline has {found} entries, expected {expected}")
            }
            Self::Critic(e) => write!(f, "{e}"),
        }
    }
}

impl From<CriticError> for SamplingError {
    fn from(e: CriticError) -> Self {
        Self::Critic(e)
    }
}

/// Running mean and variance (Welford), updated in episode order.
#[derive(Debug, Clone)]
struct Moments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((mean, m2), &xi) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = xi - *mean;
            *mean += delta / n;
            *m2 += delta * (xi - *mean);
        }
    }

    /// Unbiased sample variance; zero for a single sample.
    fn variance(&self) -> Vec<f64> {
        if self.n < 2 {
            return vec![0.0; self.mean.len()];
        }
        let denom = (self.n - 1) as f64;
        self.m2.iter().map(|m| (m / denom).max(0.0)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub mean: Vec<f64>,
    /// Per-episode sample variance of each coordinate.
    pub per_coordinate_variance: Vec<f64>,
    pub num_episodes: usize,
    pub estimator_kind: EstimatorKind,
    pub seed: u64,
    pub truncated_episodes: usize,
}

impl GradientEstimate {
    /// Standard error of the mean, per coordinate.
    pub fn standard_error(&self) -> Vec<f64> {
        let n = self.num_episodes as f64;
        self.per_coordinate_variance
            .iter()
            .map(|v| libm::sqrt(v / n))
            .collect()
    }

    /// Trace of the per-episode covariance.
    pub fn variance_trace(&self) -> f64 {
        self.per_coordinate_variance.iter().sum()
    }
}

/// Adds `weight · ψ(s,a)` into the dense gradient accumulator.
fn add_score(policy: &SoftmaxPolicy, out: &mut [f64], s: usize, a: usize, weight: f64) {
    let off = policy.layout().block_offset(s).expect("non-terminal state");
    let probs = policy.probabilities(s).expect("non-terminal state");
    for (b, (slot, p)) in out[off..off + probs.len()]
        .iter_mut()
        .zip(probs)
        .enumerate()
    {
        let psi = if a == b { 1.0 - p } else { -p };
        *slot += weight * psi;
    }
}

/// One episode's contribution to the chosen estimator.
fn episode_gradient(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    estimator: &Estimator<'_>,
    traj: &Trajectory,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|x| *x = 0.0);
    let gamma = mdp.gamma();
    let na = mdp.num_actions();
    // Returns-to-go G_t, computed backwards.
    let mut to_go = vec![0.0; traj.len()];
    let mut acc = 0.0;
    for (g, r) in to_go.iter_mut().zip(&traj.rewards).rev() {
        acc = r + gamma * acc;
        *g = acc;
    }
    let mut discount = 1.0;
    for (step, &g) in traj.steps.iter().zip(&to_go) {
        let (s, a) = (step.state, step.action);
        let signal = match estimator {
            Estimator::Reinforce => g,
            Estimator::ReinforceStateBaseline { state_baseline } => g - state_baseline[s],
            Estimator::Thm1Critic { critic, baseline } => {
                critic.fitted[s * na + a] + baseline.get(s, a)
            }
        };
        add_score(policy, out, s, a, discount * signal);
        discount *= gamma;
    }
}

fn check_estimator(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    estimator: &Estimator<'_>,
) -> Result<(), SamplingError> {
    match estimator {
        Estimator::Reinforce => Ok(()),
        Estimator::ReinforceStateBaseline { state_baseline } => {
            if state_baseline.len() == mdp.num_states() {
                Ok(())
            } else {
                Err(SamplingError::WrongLength {
                    expected: mdp.num_states(),
                    found: state_baseline.len(),
                })
            }
        }
        Estimator::Thm1Critic { critic, baseline } => {
            if critic.target_kind != TargetKind::Residual {
                return Err(CriticError::WrongTarget {
                    expected: TargetKind::Residual,
                    found: critic.target_kind,
                }
                .into());
            }
            let expected = pairing_fingerprint(mdp, policy, Some(baseline));
            if critic.pairing() != expected {
                return Err(CriticError::PairingMismatch {
                    expected,
                    found: critic.pairing(),
                }
                .into());
            }
            Ok(())
        }
    }
}

/// Empirical mean and per-coordinate variance of an estimator over
/// `num_episodes` independent episodes.
pub fn estimate_gradient(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    estimator: &Estimator<'_>,
    num_episodes: usize,
    seed: u64,
) -> Result<GradientEstimate, SamplingError> {
    if num_episodes == 0 {
        return Err(SamplingError::NoEpisodes);
    }
    check_estimator(mdp, policy, estimator)?;
    let horizon = horizon_cap(mdp);
    let dim = policy.num_params();
    let mut moments = Moments::new(dim);
    let mut scratch = vec![0.0; dim];
    let mut truncated_episodes = 0;
    for i in 0..num_episodes {
        let mut rng = episode_rng(seed, i as u64);
        let traj = simulate_episode(mdp, policy, horizon, &mut rng);
        truncated_episodes += traj.truncated as usize;
        episode_gradient(mdp, policy, estimator, &traj, &mut scratch);
        moments.push(&scratch);
    }
    Ok(GradientEstimate {
        per_coordinate_variance: moments.variance(),
        mean: moments.mean,
        num_episodes,
        estimator_kind: estimator.kind(),
        seed,
        truncated_episodes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnEstimate {
    pub mean: f64,
    pub variance: f64,
    pub num_episodes: usize,
}

impl ReturnEstimate {
    pub fn standard_error(&self) -> f64 {
        libm::sqrt(self.variance / self.num_episodes as f64)
    }
}

/// Monte Carlo estimate of ρ from discounted episode returns.
pub fn estimate_return(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    num_episodes: usize,
    seed: u64,
) -> Result<ReturnEstimate, SamplingError> {
    if num_episodes == 0 {
        return Err(SamplingError::NoEpisodes);
    }
    let horizon = horizon_cap(mdp);
    let mut moments = Moments::new(1);
    for i in 0..num_episodes {
        let mut rng = episode_rng(seed, i as u64);
        let traj = simulate_episode(mdp, policy, horizon, &mut rng);
        moments.push(&[traj.discounted_return]);
    }
    Ok(ReturnEstimate {
        mean: moments.mean[0],
        variance: moments.variance()[0],
        num_episodes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceRow {
    pub estimator_kind: EstimatorKind,
    pub estimate: GradientEstimate,
    pub variance_trace: f64,
}

/// Runs each estimator with the same seed (common random numbers: episode
/// `i` is the same trajectory for every row) and tabulates variances.
pub fn variance_report(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    estimators: &[Estimator<'_>],
    num_episodes: usize,
    seed: u64,
) -> Result<Vec<VarianceRow>, SamplingError> {
    estimators
        .iter()
        .map(|est| {
            let estimate = estimate_gradient(mdp, policy, est, num_episodes, seed)?;
            Ok(VarianceRow {
                estimator_kind: est.kind(),
                variance_trace: estimate.variance_trace(),
                estimate,
            })
        })
        .collect()
}
