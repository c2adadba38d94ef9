//! Tabular softmax policy and its score features.
//!
//! Parameters are one logit per non-terminal (state, action) pair, flattened
//! row-major by state then action, skipping terminal states. That ordering is
//! shared by every gradient and critic weight vector in the crate.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fingerprint::{Fingerprint, FingerprintBuilder};
use crate::mdp::Mdp;

/// Accepted logit range (inclusive).
pub const MAX_LOGIT: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyError {
    TerminalState(usize),
    StateOutOfRange(usize),
    ActionOutOfRange(usize),
    WrongLength { expected: usize, found: usize },
    LogitOutOfRange { index: usize, value: f64 },
}

impl fmt::Display for PolicyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TerminalState(s) => {
                write!(f, "state {s} is terminal; the policy is undefined there")
            }
            Self::StateOutOfRange(s) => write!(f, "state {s} out of range"),
            Self::ActionOutOfRange(a) => write!(f, "action {a} out of range"),
            Self::WrongLength { expected, found } => {
                write!(f, "theta has {found} entries, expected {expected}")
            }
            Self::LogitOutOfRange { index, value } => write!(
                f,
                "theta[{index}] = {value} outside [-{MAX_LOGIT}, {MAX_LOGIT}]"
            ),
        }
    }
}

/// Maps non-terminal states to their block of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    num_states: usize,
    num_actions: usize,
    offsets: Vec<Option<usize>>,
    len: usize,
}

impl ParamLayout {
    pub fn new(mdp: &Mdp) -> Self {
        let na = mdp.num_actions();
        let mut next = 0;
        let offsets = (0..mdp.num_states())
            .map(|s| {
                if mdp.is_terminal(s) {
                    None
                } else {
                    let off = next;
                    next += na;
                    Some(off)
                }
            })
            .collect();
        Self {
            num_states: mdp.num_states(),
            num_actions: na,
            offsets,
            len: next,
        }
    }

    /// Total parameter count n_θ.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// First flat index of state `s`'s block, `None` for terminal states.
    pub fn block_offset(&self, s: usize) -> Option<usize> {
        self.offsets.get(s).copied().flatten()
    }

    pub fn index(&self, s: usize, a: usize) -> Option<usize> {
        if a >= self.num_actions {
            return None;
        }
        self.block_offset(s).map(|o| o + a)
    }

    /// `(state, block_offset)` for every non-terminal state, in order.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.offsets
            .iter()
            .enumerate()
            .filter_map(|(s, o)| o.map(|o| (s, o)))
    }

    /// Inverse of [`ParamLayout::index`].
    pub fn pair(&self, index: usize) -> Option<(usize, usize)> {
        self.blocks()
            .find(|&(_, o)| index >= o && index < o + self.num_actions)
            .map(|(s, o)| (s, index - o))
    }
}

/// Softmax policy `π(s,a) ∝ exp θ[s][a]` over non-terminal states.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    layout: ParamLayout,
    theta: Vec<f64>,
    probs: Vec<f64>,
}

impl SoftmaxPolicy {
    pub fn new(mdp: &Mdp, theta: Vec<f64>) -> Result<Self, PolicyError> {
        Self::with_layout(ParamLayout::new(mdp), theta)
    }

    pub fn with_layout(layout: ParamLayout, theta: Vec<f64>) -> Result<Self, PolicyError> {
        if theta.len() != layout.len() {
            return Err(PolicyError::WrongLength {
                expected: layout.len(),
                found: theta.len(),
            });
        }
        if let Some((index, &value)) = theta
            .iter()
            .enumerate()
            .find(|(_, t)| t.is_nan() || t.abs() > MAX_LOGIT)
        {
            return Err(PolicyError::LogitOutOfRange { index, value });
        }
        Ok(Self::build(layout, theta))
    }

    pub fn zeros(mdp: &Mdp) -> Self {
        let layout = ParamLayout::new(mdp);
        let theta = vec![0.0; layout.len()];
        Self::build(layout, theta)
    }

    /// Logits i.i.d. uniform on `[-scale, scale]` (scale clamped to the logit range).
    pub fn random(mdp: &Mdp, scale: f64, seed: u64) -> Self {
        let layout = ParamLayout::new(mdp);
        let scale = scale.abs().min(MAX_LOGIT);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = (0..layout.len())
            .map(|_| {
                if scale > 0.0 {
                    rng.gen_range(-scale..=scale)
                } else {
                    0.0
                }
            })
            .collect();
        Self::build(layout, theta)
    }

    fn build(layout: ParamLayout, theta: Vec<f64>) -> Self {
        let mut probs = vec![0.0; theta.len()];
        let na = layout.num_actions();
        for (_, off) in layout.blocks() {
            softmax_into(&theta[off..off + na], &mut probs[off..off + na]);
        }
        Self {
            layout,
            theta,
            probs,
        }
    }

    /// Copy with `theta[index] += delta`, bypassing the logit range check so
    /// finite differences work at the boundary.
    pub fn perturbed(&self, index: usize, delta: f64) -> Self {
        let mut theta = self.theta.clone();
        theta[index] += delta;
        Self::build(self.layout.clone(), theta)
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// n_θ
    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    pub fn num_actions(&self) -> usize {
        self.layout.num_actions()
    }

    pub fn probabilities(&self, s: usize) -> Result<&[f64], PolicyError> {
        let off = self.offset(s)?;
        Ok(&self.probs[off..off + self.num_actions()])
    }

    /// π(s,a), or 0 for terminal states.
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.layout.index(s, a).map_or(0.0, |i| self.probs[i])
    }

    /// Dense ψ(s,a) = ∂/∂θ ln π(s,a,θ), length n_θ.
    pub fn score_features(&self, s: usize, a: usize) -> Result<Vec<f64>, PolicyError> {
        let off = self.offset(s)?;
        let na = self.num_actions();
        if a >= na {
            return Err(PolicyError::ActionOutOfRange(a));
        }
        let mut psi = vec![0.0; self.num_params()];
        for (b, slot) in psi[off..off + na].iter_mut().enumerate() {
            *slot = indicator(a == b) - self.probs[off + b];
        }
        Ok(psi)
    }

    /// The nonzero block of ψ(s,a): entry `b` is `1{a=b} − π(s,b)`.
    pub fn score_block(&self, s: usize, a: usize) -> Result<Vec<f64>, PolicyError> {
        let probs = self.probabilities(s)?;
        if a >= probs.len() {
            return Err(PolicyError::ActionOutOfRange(a));
        }
        Ok(probs
            .iter()
            .enumerate()
            .map(|(b, p)| indicator(a == b) - p)
            .collect())
    }

    /// ln π(s,a,θ) evaluated stably.
    pub fn log_prob(&self, s: usize, a: usize) -> Result<f64, PolicyError> {
        let off = self.offset(s)?;
        let na = self.num_actions();
        if a >= na {
            return Err(PolicyError::ActionOutOfRange(a));
        }
        let logits = &self.theta[off..off + na];
        let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = max + libm::log(logits.iter().map(|&x| libm::exp(x - max)).sum::<f64>());
        Ok(logits[a] - lse)
    }

    pub fn fingerprint(&self) -> Fingerprint {
        FingerprintBuilder::new()
            .tag("softmax")
            .usize(self.layout.num_states())
            .usize(self.layout.num_actions())
            .floats(&self.theta)
            .finish()
    }

    fn offset(&self, s: usize) -> Result<usize, PolicyError> {
        if s >= self.layout.num_states() {
            return Err(PolicyError::StateOutOfRange(s));
        }
        self.layout
            .block_offset(s)
            .ok_or(PolicyError::TerminalState(s))
    }
}

/// Free-function form of [`SoftmaxPolicy::probabilities`].
pub fn policy_probabilities(policy: &SoftmaxPolicy, s: usize) -> Result<&[f64], PolicyError> {
    policy.probabilities(s)
}

/// Free-function form of [`SoftmaxPolicy::score_features`].
pub fn score_features(policy: &SoftmaxPolicy, s: usize, a: usize) -> Result<Vec<f64>, PolicyError> {
    policy.score_features(s, a)
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Max-subtracted softmax.
fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(logits) {
        *o = libm::exp(x - max);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{make_random_mdp, make_two_arm_bandit};

    #[test]
    fn closed_form_probabilities() {
        let mdp = make_two_arm_bandit(1.0);
        let p = SoftmaxPolicy::zeros(&mdp);
        assert_eq!(p.probabilities(0).unwrap(), &[0.5, 0.5]);

        let p = SoftmaxPolicy::new(&mdp, vec![libm::log(3.0), 0.0]).unwrap();
        let probs = p.probabilities(0).unwrap();
        assert!((probs[0] - 0.75).abs() < 1e-15 && (probs[1] - 0.25).abs() < 1e-15);

        for c in [-50.0, -7.3, 12.0, 50.0] {
            let p = SoftmaxPolicy::new(&mdp, vec![c, c]).unwrap();
            assert_eq!(p.probabilities(0).unwrap(), &[0.5, 0.5]);
        }
    }

    #[test]
    fn terminal_queries_are_rejected() {
        let mdp = make_two_arm_bandit(1.0);
        let p = SoftmaxPolicy::zeros(&mdp);
        assert_eq!(p.probabilities(1), Err(PolicyError::TerminalState(1)));
        assert!(p.score_features(1, 0).is_err());
        assert_eq!(p.prob(1, 0), 0.0);
    }

    #[test]
    fn logits_outside_range_are_rejected() {
        let mdp = make_two_arm_bandit(1.0);
        assert!(SoftmaxPolicy::new(&mdp, vec![50.0, -50.0]).is_ok());
        assert!(matches!(
            SoftmaxPolicy::new(&mdp, vec![50.5, 0.0]),
            Err(PolicyError::LogitOutOfRange { index: 0, .. })
        ));
        assert!(SoftmaxPolicy::new(&mdp, vec![f64::NAN, 0.0]).is_err());
        assert!(matches!(
            SoftmaxPolicy::new(&mdp, vec![0.0]),
            Err(PolicyError::WrongLength {
                expected: 2,
                found: 1
            })
        ));
    }

    #[test]
    fn uniform_bandit_score() {
        let mdp = make_two_arm_bandit(1.0);
        let p = SoftmaxPolicy::zeros(&mdp);
        assert_eq!(p.score_features(0, 0).unwrap(), vec![0.5, -0.5]);
        assert_eq!(p.score_features(0, 1).unwrap(), vec![-0.5, 0.5]);
    }

    #[test]
    fn layout_skips_terminal_states() {
        let mdp = make_random_mdp(4, 3, 0.9, 3);
        let layout = ParamLayout::new(&mdp);
        assert_eq!(layout.len(), 9);
        assert_eq!(layout.block_offset(3), None);
        assert_eq!(layout.index(2, 1), Some(7));
        assert_eq!(layout.pair(7), Some((2, 1)));
    }
}
