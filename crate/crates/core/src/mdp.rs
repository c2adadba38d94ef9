//! Tabular MDPs: storage, validation and canonical/random generators.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fingerprint::{Fingerprint, FingerprintBuilder};

/// Tolerance for probability normalization checks.
pub const PROB_TOL: f64 = 1e-12;

/// Minimum per-step probability of entering the terminal state in random MDPs.
pub const RANDOM_MDP_TERMINAL_MASS: f64 = 0.05;

/// Plain, unchecked MDP tables. `transition` is row-major `[s][a][s']`,
/// `reward` is `[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpTables {
    pub num_states: usize,
    pub num_actions: usize,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
    pub gamma: f64,
    pub initial: Vec<f64>,
    pub terminal: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MdpError {
    /// Table length disagrees with the declared state/action counts.
    Shape {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    Empty,
    Invalid(ValidationReport),
}

impl fmt::Display for MdpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Shape {
                field,
                expected,
                found,
            } => write!(f, "`{field}` has {found} entries, expected {expected}"),
            Self::Empty => f.write_str("num_states and num_actions must be positive"),
            Self::Invalid(report) => write!(f, "invalid MDP: {report}"),
        }
    }
}

/// A shape-consistent tabular MDP.
///
/// Shape is enforced on construction; the semantic invariants (stochastic
/// rows, absorbing terminals, discount range) are checked by [`validate_mdp`]
/// and enforced by [`Mdp::try_new`]. The generators always emit valid MDPs.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    tables: MdpTables,
}

impl Mdp {
    /// Wraps tables after checking only their shape.
    pub fn from_tables(tables: MdpTables) -> Result<Self, MdpError> {
        let (ns, na) = (tables.num_states, tables.num_actions);
        if ns == 0 || na == 0 {
            return Err(MdpError::Empty);
        }
        let checks = [
            ("transition", ns * na * ns, tables.transition.len()),
            ("reward", ns * na, tables.reward.len()),
            ("initial", ns, tables.initial.len()),
            ("terminal", ns, tables.terminal.len()),
        ];
        for (field, expected, found) in checks {
            if expected != found {
                return Err(MdpError::Shape {
                    field,
                    expected,
                    found,
                });
            }
        }
        Ok(Self { tables })
    }

    /// Shape check plus full validation.
    pub fn try_new(tables: MdpTables) -> Result<Self, MdpError> {
        let mdp = Self::from_tables(tables)?;
        let report = validate_mdp(&mdp);
        if report.is_valid() {
            Ok(mdp)
        } else {
            Err(MdpError::Invalid(report))
        }
    }

    pub fn tables(&self) -> &MdpTables {
        &self.tables
    }

    pub fn into_tables(self) -> MdpTables {
        self.tables
    }

    pub fn num_states(&self) -> usize {
        self.tables.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.tables.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.tables.gamma
    }

    /// Next-state distribution `P(·|s,a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let ns = self.num_states();
        let start = (s * self.num_actions() + a) * ns;
        &self.tables.transition[start..start + ns]
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition_row(s, a)[next]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.tables.reward[s * self.num_actions() + a]
    }

    pub fn initial(&self) -> &[f64] {
        &self.tables.initial
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.tables.terminal[s]
    }

    pub fn terminal(&self) -> &[bool] {
        &self.tables.terminal
    }

    pub fn non_terminal_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_states()).filter(move |&s| !self.is_terminal(s))
    }

    /// Largest absolute expected reward.
    pub fn max_abs_reward(&self) -> f64 {
        self.tables
            .reward
            .iter()
            .fold(0.0_f64, |m, r| m.max(r.abs()))
    }

    pub fn fingerprint(&self) -> Fingerprint {
        let t = &self.tables;
        FingerprintBuilder::new()
            .tag("mdp")
            .usize(t.num_states)
            .usize(t.num_actions)
            .floats(&t.transition)
            .floats(&t.reward)
            .floats(&[t.gamma])
            .floats(&t.initial)
            .bools(&t.terminal)
            .finish()
    }

    /// Same dynamics with a different discount (no validation).
    pub fn with_gamma(&self, gamma: f64) -> Self {
        let mut tables = self.tables.clone();
        tables.gamma = gamma;
        Self { tables }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    NonFinite,
    NegativeProbability,
    RowSum,
    TerminalNotAbsorbing,
    TerminalReward,
    InitialSum,
    InitialOnTerminal,
    GammaRange,
    /// γ = 1 while some state can avoid termination forever.
    TerminationNotGuaranteed,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::NonFinite => "non-finite value",
            Self::NegativeProbability => "negative probability",
            Self::RowSum => "transition row does not sum to 1",
            Self::TerminalNotAbsorbing => "terminal state is not absorbing",
            Self::TerminalReward => "terminal state has nonzero reward",
            Self::InitialSum => "initial distribution does not sum to 1",
            Self::InitialOnTerminal => "initial mass on terminal state",
            Self::GammaRange => "discount outside (0, 1]",
            Self::TerminationNotGuaranteed => {
                "gamma = 1 but a terminal state is not reachable under every policy"
            }
        };
        f.write_str(s)
    }
}

/// One violated invariant: which field, where, and by how much.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub field: &'static str,
    pub index: Vec<usize>,
    pub magnitude: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} at {:?} (magnitude {:e})",
            self.field, self.kind, self.index, self.magnitude
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter()
    }

    fn push(
        &mut self,
        kind: ViolationKind,
        field: &'static str,
        index: Vec<usize>,
        magnitude: f64,
    ) {
        self.violations.push(Violation {
            kind,
            field,
            index,
            magnitude,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("no violations");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks every MDP invariant and lists the violations. Never aborts early.
pub fn validate_mdp(mdp: &Mdp) -> ValidationReport {
    let mut report = ValidationReport::default();
    let (ns, na) = (mdp.num_states(), mdp.num_actions());

    for s in 0..ns {
        for a in 0..na {
            let row = mdp.transition_row(s, a);
            let mut finite = true;
            for (next, &p) in row.iter().enumerate() {
                if !p.is_finite() {
                    finite = false;
                    report.push(
                        ViolationKind::NonFinite,
                        "transition",
                        vec![s, a, next],
                        f64::INFINITY,
                    );
                } else if p < 0.0 {
                    report.push(
                        ViolationKind::NegativeProbability,
                        "transition",
                        vec![s, a, next],
                        -p,
                    );
                }
            }
            let r = mdp.reward(s, a);
            if !r.is_finite() {
                report.push(
                    ViolationKind::NonFinite,
                    "reward",
                    vec![s, a],
                    f64::INFINITY,
                );
            }
            if mdp.is_terminal(s) {
                let stay = row[s];
                if (stay - 1.0).abs() > PROB_TOL {
                    report.push(
                        ViolationKind::TerminalNotAbsorbing,
                        "transition",
                        vec![s, a],
                        (stay - 1.0).abs(),
                    );
                }
                if r != 0.0 && r.is_finite() {
                    report.push(ViolationKind::TerminalReward, "reward", vec![s, a], r.abs());
                }
            } else if finite {
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROB_TOL {
                    report.push(
                        ViolationKind::RowSum,
                        "transition",
                        vec![s, a],
                        (sum - 1.0).abs(),
                    );
                }
            }
        }
    }

    let mut init_finite = true;
    for (s, &m) in mdp.initial().iter().enumerate() {
        if !m.is_finite() {
            init_finite = false;
            report.push(ViolationKind::NonFinite, "initial", vec![s], f64::INFINITY);
        } else if m < 0.0 {
            report.push(ViolationKind::NegativeProbability, "initial", vec![s], -m);
        } else if m > 0.0 && mdp.is_terminal(s) {
            report.push(ViolationKind::InitialOnTerminal, "initial", vec![s], m);
        }
    }
    if init_finite {
        let sum: f64 = mdp.initial().iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            report.push(
                ViolationKind::InitialSum,
                "initial",
                vec![],
                (sum - 1.0).abs(),
            );
        }
    }

    let gamma = mdp.gamma();
    if !gamma.is_finite() {
        report.push(ViolationKind::NonFinite, "gamma", vec![], f64::INFINITY);
    } else if gamma <= 0.0 || gamma > 1.0 {
        let excess = if gamma <= 0.0 { -gamma } else { gamma - 1.0 };
        report.push(ViolationKind::GammaRange, "gamma", vec![], excess);
    } else if gamma == 1.0 {
        let trapped = states_avoiding_termination(mdp);
        if let Some(&first) = trapped.first() {
            report.push(
                ViolationKind::TerminationNotGuaranteed,
                "gamma",
                vec![first],
                trapped.len() as f64,
            );
        }
    }
    report
}

/// States from which some deterministic policy never reaches a terminal state.
///
/// Computes the set of states forced to reach a terminal with positive
/// probability whatever action is chosen: a state joins once every action has
/// a successor (in the support of P) already in the set.
pub fn states_avoiding_termination(mdp: &Mdp) -> Vec<usize> {
    let ns = mdp.num_states();
    let mut forced: Vec<bool> = mdp.terminal().to_vec();
    loop {
        let mut changed = false;
        for s in 0..ns {
            if forced[s] {
                continue;
            }
            let all_actions_escape = (0..mdp.num_actions()).all(|a| {
                mdp.transition_row(s, a)
                    .iter()
                    .enumerate()
                    .any(|(next, &p)| p > 0.0 && forced[next])
            });
            if all_actions_escape {
                forced[s] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (0..ns).filter(|&s| !forced[s]).collect()
}

/// One decision state `s0` and a terminal state `1`. Action 0 pays 1,
/// action 1 pays 0; both end the episode.
pub fn make_two_arm_bandit(gamma: f64) -> Mdp {
    let transition = vec![
        0.0, 1.0, // s0, a0
        0.0, 1.0, // s0, a1
        0.0, 1.0, // terminal
        0.0, 1.0,
    ];
    Mdp::from_tables(MdpTables {
        num_states: 2,
        num_actions: 2,
        transition,
        reward: vec![1.0, 0.0, 0.0, 0.0],
        gamma,
        initial: vec![1.0, 0.0],
        terminal: vec![false, true],
    })
    .expect("bandit tables are well-formed")
}

/// Random MDP whose last state is terminal.
///
/// Each non-terminal row is `0.05·e_terminal + 0.95·u` where `u` is a flat
/// Dirichlet draw, rewards are uniform on `[-1, 1]` and the initial
/// distribution is a flat Dirichlet draw over the non-terminal states.
/// Deterministic in `seed`.
pub fn make_random_mdp(num_states: usize, num_actions: usize, gamma: f64, seed: u64) -> Mdp {
    assert!(num_states >= 2, "random MDPs need at least 2 states");
    assert!(num_actions >= 1, "random MDPs need at least 1 action");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ns = num_states;
    let term = ns - 1;
    let mut transition = vec![0.0; ns * num_actions * ns];
    let mut reward = vec![0.0; ns * num_actions];

    for s in 0..ns {
        for a in 0..num_actions {
            let row = &mut transition[(s * num_actions + a) * ns..(s * num_actions + a + 1) * ns];
            if s == term {
                row[term] = 1.0;
                continue;
            }
            let draw = flat_dirichlet(&mut rng, ns);
            for (p, u) in row.iter_mut().zip(&draw) {
                *p = (1.0 - RANDOM_MDP_TERMINAL_MASS) * u;
            }
            row[term] += RANDOM_MDP_TERMINAL_MASS;
            renormalize(row);
            reward[s * num_actions + a] = rng.gen_range(-1.0..=1.0);
        }
    }

    let mut initial = flat_dirichlet(&mut rng, ns - 1);
    initial.push(0.0);
    renormalize(&mut initial);

    let mut terminal = vec![false; ns];
    terminal[term] = true;

    Mdp::from_tables(MdpTables {
        num_states: ns,
        num_actions,
        transition,
        reward,
        gamma,
        initial,
        terminal,
    })
    .expect("generated tables are well-formed")
}

fn flat_dirichlet<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    // Normalized Exp(1) draws; 1 - U lies in (0, 1] so the log is finite.
    let mut xs: Vec<f64> = (0..n)
        .map(|_| -libm::log(1.0 - rng.gen::<f64>()) + 1e-12)
        .collect();
    renormalize(&mut xs);
    xs
}

/// Rescales to unit sum, then folds the residual rounding into the largest entry.
fn renormalize(xs: &mut [f64]) {
    let sum: f64 = xs.iter().sum();
    for x in xs.iter_mut() {
        *x /= sum;
    }
    let resid = 1.0 - xs.iter().sum::<f64>();
    if let Some(big) = xs.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *big += resid;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandit_is_valid() {
        for gamma in [0.5, 0.9, 1.0] {
            let report = validate_mdp(&make_two_arm_bandit(gamma));
            assert!(report.is_valid(), "{report}");
        }
    }

    #[test]
    fn scaled_row_reports_row_sum_violation() {
        let mut t = make_two_arm_bandit(1.0).into_tables();
        for p in &mut t.transition[0..2] {
            *p *= 1.1;
        }
        let report = validate_mdp(&Mdp::from_tables(t).unwrap());
        let v = report
            .iter()
            .find(|v| v.kind == ViolationKind::RowSum)
            .expect("row-sum violation");
        assert_eq!(v.index, vec![0, 0]);
        assert!((v.magnitude - 0.1).abs() < 1e-12);
    }

    #[test]
    fn initial_mass_on_terminal_is_reported() {
        let mut t = make_two_arm_bandit(0.9).into_tables();
        t.initial = vec![0.5, 0.5];
        let report = validate_mdp(&Mdp::from_tables(t).unwrap());
        assert!(report
            .iter()
            .any(|v| v.kind == ViolationKind::InitialOnTerminal && v.index == vec![1]));
    }

    #[test]
    fn gamma_one_with_escapable_loop_is_rejected() {
        // State 0 can stay put forever with action 1.
        let t = MdpTables {
            num_states: 2,
            num_actions: 2,
            transition: vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0],
            reward: vec![1.0, 0.0, 0.0, 0.0],
            gamma: 1.0,
            initial: vec![1.0, 0.0],
            terminal: vec![false, true],
        };
        let mdp = Mdp::from_tables(t).unwrap();
        assert_eq!(states_avoiding_termination(&mdp), vec![0]);
        let report = validate_mdp(&mdp);
        assert!(report
            .iter()
            .any(|v| v.kind == ViolationKind::TerminationNotGuaranteed));
        assert!(validate_mdp(&mdp.with_gamma(0.9)).is_valid());
    }

    #[test]
    fn gamma_out_of_range() {
        for g in [0.0, -0.5, 1.5] {
            let report = validate_mdp(&make_two_arm_bandit(0.9).with_gamma(g));
            assert!(report.iter().any(|v| v.kind == ViolationKind::GammaRange));
        }
    }

    #[test]
    fn terminal_with_reward_is_reported() {
        let mut t = make_two_arm_bandit(0.9).into_tables();
        t.reward[2] = 3.0;
        let report = validate_mdp(&Mdp::from_tables(t).unwrap());
        assert!(report
            .iter()
            .any(|v| v.kind == ViolationKind::TerminalReward && v.magnitude == 3.0));
    }

    #[test]
    fn shape_errors() {
        let mut t = make_two_arm_bandit(0.9).into_tables();
        t.reward.pop();
        assert!(matches!(
            Mdp::from_tables(t),
            Err(MdpError::Shape {
                field: "reward",
                ..
            })
        ));
    }

    #[test]
    fn random_mdp_is_deterministic_and_seed_sensitive() {
        let a = make_random_mdp(6, 3, 0.9, 1);
        let b = make_random_mdp(6, 3, 0.9, 1);
        let c = make_random_mdp(6, 3, 0.9, 2);
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.tables().transition, c.tables().transition);
    }

    #[test]
    fn random_mdps_validate_over_many_seeds() {
        for seed in 0..1000 {
            let ns = 2 + (seed as usize % 9);
            let na = 2 + (seed as usize % 4);
            let mdp = make_random_mdp(ns, na, 0.9, seed);
            let report = validate_mdp(&mdp);
            assert!(report.is_valid(), "seed {seed}: {report}");
            for s in mdp.non_terminal_states() {
                for a in 0..na {
                    assert!(mdp.transition(s, a, ns - 1) >= RANDOM_MDP_TERMINAL_MASS - 1e-15);
                }
            }
        }
    }
}
