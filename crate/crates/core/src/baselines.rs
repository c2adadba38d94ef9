//! Baseline tables `b(s,a)` and the ways to build them: constant and
//! state-only families, random tables, model-based action values, linear
//! parameterized baselines `b_x(s,a) = x·φ(s,a)`, and the joint fit of
//! `f_w + b_x` to `q`.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::exact::{evaluate, EvalError, ExactSolution};
use crate::fingerprint::{Fingerprint, FingerprintBuilder};
use crate::linalg::{dot, min_norm_solve, LinalgError, Matrix, DEFAULT_RCOND};
use crate::mdp::Mdp;
use crate::policy::{ParamLayout, SoftmaxPolicy};

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineError {
    WrongLength { expected: usize, found: usize },
    NonFinite { state: usize, action: usize },
    DimensionMismatch,
    UnknownKind(String),
    Eval(EvalError),
    Linalg(LinalgError),
}

impl fmt::Display for BaselineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::WrongLength { expected, found } => {
                write!(f, "table has {found} entries, expected {expected}")
            }
            Self::NonFinite { state, action } => {
                write!(f, "non-finite entry at ({state}, {action})")
            }
            Self::DimensionMismatch => f.write_str("state/action dimensions do not match"),
            Self::UnknownKind(k) => write!(f, "unknown baseline kind `{k}`"),
            Self::Eval(e) => write!(f, "{e}"),
            Self::Linalg(e) => write!(f, "{e}"),
        }
    }
}

impl From<EvalError> for BaselineError {
    fn from(e: EvalError) -> Self {
        Self::Eval(e)
    }
}

impl From<LinalgError> for BaselineError {
    fn from(e: LinalgError) -> Self {
        Self::Linalg(e)
    }
}

/// Where a baseline table came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Zero,
    StateValue,
    Constant,
    RandomSeeded,
    ModelBased,
    Parameterized,
    /// The exact action values of the evaluated policy.
    ActionValue,
    /// Read from a file or supplied by the caller.
    Supplied,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::StateValue => "state_value",
            Self::Constant => "constant",
            Self::RandomSeeded => "random_seeded",
            Self::ModelBased => "model_based",
            Self::Parameterized => "parameterized",
            Self::ActionValue => "action_value",
            Self::Supplied => "supplied",
        }
    }
}

/// A finite table `b[s][a]` with a content fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    num_states: usize,
    num_actions: usize,
    table: Vec<f64>,
    provenance: Provenance,
    fingerprint: Fingerprint,
}

impl Baseline {
    pub fn from_table(
        num_states: usize,
        num_actions: usize,
        table: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self, BaselineError> {
        if table.len() != num_states * num_actions {
            return Err(BaselineError::WrongLength {
                expected: num_states * num_actions,
                found: table.len(),
            });
        }
        if let Some(i) = table.iter().position(|x| !x.is_finite()) {
            return Err(BaselineError::NonFinite {
                state: i / num_actions,
                action: i % num_actions,
            });
        }
        let fingerprint = FingerprintBuilder::new()
            .tag("baseline")
            .usize(num_states)
            .usize(num_actions)
            .floats(&table)
            .finish();
        Ok(Self {
            num_states,
            num_actions,
            table,
            provenance,
            fingerprint,
        })
    }

    fn for_mdp(mdp: &Mdp, table: Vec<f64>, provenance: Provenance) -> Result<Self, BaselineError> {
        Self::from_table(mdp.num_states(), mdp.num_actions(), table, provenance)
    }

    /// Lifts a state-only baseline to `b(s,a) = b(s)`.
    pub fn state_only(
        mdp: &Mdp,
        values: &[f64],
        provenance: Provenance,
    ) -> Result<Self, BaselineError> {
        if values.len() != mdp.num_states() {
            return Err(BaselineError::WrongLength {
                expected: mdp.num_states(),
                found: values.len(),
            });
        }
        let na = mdp.num_actions();
        let table = values
            .iter()
            .flat_map(|&v| core::iter::repeat_n(v, na))
            .collect();
        Self::for_mdp(mdp, table, provenance)
    }

    /// `b = q` for the evaluated policy.
    pub fn from_q(mdp: &Mdp, exact: &ExactSolution) -> Self {
        Self::for_mdp(mdp, exact.q.clone(), Provenance::ActionValue).expect("q is finite")
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.table[s * self.num_actions + a]
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    /// True when every row is constant over actions.
    pub fn is_state_only(&self) -> bool {
        self.table
            .chunks(self.num_actions)
            .all(|row| row.iter().all(|&x| x == row[0]))
    }
}

/// Factory selector for the simple baseline families.
#[derive(Debug, Clone, PartialEq)]
pub enum BaselineKind {
    Zero,
    StateValue,
    Constant(f64),
    /// i.i.d. uniform entries on `[lo, hi]`.
    RandomSeeded {
        lo: f64,
        hi: f64,
        seed: u64,
    },
}

impl FromStr for BaselineKind {
    type Err = BaselineError;

    /// Parses `zero`, `state-value`, `constant:C` or `random:LO:HI:SEED`.
    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        let unknown = || BaselineError::UnknownKind(spec.to_string());
        let mut parts = spec.split(':');
        let head = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| unknown());
        match (head, args.as_slice()) {
            ("zero", []) => Ok(Self::Zero),
            ("state-value" | "state_value", []) => Ok(Self::StateValue),
            ("constant", [c]) => {
                let c = num(c)?;
                if !c.is_finite() {
                    return Err(unknown());
                }
                Ok(Self::Constant(c))
            }
            ("random" | "random_seeded", [lo, hi, seed]) => {
                let (lo, hi) = (num(lo)?, num(hi)?);
                let seed = seed.trim().parse::<u64>().map_err(|_| unknown())?;
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(unknown());
                }
                Ok(Self::RandomSeeded { lo, hi, seed })
            }
            _ => Err(unknown()),
        }
    }
}

pub fn make_baseline(
    kind: &BaselineKind,
    mdp: &Mdp,
    _policy: &SoftmaxPolicy,
    exact: &ExactSolution,
) -> Baseline {
    let n = mdp.num_states() * mdp.num_actions();
    let built = match *kind {
        BaselineKind::Zero => Baseline::for_mdp(mdp, vec![0.0; n], Provenance::Zero),
        BaselineKind::StateValue => Baseline::state_only(mdp, &exact.v, Provenance::StateValue),
        BaselineKind::Constant(c) => Baseline::for_mdp(mdp, vec![c; n], Provenance::Constant),
        BaselineKind::RandomSeeded { lo, hi, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let table = (0..n)
                .map(|_| if lo < hi { rng.gen_range(lo..=hi) } else { lo })
                .collect();
            Baseline::for_mdp(mdp, table, Provenance::RandomSeeded)
        }
    };
    built.expect("factory tables are finite and well-shaped")
}

/// `b(s,a) = q_approx(s,a)`: action values of the same policy in a model MDP.
pub fn model_based_baseline(
    true_mdp: &Mdp,
    approx_mdp: &Mdp,
    policy: &SoftmaxPolicy,
) -> Result<Baseline, BaselineError> {
    if true_mdp.num_states() != approx_mdp.num_states()
        || true_mdp.num_actions() != approx_mdp.num_actions()
    {
        return Err(BaselineError::DimensionMismatch);
    }
    let approx = evaluate(approx_mdp, policy)?;
    Baseline::for_mdp(true_mdp, approx.q, Provenance::ModelBased)
}

/// Feature tensor `φ[s][a][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    num_states: usize,
    num_actions: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureTable {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        dim: usize,
        data: Vec<f64>,
    ) -> Result<Self, BaselineError> {
        let expected = num_states * num_actions * dim;
        if data.len() != expected {
            return Err(BaselineError::WrongLength {
                expected,
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            let pair = i / dim.max(1);
            return Err(BaselineError::NonFinite {
                state: pair / num_actions,
                action: pair % num_actions,
            });
        }
        Ok(Self {
            num_states,
            num_actions,
            dim,
            data,
        })
    }

    /// All-zero features of the given dimension.
    pub fn zeros(mdp: &Mdp, dim: usize) -> Self {
        Self {
            num_states: mdp.num_states(),
            num_actions: mdp.num_actions(),
            dim,
            data: vec![0.0; mdp.num_states() * mdp.num_actions() * dim],
        }
    }

    /// One indicator per non-terminal (s,a) pair, in parameter order.
    pub fn one_hot(mdp: &Mdp) -> Self {
        let layout = ParamLayout::new(mdp);
        let mut table = Self::zeros(mdp, layout.len());
        for (s, off) in layout.blocks() {
            for a in 0..mdp.num_actions() {
                table.row_mut(s, a)[off + a] = 1.0;
            }
        }
        table
    }

    /// One indicator per non-terminal state, shared across actions.
    pub fn state_indicator(mdp: &Mdp) -> Self {
        let states: Vec<usize> = mdp.non_terminal_states().collect();
        let mut table = Self::zeros(mdp, states.len());
        for (k, &s) in states.iter().enumerate() {
            for a in 0..mdp.num_actions() {
                table.row_mut(s, a)[k] = 1.0;
            }
        }
        table
    }

    /// i.i.d. standard normal features, deterministic in `seed`.
    pub fn random_gaussian(mdp: &Mdp, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = mdp.num_states() * mdp.num_actions() * dim;
        Self {
            num_states: mdp.num_states(),
            num_actions: mdp.num_actions(),
            dim,
            data: (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        }
    }

    /// `φ'(s,a) = M φ(s,a)` for a `dim' × dim` matrix `M`.
    pub fn transformed(&self, m: &Matrix) -> Self {
        assert_eq!(m.cols(), self.dim);
        let mut data = Vec::with_capacity(self.num_states * self.num_actions * m.rows());
        for pair in self
            .data
            .chunks(self.dim.max(1))
            .take(self.num_states * self.num_actions)
        {
            if self.dim == 0 {
                data.extend(core::iter::repeat_n(0.0, m.rows()));
            } else {
                data.extend(m.mul_vec(pair));
            }
        }
        Self {
            num_states: self.num_states,
            num_actions: self.num_actions,
            dim: m.rows(),
            data,
        }
    }

    /// Features stacked as `[self(s,a); other(s,a)]`.
    pub fn concat(&self, other: &Self) -> Self {
        assert_eq!(
            (self.num_states, self.num_actions),
            (other.num_states, other.num_actions)
        );
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                data.extend_from_slice(self.row(s, a));
                data.extend_from_slice(other.row(s, a));
            }
        }
        Self {
            num_states: self.num_states,
            num_actions: self.num_actions,
            dim: self.dim + other.dim,
            data,
        }
    }

    /// Score features ψ(s,a) of `policy` as a feature table (zero on terminal states).
    pub fn from_scores(policy: &SoftmaxPolicy) -> Self {
        let layout = policy.layout();
        let (ns, na, n) = (layout.num_states(), layout.num_actions(), layout.len());
        let mut data = vec![0.0; ns * na * n];
        for (s, _) in layout.blocks() {
            for a in 0..na {
                let psi = policy.score_features(s, a).expect("non-terminal block");
                data[(s * na + a) * n..(s * na + a + 1) * n].copy_from_slice(&psi);
            }
        }
        Self {
            num_states: ns,
            num_actions: na,
            dim: n,
            data,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.dim;
        &self.data[start..start + self.dim]
    }

    fn row_mut(&mut self, s: usize, a: usize) -> &mut [f64] {
        let start = (s * self.num_actions + a) * self.dim;
        &mut self.data[start..start + self.dim]
    }

    fn matches(&self, mdp: &Mdp) -> bool {
        self.num_states == mdp.num_states() && self.num_actions == mdp.num_actions()
    }
}

/// Linear baseline `b_x(s,a) = x·φ(s,a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBaseline {
    pub x: Vec<f64>,
    pub features: FeatureTable,
    /// Numerical rank of the weighted feature Gram matrix.
    pub rank: usize,
}

impl ParamBaseline {
    pub fn evaluate(&self, s: usize, a: usize) -> f64 {
        dot(&self.x, self.features.row(s, a))
    }

    pub fn to_baseline(&self) -> Baseline {
        let (ns, na) = (self.features.num_states, self.features.num_actions);
        let table = (0..ns)
            .flat_map(|s| (0..na).map(move |a| (s, a)))
            .map(|(s, a)| self.evaluate(s, a))
            .collect();
        Baseline::from_table(ns, na, table, Provenance::Parameterized)
            .expect("finite features and weights give a finite table")
    }
}

struct WeightedFit {
    x: Vec<f64>,
    rank: usize,
}

/// Min-norm solution of `min Σ_s d(s) Σ_a π(s,a) (x·φ(s,a) − q(s,a))²`.
fn weighted_fit(
    policy: &SoftmaxPolicy,
    exact: &ExactSolution,
    features: &FeatureTable,
) -> Result<WeightedFit, BaselineError> {
    let k = features.dim();
    let mut gram = Matrix::zeros(k, k);
    let mut rhs = vec![0.0; k];
    for (s, _) in policy.layout().blocks() {
        let probs = policy.probabilities(s).expect("non-terminal block");
        for (a, &p) in probs.iter().enumerate() {
            let weight = exact.d[s] * p;
            if weight == 0.0 {
                continue;
            }
            let phi = features.row(s, a);
            gram.add_outer(weight, phi, phi);
            let wq = weight * exact.q(s, a);
            for (r, f) in rhs.iter_mut().zip(phi) {
                *r += wq * f;
            }
        }
    }
    let sol = min_norm_solve(&gram, &rhs, DEFAULT_RCOND)?;
    Ok(WeightedFit {
        x: sol.x,
        rank: sol.rank,
    })
}

/// Fits `b_x ≈ q` under weights `d(s)π(s,a)`, before any critic is fit.
pub fn fit_param_baseline(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    exact: &ExactSolution,
    features: &FeatureTable,
) -> Result<ParamBaseline, BaselineError> {
    if !features.matches(mdp) {
        return Err(BaselineError::DimensionMismatch);
    }
    let fit = weighted_fit(policy, exact, features)?;
    Ok(ParamBaseline {
        x: fit.x,
        features: features.clone(),
        rank: fit.rank,
    })
}

/// Result of fitting `q̂_{w,x} = f_w + b_x` to `q` in one least-squares problem.
#[derive(Debug, Clone, PartialEq)]
pub struct JointFit {
    pub w: Vec<f64>,
    pub x: Vec<f64>,
    /// `q̂(s,a)` row-major over `[s][a]`; zero on terminal states.
    pub q_hat: Vec<f64>,
    pub rank: usize,
}

impl JointFit {
    /// The `b_x` half of the joint approximator as a standalone baseline.
    pub fn param_baseline(&self, features: &FeatureTable) -> ParamBaseline {
        ParamBaseline {
            x: self.x.clone(),
            features: features.clone(),
            rank: self.rank,
        }
    }
}

/// Min-norm weighted least squares of `q` onto `[ψ(s,a); φ(s,a)]`.
pub fn joint_fit(
    mdp: &Mdp,
    policy: &SoftmaxPolicy,
    exact: &ExactSolution,
    features: &FeatureTable,
) -> Result<JointFit, BaselineError> {
    if !features.matches(mdp) {
        return Err(BaselineError::DimensionMismatch);
    }
    let stacked = FeatureTable::from_scores(policy).concat(features);
    let fit = weighted_fit(policy, exact, &stacked)?;
    let n = policy.num_params();
    let na = mdp.num_actions();
    let mut q_hat = vec![0.0; mdp.num_states() * na];
    for (s, _) in policy.layout().blocks() {
        for a in 0..na {
            q_hat[s * na + a] = dot(&fit.x, stacked.row(s, a));
        }
    }
    let (w, x) = fit.x.split_at(n);
    Ok(JointFit {
        w: w.to_vec(),
        x: x.to_vec(),
        q_hat,
        rank: fit.rank,
    })
}
