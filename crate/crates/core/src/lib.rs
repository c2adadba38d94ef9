//! Exact and sampled verification of policy-gradient identities on tabular MDPs.
//!
//! The crate evaluates a softmax policy exactly (values, action values,
//! discounted occupancy, gradient), fits compatible critics `f_w = w·ψ` by
//! minimum-norm weighted least squares, and assembles the gradient from a
//! critic plus an arbitrary action-dependent baseline `b(s,a)`. When the
//! critic is fit to the residual `q − b`, the assembled vector equals `∇ρ`
//! for every `b`; when it is fit to `q` and `b` depends on the action, it
//! does not, and [`critic::bias_probe`] measures the gap.
//!
//! `no_std` with `alloc`. File formats and the command-line tool live in the
//! companion `pgcompat` crate.

#![no_std]

extern crate alloc;

pub mod baselines;
pub mod critic;
pub mod exact;
pub mod fingerprint;
pub mod linalg;
pub mod mdp;
pub mod policy;
pub mod sampling;

pub use baselines::{
    fit_param_baseline, joint_fit, make_baseline, model_based_baseline, Baseline, BaselineError,
    BaselineKind, FeatureTable, JointFit, ParamBaseline, Provenance,
};
pub use critic::{
    assemble_gradient_s2, assemble_gradient_thm1, baseline_leakage, bias_probe,
    build_normal_equations, fit_critic, BiasReport, CriticError, CriticFit, NormalEquations,
    TargetKind,
};
pub use exact::{
    evaluate, exact_policy_gradient, finite_difference_gradient, solve_occupancy, solve_values,
    EvalError, ExactSolution, Values, DEFAULT_FD_STEP,
};
pub use fingerprint::Fingerprint;
pub use mdp::{
    make_random_mdp, make_two_arm_bandit, validate_mdp, Mdp, MdpError, MdpTables, ValidationReport,
    Violation, ViolationKind,
};
pub use policy::{policy_probabilities, score_features, ParamLayout, PolicyError, SoftmaxPolicy};
pub use sampling::{
    estimate_gradient, estimate_return, simulate_episode, variance_report, Estimator,
    EstimatorKind, GradientEstimate, SamplingError, Trajectory,
};
