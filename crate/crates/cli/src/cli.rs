//! Argument parsing and the six verbs.
//!
//! Exit codes: 0 pass, 1 numerical or identity failure, 2 input or usage error.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use pgcompat_core::linalg::{max_abs, max_abs_diff, rel_max_err};
use pgcompat_core::{
    assemble_gradient_thm1, bias_probe, evaluate, finite_difference_gradient, fit_critic,
    fit_param_baseline, make_baseline, make_random_mdp, model_based_baseline, validate_mdp,
    variance_report, Baseline, BaselineKind, Estimator, ExactSolution, Mdp, Provenance,
    SoftmaxPolicy, DEFAULT_FD_STEP,
};

use crate::format::{load_baseline_table, load_features, load_mdp, load_theta, mdp_to_json};
use crate::report::{Fields, Report, Run};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Absolute floor for the finite-difference comparison.
pub const FD_ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    VerifyThm1,
    BiasProbe,
    FitCritic,
    GradCheck,
    SampleGrad,
    GenMdp,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::VerifyThm1 => "verify-thm1",
            Command::BiasProbe => "bias-probe",
            Command::FitCritic => "fit-critic",
            Command::GradCheck => "grad-check",
            Command::SampleGrad => "sample-grad",
            Command::GenMdp => "gen-mdp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(
    name = "pgcompat",
    version,
    about = "Exact and sampled checks of compatible-critic policy gradients"
)]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    /// MDP JSON file.
    #[arg(long, conflicts_with = "generate")]
    pub mdp: Option<PathBuf>,
    /// Random MDP: states,actions,gamma,seed
    #[arg(long)]
    pub generate: Option<String>,
    /// Number of generated MDPs, seeds counting up from the --generate seed.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// zeros | random:SCALE:SEED | PATH
    #[arg(long, default_value = "zeros")]
    pub theta: String,
    /// zero | state-value | constant:C | random:LO:HI:SEED | model:PATH | param:PATH | file:PATH
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol_identity: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub tol_fd: f64,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
    /// Plug the baseline into the action-independent form with the plain critic.
    #[arg(long)]
    pub naive: bool,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numerical(_) => EXIT_FAIL,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

fn usage(m: impl fmt::Display) -> CliError {
    CliError::Usage(m.to_string())
}

fn numerical(m: impl fmt::Display) -> CliError {
    CliError::Numerical(m.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputSpec {
    File(PathBuf),
    Generate {
        states: usize,
        actions: usize,
        gamma: f64,
        seed: u64,
        count: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThetaSource {
    Zeros,
    SeededRandom { scale: f64, seed: u64 },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineSpec {
    Kind(BaselineKind),
    Model(PathBuf),
    Param(PathBuf),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub input: InputSpec,
    pub theta: ThetaSource,
    pub baseline: Option<BaselineSpec>,
    pub tol_identity: f64,
    pub tol_fd: f64,
    pub episodes: usize,
    pub seed: u64,
    pub naive: bool,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    /// Verbatim flag values echoed into the report.
    raw: Fields,
}

fn parse_generate(spec: &str, count: usize) -> Result<InputSpec, CliError> {
    let bad = || {
        usage(format!(
            "--generate expects states,actions,gamma,seed; got `{spec}`"
        ))
    };
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let [s, a, g, seed] = parts.as_slice() else {
        return Err(bad());
    };
    let states: usize = s.parse().map_err(|_| bad())?;
    let actions: usize = a.parse().map_err(|_| bad())?;
    let gamma: f64 = g.parse().map_err(|_| bad())?;
    let seed: u64 = seed.parse().map_err(|_| bad())?;
    if states < 2 || actions < 1 {
        return Err(usage("--generate needs at least 2 states and 1 action"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(usage("--generate gamma must lie in [0, 1)"));
    }
    Ok(InputSpec::Generate {
        states,
        actions,
        gamma,
        seed,
        count,
    })
}

fn parse_theta(spec: &str) -> Result<ThetaSource, CliError> {
    if spec == "zeros" {
        return Ok(ThetaSource::Zeros);
    }
    if let Some(rest) = spec.strip_prefix("random:") {
        let bad = || {
            usage(format!(
                "--theta random expects random:SCALE:SEED; got `{spec}`"
            ))
        };
        let (scale, seed) = rest.split_once(':').ok_or_else(bad)?;
        let scale: f64 = scale.parse().map_err(|_| bad())?;
        let seed: u64 = seed.parse().map_err(|_| bad())?;
        if !scale.is_finite() || scale < 0.0 {
            return Err(bad());
        }
        return Ok(ThetaSource::SeededRandom { scale, seed });
    }
    Ok(ThetaSource::File(PathBuf::from(spec)))
}

fn parse_baseline(spec: &str) -> Result<BaselineSpec, CliError> {
    if let Some((head, path)) = spec.split_once(':') {
        match head {
            "model" => return Ok(BaselineSpec::Model(path.into())),
            "param" => return Ok(BaselineSpec::Param(path.into())),
            "file" => return Ok(BaselineSpec::File(path.into())),
            _ => {}
        }
    }
    spec.parse::<BaselineKind>()
        .map(BaselineSpec::Kind)
        .map_err(usage)
}

impl RunConfig {
    pub fn from_args(args: &Args) -> Result<Self, CliError> {
        let input = match (&args.mdp, &args.generate) {
            (Some(p), None) => {
                if args.count != 1 {
                    return Err(usage("--count applies to --generate only"));
                }
                InputSpec::File(p.clone())
            }
            (None, Some(g)) => {
                if args.count == 0 {
                    return Err(usage("--count must be at least 1"));
                }
                parse_generate(g, args.count)?
            }
            _ => return Err(usage("exactly one of --mdp or --generate is required")),
        };
        for (name, tol) in [
            ("--tol-identity", args.tol_identity),
            ("--tol-fd", args.tol_fd),
        ] {
            if !(tol.is_finite() && tol > 0.0) {
                return Err(usage(format!("{name} must be a positive number")));
            }
        }
        if args.command == Command::SampleGrad && args.episodes == 0 {
            return Err(usage("--episodes must be at least 1 for sample-grad"));
        }
        if args.command == Command::GenMdp {
            if !matches!(input, InputSpec::Generate { count: 1, .. }) {
                return Err(usage("gen-mdp needs --generate with --count 1"));
            }
            if args.format == OutputFormat::Csv {
                return Err(usage("gen-mdp writes JSON only"));
            }
        }

        let mut raw = Fields::default();
        match (&args.mdp, &args.generate) {
            (Some(p), _) => raw.text("mdp", p.display().to_string()),
            (_, Some(g)) => {
                raw.text("generate", g.clone());
                raw.count("count", args.count);
            }
            _ => {}
        }
        raw.text("theta", args.theta.clone());
        if let Some(b) = &args.baseline {
            raw.text("baseline", b.clone());
        }
        match args.command {
            Command::SampleGrad => {
                raw.count("episodes", args.episodes);
                raw.text("seed", args.seed.to_string());
            }
            Command::VerifyThm1 => {
                raw.scalar("tol_identity", args.tol_identity);
                raw.scalar("tol_fd", args.tol_fd);
                raw.text("naive", args.naive.to_string());
            }
            Command::GradCheck => raw.scalar("tol_fd", args.tol_fd),
            _ => {}
        }

        Ok(Self {
            command: args.command,
            input,
            theta: parse_theta(&args.theta)?,
            baseline: args.baseline.as_deref().map(parse_baseline).transpose()?,
            tol_identity: args.tol_identity,
            tol_fd: args.tol_fd,
            episodes: args.episodes,
            seed: args.seed,
            naive: args.naive,
            out: args.out.clone(),
            format: args.format,
            raw,
        })
    }
}

/// One resolved problem instance.
struct Case {
    run_id: String,
    mdp: Mdp,
    policy: SoftmaxPolicy,
}

fn resolve_cases(config: &RunConfig) -> Result<Vec<Case>, CliError> {
    let mdps: Vec<(String, Mdp)> = match &config.input {
        InputSpec::File(path) => vec![(path.display().to_string(), load_mdp(path).map_err(usage)?)],
        &InputSpec::Generate {
            states,
            actions,
            gamma,
            seed,
            count,
        } => (0..count as u64)
            .map(|i| {
                let s = seed.wrapping_add(i);
                let mdp = make_random_mdp(states, actions, gamma, s);
                let report = validate_mdp(&mdp);
                if !report.is_valid() {
                    return Err(usage(format!("generated MDP is invalid: {report}")));
                }
                Ok((format!("seed{s}"), mdp))
            })
            .collect::<Result<_, _>>()?,
    };
    let file_theta = match &config.theta {
        ThetaSource::File(p) => Some(load_theta(p).map_err(usage)?),
        _ => None,
    };
    mdps.into_iter()
        .map(|(run_id, mdp)| {
            let policy = match (&config.theta, &file_theta) {
                (ThetaSource::Zeros, _) => SoftmaxPolicy::zeros(&mdp),
                (&ThetaSource::SeededRandom { scale, seed }, _) => {
                    SoftmaxPolicy::random(&mdp, scale, seed)
                }
                (ThetaSource::File(p), Some(theta)) => SoftmaxPolicy::new(&mdp, theta.clone())
                    .map_err(|e| usage(format!("{}: {e}", p.display())))?,
                (ThetaSource::File(_), None) => unreachable!("theta file loaded above"),
            };
            Ok(Case {
                run_id,
                mdp,
                policy,
            })
        })
        .collect()
}

fn resolve_baseline(
    spec: Option<&BaselineSpec>,
    case: &Case,
    exact: &ExactSolution,
) -> Result<Baseline, CliError> {
    let (mdp, policy) = (&case.mdp, &case.policy);
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let at = |p: &Path, e: &dyn fmt::Display| usage(format!("{}: {e}", p.display()));
    match spec {
        None => Ok(make_baseline(&BaselineKind::Zero, mdp, policy, exact)),
        Some(BaselineSpec::Kind(kind)) => Ok(make_baseline(kind, mdp, policy, exact)),
        Some(BaselineSpec::Model(p)) => {
            let model = load_mdp(p).map_err(usage)?;
            model_based_baseline(mdp, &model, policy).map_err(|e| at(p, &e))
        }
        Some(BaselineSpec::Param(p)) => {
            let features = load_features(p, ns, na).map_err(usage)?;
            let fit = fit_param_baseline(mdp, policy, exact, &features).map_err(|e| at(p, &e))?;
            Ok(fit.to_baseline())
        }
        Some(BaselineSpec::File(p)) => {
            let table = load_baseline_table(p, ns, na).map_err(usage)?;
            Baseline::from_table(ns, na, table, Provenance::Supplied).map_err(|e| at(p, &e))
        }
    }
}

fn fd_threshold(tol_fd: f64, exact: &[f64]) -> f64 {
    FD_ABS_FLOOR.max(tol_fd * max_abs(exact))
}

fn verify_thm1(config: &RunConfig, case: &Case, q: &mut Fields) -> Result<bool, CliError> {
    let (mdp, policy) = (&case.mdp, &case.policy);
    let exact = evaluate(mdp, policy).map_err(numerical)?;
    let b = resolve_baseline(config.baseline.as_ref(), case, &exact)?;
    let assembled = if config.naive {
        let probe = bias_probe(mdp, policy, &exact, &b).map_err(numerical)?;
        q.vector("grad_naive", &probe.naive_gradient);
        q.scalar("bias_norm", probe.bias_norm);
        probe.naive_gradient
    } else {
        let critic = fit_critic(mdp, policy, &exact, Some(&b)).map_err(numerical)?;
        let g = assemble_gradient_thm1(mdp, policy, &exact, &critic, &b).map_err(numerical)?;
        q.vector("grad_thm1", &g);
        q.count("critic_rank", critic.rank);
        q.scalar("normal_residual", critic.normal_residual);
        g
    };
    let fd = finite_difference_gradient(mdp, policy, DEFAULT_FD_STEP).map_err(numerical)?;
    let max_rel_err = rel_max_err(&assembled, &exact.grad_rho);
    let fd_abs_err = max_abs_diff(&exact.grad_rho, &fd);
    let identity_ok = max_rel_err <= config.tol_identity;
    let fd_ok = fd_abs_err <= fd_threshold(config.tol_fd, &exact.grad_rho);
    q.vector("grad_exact", &exact.grad_rho);
    q.vector("grad_fd", &fd);
    q.scalar("max_rel_err", max_rel_err);
    q.scalar("fd_abs_err", fd_abs_err);
    q.scalar("fd_rel_err", rel_max_err(&fd, &exact.grad_rho));
    q.text("identity", pass_str(identity_ok));
    q.text("fd_check", pass_str(fd_ok));
    Ok(identity_ok && fd_ok)
}

fn bias_probe_cmd(config: &RunConfig, case: &Case, q: &mut Fields) -> Result<bool, CliError> {
    let exact = evaluate(&case.mdp, &case.policy).map_err(numerical)?;
    let b = resolve_baseline(config.baseline.as_ref(), case, &exact)?;
    let probe = bias_probe(&case.mdp, &case.policy, &exact, &b).map_err(numerical)?;
    q.text("baseline_provenance", b.provenance().as_str());
    q.text("baseline_state_only", b.is_state_only().to_string());
    q.vector("naive_gradient", &probe.naive_gradient);
    q.vector("leakage", &probe.leakage);
    q.vector("true_gradient", &probe.true_gradient);
    q.scalar("bias_norm", probe.bias_norm);
    q.scalar("leakage_norm", max_abs(&probe.leakage));
    q.scalar("decomposition_error", probe.decomposition_error);
    Ok(true)
}

fn fit_critic_cmd(config: &RunConfig, case: &Case, q: &mut Fields) -> Result<bool, CliError> {
    let exact = evaluate(&case.mdp, &case.policy).map_err(numerical)?;
    let b = match &config.baseline {
        Some(spec) => Some(resolve_baseline(Some(spec), case, &exact)?),
        None => None,
    };
    let critic = fit_critic(&case.mdp, &case.policy, &exact, b.as_ref()).map_err(numerical)?;
    q.text("target_kind", critic.target_kind.as_str());
    q.text("pairing", critic.pairing().to_string());
    q.vector("w", &critic.w);
    q.vector("fitted", &critic.fitted);
    q.scalar("loss_value", critic.loss_value);
    q.count("rank", critic.rank);
    q.count("nullspace_dim", critic.nullspace.len());
    q.scalar("normal_residual", critic.normal_residual);
    Ok(true)
}

fn grad_check(config: &RunConfig, case: &Case, q: &mut Fields) -> Result<bool, CliError> {
    let exact = evaluate(&case.mdp, &case.policy).map_err(numerical)?;
    let fd =
        finite_difference_gradient(&case.mdp, &case.policy, DEFAULT_FD_STEP).map_err(numerical)?;
    let err = max_abs_diff(&exact.grad_rho, &fd);
    let threshold = fd_threshold(config.tol_fd, &exact.grad_rho);
    let ok = err <= threshold;
    q.vector("grad_exact", &exact.grad_rho);
    q.vector("grad_fd", &fd);
    q.scalar("max_abs_err", err);
    q.scalar("max_rel_err", rel_max_err(&fd, &exact.grad_rho));
    q.scalar("threshold", threshold);
    q.text("fd_check", pass_str(ok));
    Ok(ok)
}

fn sample_grad(config: &RunConfig, case: &Case, q: &mut Fields) -> Result<bool, CliError> {
    let (mdp, policy) = (&case.mdp, &case.policy);
    let exact = evaluate(mdp, policy).map_err(numerical)?;
    let b = resolve_baseline(config.baseline.as_ref(), case, &exact)?;
    let critic = fit_critic(mdp, policy, &exact, Some(&b)).map_err(numerical)?;
    let estimators = [
        Estimator::Reinforce,
        Estimator::ReinforceStateBaseline {
            state_baseline: &exact.v,
        },
        Estimator::Thm1Critic {
            critic: &critic,
            baseline: &b,
        },
    ];
    let rows = variance_report(mdp, policy, &estimators, config.episodes, config.seed)
        .map_err(numerical)?;
    q.vector("grad_exact", &exact.grad_rho);
    for row in rows {
        let name = row.estimator_kind.as_str();
        let se = row.estimate.standard_error();
        let within = row
            .estimate
            .mean
            .iter()
            .zip(&se)
            .zip(&exact.grad_rho)
            .filter(|((m, s), e)| (*m - *e).abs() <= 3.0 * *s)
            .count();
        q.vector(format!("{name}.mean"), &row.estimate.mean);
        q.vector(format!("{name}.standard_error"), &se);
        q.scalar(format!("{name}.variance_trace"), row.variance_trace);
        q.count(format!("{name}.within_3se"), within);
        q.count(
            format!("{name}.truncated_episodes"),
            row.estimate.truncated_episodes,
        );
    }
    Ok(true)
}

fn pass_str(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

/// Rendered output of a command plus its verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub text: String,
    pub passed: bool,
}

pub fn execute(config: &RunConfig) -> Result<Outcome, CliError> {
    let cases = resolve_cases(config)?;
    if config.command == Command::GenMdp {
        return Ok(Outcome {
            text: mdp_to_json(&cases[0].mdp),
            passed: true,
        });
    }
    let step: fn(&RunConfig, &Case, &mut Fields) -> Result<bool, CliError> = match config.command {
        Command::VerifyThm1 => verify_thm1,
        Command::BiasProbe => bias_probe_cmd,
        Command::FitCritic => fit_critic_cmd,
        Command::GradCheck => grad_check,
        Command::SampleGrad => sample_grad,
        Command::GenMdp => unreachable!(),
    };
    let mut report = Report::new(config.command.as_str(), config.raw.clone());
    let mut all_ok = true;
    for case in &cases {
        let mut q = Fields::default();
        all_ok &= step(config, case, &mut q)?;
        report.runs.push(Run {
            run_id: case.run_id.clone(),
            quantities: q,
        });
    }
    report.set_passed(all_ok);
    let text = match config.format {
        OutputFormat::Json => report.to_json(),
        OutputFormat::Csv => report.to_csv(),
    };
    Ok(Outcome {
        text,
        passed: all_ok,
    })
}

/// Parses, runs, writes output and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_PASS
            };
        }
    };
    let result = RunConfig::from_args(&args).and_then(|config| {
        let outcome = execute(&config)?;
        match &config.out {
            Some(path) => std::fs::write(path, &outcome.text)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?,
            None => std::io::stdout()
                .write_all(outcome.text.as_bytes())
                .map_err(|e| usage(format!("stdout: {e}")))?,
        }
        Ok(outcome.passed)
    });
    match result {
        Ok(true) => EXIT_PASS,
        Ok(false) => {
            eprintln!("{}: tolerance check failed", args.command.as_str());
            EXIT_FAIL
        }
        Err(e) => {
            eprintln!("{e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("usage: pgcompat <COMMAND> (--mdp PATH | --generate S,A,GAMMA,SEED) [OPTIONS]; see --help");
            }
            e.exit_code()
        }
    }
}
