//! Experiment configuration, metrics, and runners behind the CLI.
//!
//! Every runner is a pure function of its [`ExperimentConfig`]: randomness
//! comes only from `seed`, split per sweep point or trial with
//! [`derive_seed`], and points run in a fixed order. Rerunning a config
//! reproduces its output files byte for byte.

mod clip;
pub mod output;
mod sweep;

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bounds::{bound_report, verify_bounds, zero_shot_policy, BoundCheck, BoundReport};
use crate::envs::{random_mdp, GridParams, GridSpec};
use crate::error::{Error, Result};
use crate::learn::{q_learning, BoundSide, ClipBounds, ClipMode, ClipSpec, Hyper, LearnTrace};
use crate::mdp::{
    evaluate_policy, hard_state_values, soft_state_values, solve, Policy, Regime, SoftConfig, SolverOptions, Table,
    TabularMdp,
};
use crate::transfer::{check_conditions, transform_reward, ConditionReport, DomainBox, TransferFn, TransferSpec};

pub use clip::{run_clipping_experiment, ArmSummary, ClipAggregate, ClippingResult};
pub use sweep::{run_sparsity_sweep, run_stochasticity_sweep, MetricRow};

/// Sub-seed for point or trial `index`: the first `u64` of ChaCha8 stream
/// `index` keyed by `seed`. Nesting the call splits further.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.next_u64()
}

/// Inverse temperature, with `inf` meaning standard RL.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Beta {
    Finite(f64),
    Infinite,
}

impl Beta {
    /// The regime for an `n_states × n_actions` task with a uniform prior.
    pub fn regime(self, n_states: usize, n_actions: usize) -> Result<Regime> {
        match self {
            Beta::Infinite => Ok(Regime::Standard),
            Beta::Finite(b) => Ok(Regime::EntropyRegularized(SoftConfig::uniform(b, n_states, n_actions)?)),
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Beta::Finite(_))
    }
}

impl std::fmt::Display for Beta {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Beta::Finite(b) => write!(f, "{b}"),
            Beta::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Beta {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
            return Ok(Beta::Infinite);
        }
        let b: f64 = s.parse().map_err(|_| Error::Config(format!("invalid beta {s:?}")))?;
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::Config(format!("beta must be positive and finite, or \"inf\"; got {s}")));
        }
        Ok(Beta::Finite(b))
    }
}

impl Serialize for Beta {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Beta::Finite(b) => s.serialize_f64(*b),
            Beta::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Beta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Num(b) => b.to_string(),
            Raw::Text(t) => t,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Solve,
    CheckFn,
    BoundCheck,
    Learn,
    StochasticitySweep,
    SparsitySweep,
    Clipping,
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant serializes");
        f.write_str(s.as_str().expect("string"))
    }
}

/// Where the primitive tasks come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentRef {
    /// Grid files sharing a layout; paths are relative to the config file.
    Grids {
        files: Vec<PathBuf>,
        #[serde(default)]
        params: GridParams,
    },
    /// `primitives` random reward tables over one set of random dynamics.
    RandomMdp {
        n_states: usize,
        n_actions: usize,
        reward_range: [f64; 2],
        #[serde(default = "default_gamma")]
        gamma: f64,
        primitives: usize,
    },
}

fn default_gamma() -> f64 {
    0.99
}
fn default_tol() -> f64 {
    SolverOptions::default().tol
}
fn default_max_iters() -> usize {
    SolverOptions::default().max_iters
}

/// Clipping settings for `learn` (one `mode`) and `clipping` (all `arms`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipConfig {
    #[serde(default = "ClipConfig::default_mode")]
    pub mode: ClipMode,
    #[serde(default = "ClipConfig::default_arms")]
    pub arms: Vec<ClipMode>,
    #[serde(default = "ClipConfig::default_weight")]
    pub soft_weight: f64,
    #[serde(default)]
    pub side: BoundSide,
}

impl ClipConfig {
    fn default_mode() -> ClipMode {
        ClipMode::None
    }
    fn default_arms() -> Vec<ClipMode> {
        ClipMode::ALL.to_vec()
    }
    fn default_weight() -> f64 {
        1.0
    }
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            mode: Self::default_mode(),
            arms: Self::default_arms(),
            soft_weight: Self::default_weight(),
            side: BoundSide::default(),
        }
    }
}

/// One experiment. Fields not used by `experiment` must be absent or are ignored
/// as documented per kind in the README.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub environment: Option<EnvironmentRef>,
    #[serde(default)]
    pub transfer: Option<TransferSpec>,
    /// Defaults: `[1, 3, 5, "inf"]` for the stochasticity sweep, `[5]` for the
    /// sparsity sweep, `["inf"]` otherwise.
    #[serde(default)]
    pub betas: Option<Vec<Beta>>,
    /// Overrides the environment's discount.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    pub seed: u64,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub slips: Option<Vec<f64>>,
    #[serde(default)]
    pub sizes: Option<Vec<usize>>,
    /// Reward-cell counts for the sparsity sweep; default every count in `1..size²`.
    #[serde(default)]
    pub n_rewards: Option<Vec<usize>>,
    #[serde(default)]
    pub reward_range: Option<[f64; 2]>,
    #[serde(default)]
    pub learning: Option<Hyper>,
    #[serde(default)]
    pub clipping: Option<ClipConfig>,
    /// BV at or below this counts as zero for steps-to-zero-BV. Defaults to the
    /// bounds' own certified slack, `max(1e-9, 8·tol/(1−γ))`.
    #[serde(default)]
    pub bv_zero_tol: Option<f64>,
    #[serde(default)]
    pub domain: Option<DomainBox>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// A config with only the required fields set.
    pub fn new(experiment: ExperimentKind, seed: u64) -> Self {
        Self {
            experiment,
            environment: None,
            transfer: None,
            betas: None,
            gamma: None,
            tol: default_tol(),
            max_iters: default_max_iters(),
            seed,
            trials: None,
            slips: None,
            sizes: None,
            n_rewards: None,
            reward_range: None,
            learning: None,
            clipping: None,
            bv_zero_tol: None,
            domain: None,
            output_dir: None,
        }
    }

    /// Reads a JSON config, resolving grid paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(EnvironmentRef::Grids { files, .. }) = &mut cfg.environment {
            for f in files.iter_mut() {
                if f.is_relative() {
                    *f = base.join(&*f);
                }
            }
        }
        if let Some(out) = &mut cfg.output_dir {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_iters: self.max_iters,
        }
    }

    pub fn betas(&self) -> Vec<Beta> {
        self.betas.clone().unwrap_or_else(|| match self.experiment {
            ExperimentKind::StochasticitySweep => {
                vec![Beta::Finite(1.0), Beta::Finite(3.0), Beta::Finite(5.0), Beta::Infinite]
            }
            ExperimentKind::SparsitySweep => vec![Beta::Finite(5.0)],
            _ => vec![Beta::Infinite],
        })
    }

    fn single_beta(&self) -> Result<Beta> {
        match self.betas().as_slice() {
            [b] => Ok(*b),
            bs => Err(Error::Config(format!("{} takes exactly one beta, got {}", self.experiment, bs.len()))),
        }
    }

    pub fn transfer_fn(&self) -> Result<TransferFn> {
        self.transfer
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} needs a transfer function", self.experiment)))?
            .build()
    }

    pub fn bv_zero_tol(&self, gamma: f64) -> f64 {
        self.bv_zero_tol
            .unwrap_or_else(|| crate::bounds::sign_slack(&self.solver_options(), gamma))
    }

    fn hyper(&self) -> Result<&Hyper> {
        self.learning
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} needs a learning section", self.experiment)))
    }

    /// Checks everything that can be checked without solving.
    pub fn validate(&self) -> Result<()> {
        self.solver_options().validate()?;
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::Config(format!("gamma {g} outside (0, 1)")));
            }
        }
        if let Some(t) = self.bv_zero_tol {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::Config(format!("bv_zero_tol {t} must be finite and non-negative")));
            }
        }
        if self.trials == Some(0) {
            return Err(Error::Config("trials must be positive".into()));
        }
        if let Some(EnvironmentRef::Grids { files, .. }) = &self.environment {
            if files.is_empty() {
                return Err(Error::Config("environment lists no grid files".into()));
            }
            for f in files {
                if !f.is_file() {
                    return Err(Error::Config(format!("grid file {} does not exist", f.display())));
                }
            }
        }
        if let Some(h) = &self.learning {
            h.validate()?;
        }
        let needs_env = !matches!(self.experiment, ExperimentKind::CheckFn | ExperimentKind::SparsitySweep);
        if needs_env && self.environment.is_none() {
            return Err(Error::Config(format!("{} needs an environment", self.experiment)));
        }
        match self.experiment {
            ExperimentKind::CheckFn | ExperimentKind::BoundCheck | ExperimentKind::StochasticitySweep => {
                self.transfer_fn()?;
            }
            ExperimentKind::Learn | ExperimentKind::Clipping => {
                self.transfer_fn()?;
                self.hyper()?;
                if self.betas() != [Beta::Infinite] {
                    return Err(Error::Config("Q-learning runs in standard RL only (beta \"inf\")".into()));
                }
            }
            ExperimentKind::SparsitySweep | ExperimentKind::Solve => {}
        }
        if matches!(self.experiment, ExperimentKind::StochasticitySweep)
            && !matches!(self.environment, Some(EnvironmentRef::Grids { .. }))
        {
            return Err(Error::Config("the stochasticity sweep needs grid files".into()));
        }
        if matches!(
            self.experiment,
            ExperimentKind::Solve | ExperimentKind::BoundCheck | ExperimentKind::Learn | ExperimentKind::CheckFn
        ) {
            self.single_beta()?;
        }
        Ok(())
    }

    fn grid_specs(&self, slip: Option<f64>) -> Result<Vec<GridSpec>> {
        let Some(EnvironmentRef::Grids { files, params }) = &self.environment else {
            return Err(Error::Config("expected grid files".into()));
        };
        let mut params = params.clone();
        if let Some(g) = self.gamma {
            params.gamma = g;
        }
        if let Some(s) = slip {
            params.slip = s;
        }
        files
            .iter()
            .map(|f| {
                let text = fs::read_to_string(f)
                    .map_err(|e| Error::Config(format!("cannot read grid {}: {e}", f.display())))?;
                GridSpec::from_text(&text, params.clone()).map_err(|e| e.context(format!("grid {}", f.display())))
            })
            .collect()
    }

    /// The primitive MDPs. They share states, dynamics and discount.
    pub fn primitives(&self) -> Result<Vec<TabularMdp>> {
        match self.environment.as_ref() {
            None => Err(Error::Config(format!("{} needs an environment", self.experiment))),
            Some(EnvironmentRef::Grids { .. }) => {
                let specs = self.grid_specs(None)?;
                Ok(crate::envs::build_primitives(&specs)?.into_iter().map(|w| w.mdp).collect())
            }
            Some(EnvironmentRef::RandomMdp {
                n_states,
                n_actions,
                reward_range,
                gamma,
                primitives,
            }) => {
                if *primitives == 0 {
                    return Err(Error::Config("random_mdp needs at least one primitive".into()));
                }
                let gamma = self.gamma.unwrap_or(*gamma);
                let range = (reward_range[0], reward_range[1]);
                let base = random_mdp(*n_states, *n_actions, range, gamma, derive_seed(self.seed, 0))?;
                (0..*primitives as u64)
                    .map(|k| {
                        let r = random_mdp(*n_states, *n_actions, range, gamma, derive_seed(self.seed, k + 1))?;
                        base.with_reward(r.reward().clone())
                    })
                    .collect()
            }
        }
    }
}

/// Composite task with reward `f(r₁, …, r_M)` over the primitives' dynamics.
pub fn composite_mdp(f: &TransferFn, primitives: &[TabularMdp]) -> Result<TabularMdp> {
    let first = primitives
        .first()
        .ok_or_else(|| Error::Structural("need at least one primitive".into()))?;
    let rewards: Vec<&Table> = primitives.iter().map(TabularMdp::reward).collect();
    first.with_reward(transform_reward(f, &rewards)?)
}

/// Mean over states of `KL(π(·|s) ‖ π_f(·|s))`.
pub fn kl_policy_divergence(pi: &Policy, pi_f: &Policy) -> Result<f64> {
    pi.probs().check_shape(pi_f.probs())?;
    let mut total = 0.0;
    for s in 0..pi.n_states() {
        for (a, (&p, &q)) in pi.row(s).iter().zip(pi_f.row(s)).enumerate() {
            if p == 0.0 {
                continue;
            }
            if q == 0.0 {
                return Err(Error::Domain(format!(
                    "KL divergence is infinite: pi_f gives zero probability to state {s}, action {a}"
                )));
            }
            total += p * (p / q).ln();
        }
    }
    Ok(total / pi.n_states() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvedTask {
    pub name: String,
    pub iterations: usize,
    pub delta: f64,
    pub q: Table,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutput {
    pub beta: Beta,
    pub gamma: f64,
    pub tol: f64,
    pub tasks: Vec<SolvedTask>,
}

pub fn run_solve(cfg: &ExperimentConfig) -> Result<SolveOutput> {
    let prims = cfg.primitives()?;
    let beta = cfg.single_beta()?;
    let regime = beta.regime(prims[0].n_states(), prims[0].n_actions())?;
    let opts = cfg.solver_options();
    let mut named: Vec<(String, TabularMdp)> =
        prims.iter().enumerate().map(|(k, m)| (format!("primitive_{k}"), m.clone())).collect();
    if cfg.transfer.is_some() {
        named.push(("composite".into(), composite_mdp(&cfg.transfer_fn()?, &prims)?));
    }
    let tasks = named
        .into_iter()
        .map(|(name, mdp)| {
            let sol = solve(&mdp, &regime, &opts).map_err(|e| e.context(format!("solving {name}")))?;
            let v = match regime.soft_config() {
                Some(c) => soft_state_values(&sol.q, c)?,
                None => hard_state_values(&sol.q),
            };
            Ok(SolvedTask {
                name,
                iterations: sol.iterations,
                delta: sol.delta,
                q: sol.q.values,
                v,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SolveOutput {
        beta,
        gamma: prims[0].gamma(),
        tol: opts.tol,
        tasks,
    })
}

/// A bound report checked against a direct solve of the composite task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckOutput {
    pub report: BoundReport,
    pub composite_q: Table,
    pub verification: BoundCheck,
    /// `Q̃ − Q̃^{π_f}` for the zero-shot policy.
    pub zero_shot_regret: Table,
    /// Largest amount by which the regret exceeds its bound (≤ 0 means it holds).
    pub regret_excess: f64,
}

pub fn run_bound_check(cfg: &ExperimentConfig) -> Result<BoundCheckOutput> {
    let f = cfg.transfer_fn()?;
    let prims = cfg.primitives()?;
    let regime = cfg.single_beta()?.regime(prims[0].n_states(), prims[0].n_actions())?;
    let opts = cfg.solver_options();
    let qs = prims
        .iter()
        .enumerate()
        .map(|(k, m)| Ok(solve(m, &regime, &opts).map_err(|e| e.context(format!("primitive {k}")))?.q.values))
        .collect::<Result<Vec<_>>>()?;
    let composite = composite_mdp(&f, &prims)?;
    let report = bound_report(&composite, &f, &qs, &regime, &opts)?;
    let q_tilde = solve(&composite, &regime, &opts).map_err(|e| e.context("composite"))?.q.values;
    let slack = crate::bounds::sign_slack(&opts, composite.gamma());
    let verification = verify_bounds(&q_tilde, &report.lower, &report.upper, slack)?;
    let pi_f = zero_shot_policy(&f, &qs, &regime)?;
    let q_pi = evaluate_policy(&composite, &pi_f, &regime, &opts)?.q.values;
    let zero_shot_regret = q_tilde.zip_map(&q_pi, |a, b| a - b)?;
    let regret_excess = zero_shot_regret
        .values()
        .iter()
        .zip(report.regret.values())
        .map(|(r, d)| r - d)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(BoundCheckOutput {
        report,
        composite_q: q_tilde,
        verification,
        zero_shot_regret,
        regret_excess,
    })
}

pub fn run_check_fn(cfg: &ExperimentConfig) -> Result<ConditionReport> {
    let f = cfg.transfer_fn()?;
    let beta = cfg.single_beta()?;
    let domain = match &cfg.domain {
        Some(d) => d.clone(),
        None => DomainBox::uniform(f.arity(), -1.0, 1.0).with_seed(cfg.seed),
    };
    let domain = match cfg.gamma {
        Some(g) => domain.with_gamma(g),
        None => domain,
    };
    let regime = match beta {
        Beta::Infinite => Regime::Standard,
        // one-state prior of the checker's row width
        Beta::Finite(b) => Regime::EntropyRegularized(SoftConfig::uniform(b, 1, domain.n_actions)?),
    };
    check_conditions(&f, &domain, &regime)
}

/// Exact bounds for the composite task in standard RL.
pub fn clip_bounds(cfg: &ExperimentConfig) -> Result<(TabularMdp, ClipBounds)> {
    let f = cfg.transfer_fn()?;
    let prims = cfg.primitives()?;
    let opts = cfg.solver_options();
    let qs = prims
        .iter()
        .map(|m| Ok(solve(m, &Regime::Standard, &opts)?.q.values))
        .collect::<Result<Vec<_>>>()?;
    let composite = composite_mdp(&f, &prims)?;
    let report = bound_report(&composite, &f, &qs, &Regime::Standard, &opts)?;
    let bounds = ClipBounds {
        lower: Some(report.lower),
        upper: Some(report.upper),
    };
    Ok((composite, bounds))
}

impl ClipConfig {
    pub fn spec(&self, mode: ClipMode) -> ClipSpec {
        ClipSpec {
            mode,
            soft_weight: self.soft_weight,
            side: self.side,
        }
    }
}

pub fn run_learn(cfg: &ExperimentConfig) -> Result<LearnTrace> {
    let (composite, bounds) = clip_bounds(cfg)?;
    let clip = cfg.clipping.clone().unwrap_or_default();
    q_learning(&composite, &clip.spec(clip.mode), &bounds, cfg.hyper()?, cfg.seed)
}

pub const TRACE_HEADER: [&str; 5] = ["step", "eval_return_mean", "eval_return_ci_low", "eval_return_ci_high", "bv"];

/// Per-trial trace rows; a single trial's interval is degenerate.
pub fn trace_rows(trace: &LearnTrace) -> Vec<Vec<String>> {
    trace
        .evals
        .iter()
        .map(|e| {
            let r = output::fmt_f64(e.return_mean);
            vec![e.step.to_string(), r.clone(), r.clone(), r, output::fmt_f64(e.bv)]
        })
        .collect()
}

fn trace_gamma(cfg: &ExperimentConfig) -> Result<f64> {
    Ok(cfg.primitives()?[0].gamma())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::from(e).context(format!("creating {}", dir.display())))
}

/// Runs `cfg`, writes its outputs under `out`, and returns a one-line summary.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    cfg.validate()?;
    create_dir(out)?;
    match cfg.experiment {
        ExperimentKind::Solve => {
            let res = run_solve(cfg)?;
            output::write_json(&out.join("solve.json"), &res)?;
            let iters: Vec<String> = res.tasks.iter().map(|t| format!("{}={}", t.name, t.iterations)).collect();
            Ok(format!("solved {} tasks, iterations {}", res.tasks.len(), iters.join(" ")))
        }
        ExperimentKind::CheckFn => {
            let report = run_check_fn(cfg)?;
            output::write_json(&out.join("condition_report.json"), &report)?;
            Ok(report.classification.to_string())
        }
        ExperimentKind::BoundCheck => {
            let res = run_bound_check(cfg)?;
            output::write_json(&out.join("bound_report.json"), &res)?;
            Ok(format!(
                "gap_max {} bounds {}",
                output::fmt_f64(res.report.gap_max),
                if res.verification.pass { "hold" } else { "VIOLATED" }
            ))
        }
        ExperimentKind::Learn => {
            let trace = run_learn(cfg)?;
            let zero_tol = cfg.bv_zero_tol(trace_gamma(cfg)?);
            output::write_csv(&out.join("learn_trace.csv"), &TRACE_HEADER, &trace_rows(&trace))?;
            output::write_json(&out.join("learn_trace.json"), &trace)?;
            let last = trace.evals.last().expect("step 0 is always evaluated");
            Ok(format!(
                "final eval return {} bv {} steps-to-zero-bv {}",
                output::fmt_f64(last.return_mean),
                output::fmt_f64(last.bv),
                trace.steps_to_zero_bv(zero_tol).map_or("censored".into(), |s| s.to_string())
            ))
        }
        ExperimentKind::StochasticitySweep => {
            let rows = run_stochasticity_sweep(cfg)?;
            sweep::write_stochasticity(&out.join("stochasticity.csv"), &rows)?;
            Ok(format!("{} sweep rows", rows.len()))
        }
        ExperimentKind::SparsitySweep => {
            let rows = run_sparsity_sweep(cfg)?;
            sweep::write_sparsity(&out.join("sparsity.csv"), &rows)?;
            let violations: usize = rows.iter().map(|r| r.sign_violations).sum();
            Ok(format!("{} sweep rows, {violations} bound-sign violations", rows.len()))
        }
        ExperimentKind::Clipping => {
            let res = run_clipping_experiment(cfg)?;
            clip::write(out, &res)?;
            let medians: Vec<String> = res
                .summary
                .iter()
                .map(|a| format!("{}={}", a.arm, a.median_steps_to_zero_bv.map_or("censored".into(), output::fmt_f64)))
                .collect();
            Ok(format!("median steps-to-zero-bv {}", medians.join(" ")))
        }
    }
}
