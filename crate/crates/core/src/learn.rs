//! Tabular ε-greedy Q-learning with bound clipping.
//!
//! Clipping modes:
//! - `hard`: every TD target is clamped into `[lower, upper]`, and the initial
//!   table is clamped too, so stored values never leave the bounds.
//! - `soft`: the update gains `α·w·violation`, pulling entries outside the
//!   bounds back toward them (`lower − Q` below, `upper − Q` above).
//! - `test`: learning is untouched; greedy evaluation acts on the clamped table.
//! - `soft_hard`: both `hard` and `soft`.
//!
//! Learning and evaluation draw from separate ChaCha streams of the same seed,
//! so `test` and `none` learn identical tables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    None,
    Hard,
    Soft,
    Test,
    SoftHard,
}

impl ClipMode {
    pub const ALL: [ClipMode; 5] = [ClipMode::None, ClipMode::Hard, ClipMode::Soft, ClipMode::Test, ClipMode::SoftHard];

    fn clips_targets(self) -> bool {
        matches!(self, ClipMode::Hard | ClipMode::SoftHard)
    }

    fn penalizes(self) -> bool {
        matches!(self, ClipMode::Soft | ClipMode::SoftHard)
    }

    pub fn name(self) -> &'static str {
        match self {
            ClipMode::None => "none",
            ClipMode::Hard => "hard",
            ClipMode::Soft => "soft",
            ClipMode::Test => "test",
            ClipMode::SoftHard => "soft_hard",
        }
    }
}

impl std::fmt::Display for ClipMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which side of the bounds the clipping enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSide {
    #[default]
    Lower,
    Upper,
    Both,
}

/// Clipping mode, soft-penalty weight and enforced side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipSpec {
    pub mode: ClipMode,
    #[serde(default = "ClipSpec::default_weight")]
    pub soft_weight: f64,
    #[serde(default)]
    pub side: BoundSide,
}

impl ClipSpec {
    fn default_weight() -> f64 {
        1.0
    }

    /// Unit weight, lower side.
    pub fn new(mode: ClipMode) -> Self {
        Self {
            mode,
            soft_weight: 1.0,
            side: BoundSide::Lower,
        }
    }

    pub fn none() -> Self {
        Self::new(ClipMode::None)
    }
}

/// Bound tables. BV is always measured against `lower`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClipBounds {
    pub lower: Option<Table>,
    pub upper: Option<Table>,
}

impl ClipBounds {
    pub fn lower(lower: Table) -> Self {
        Self {
            lower: Some(lower),
            upper: None,
        }
    }
}

/// The tables a spec actually enforces.
struct Enforced<'a> {
    lower: Option<&'a Table>,
    upper: Option<&'a Table>,
}

impl<'a> Enforced<'a> {
    fn new(spec: &ClipSpec, bounds: &'a ClipBounds, mdp: &TabularMdp) -> Result<Self> {
        if !(spec.soft_weight.is_finite() && spec.soft_weight >= 0.0) {
            return Err(Error::Config(format!("soft weight {} must be finite and non-negative", spec.soft_weight)));
        }
        for t in bounds.lower.iter().chain(&bounds.upper) {
            mdp.check_table(t)?;
        }
        if spec.mode == ClipMode::None {
            return Ok(Self { lower: None, upper: None });
        }
        let want_lower = spec.side != BoundSide::Upper;
        let want_upper = spec.side != BoundSide::Lower;
        if (want_lower && bounds.lower.is_none()) || (want_upper && bounds.upper.is_none()) {
            return Err(Error::Config(format!(
                "clip mode {} on side {:?} is missing a bound table",
                spec.mode, spec.side
            )));
        }
        Ok(Self {
            lower: bounds.lower.as_ref().filter(|_| want_lower),
            upper: bounds.upper.as_ref().filter(|_| want_upper),
        })
    }

    fn clamp(&self, s: usize, a: usize, x: f64) -> f64 {
        let mut y = x;
        if let Some(l) = self.lower {
            y = y.max(l.get(s, a));
        }
        if let Some(u) = self.upper {
            y = y.min(u.get(s, a));
        }
        y
    }

    /// Signed distance back into the bounds; zero inside them.
    fn violation(&self, s: usize, a: usize, q: f64) -> f64 {
        self.clamp(s, a, q) - q
    }
}

/// Initial action values for non-terminal states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QInit {
    Zeros,
    /// Independent uniform draws from `[lo, hi)`.
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyper {
    #[serde(default = "Hyper::default_alpha")]
    pub alpha: f64,
    #[serde(default = "Hyper::default_eps_start")]
    pub epsilon_start: f64,
    #[serde(default = "Hyper::default_eps_end")]
    pub epsilon_end: f64,
    /// Fraction of `steps` over which ε decays linearly.
    #[serde(default = "Hyper::default_eps_fraction")]
    pub epsilon_fraction: f64,
    pub steps: usize,
    pub eval_every: usize,
    #[serde(default = "Hyper::default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "Hyper::default_episode_cap")]
    pub episode_cap: usize,
    #[serde(default = "Hyper::default_init")]
    pub q_init: QInit,
}

impl Hyper {
    fn default_alpha() -> f64 {
        0.1
    }
    fn default_eps_start() -> f64 {
        1.0
    }
    fn default_eps_end() -> f64 {
        0.05
    }
    fn default_eps_fraction() -> f64 {
        0.1
    }
    fn default_eval_episodes() -> usize {
        5
    }
    fn default_episode_cap() -> usize {
        200
    }
    fn default_init() -> QInit {
        QInit::Zeros
    }

    pub fn new(steps: usize, eval_every: usize) -> Self {
        Self {
            alpha: Self::default_alpha(),
            epsilon_start: Self::default_eps_start(),
            epsilon_end: Self::default_eps_end(),
            epsilon_fraction: Self::default_eps_fraction(),
            steps,
            eval_every,
            eval_episodes: Self::default_eval_episodes(),
            episode_cap: Self::default_episode_cap(),
            q_init: Self::default_init(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if !unit(self.epsilon_start) || !unit(self.epsilon_end) || !unit(self.epsilon_fraction) {
            return Err(Error::Config("epsilon schedule values must lie in [0, 1]".into()));
        }
        if self.steps == 0 || self.eval_every == 0 || self.eval_episodes == 0 || self.episode_cap == 0 {
            return Err(Error::Config("steps, eval_every, eval_episodes and episode_cap must be positive".into()));
        }
        if let QInit::Uniform { lo, hi } = self.q_init {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("invalid uniform init [{lo}, {hi})")));
            }
        }
        Ok(())
    }

    pub fn epsilon(&self, step: usize) -> f64 {
        let horizon = self.epsilon_fraction * self.steps as f64;
        if horizon <= 0.0 || step as f64 >= horizon {
            return self.epsilon_end;
        }
        let t = step as f64 / horizon;
        self.epsilon_start + t * (self.epsilon_end - self.epsilon_start)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// Environment steps taken before this evaluation.
    pub step: usize,
    pub return_mean: f64,
    pub bv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnTrace {
    pub mode: ClipMode,
    pub seed: u64,
    pub hyper: Hyper,
    pub evals: Vec<EvalPoint>,
    /// Undiscounted return of each completed training episode.
    pub episode_returns: Vec<f64>,
    pub final_q: Table,
}

impl LearnTrace {
    /// First evaluation step from which BV stays at or below `tol` for the rest
    /// of the trace, or `None` if the final BV exceeds it.
    pub fn steps_to_zero_bv(&self, tol: f64) -> Option<usize> {
        let mut first = None;
        for e in self.evals.iter().rev() {
            if e.bv > tol {
                break;
            }
            first = Some(e.step);
        }
        first
    }
}

/// Mean over all cells of `max(0, lower − q)`.
pub fn bound_violation(q: &Table, lower: &Table) -> Result<f64> {
    q.check_shape(lower)?;
    let total: f64 = q
        .values()
        .iter()
        .zip(lower.values())
        .map(|(q, l)| (l - q).max(0.0))
        .sum();
    Ok(total / q.values().len() as f64)
}

fn sample_index(rng: &mut ChaCha8Rng, items: impl Iterator<Item = (usize, f64)>) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in items {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

fn argmax(row: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (a, x) in row.enumerate() {
        if x > best.1 {
            best = (a, x);
        }
    }
    best.0
}

fn initial_state(mdp: &TabularMdp, rng: &mut ChaCha8Rng) -> usize {
    sample_index(rng, mdp.initial_dist().iter().copied().enumerate())
}

fn next_state(mdp: &TabularMdp, s: usize, a: usize, rng: &mut ChaCha8Rng) -> usize {
    sample_index(rng, mdp.successors(s, a).iter().copied())
}

struct Evaluator<'a> {
    mdp: &'a TabularMdp,
    mode: ClipMode,
    enforced: &'a Enforced<'a>,
    hyper: &'a Hyper,
    rng: ChaCha8Rng,
}

impl Evaluator<'_> {
    fn run(&mut self, q: &Table) -> f64 {
        let clip_actions = self.mode == ClipMode::Test;
        let mut total = 0.0;
        for _ in 0..self.hyper.eval_episodes {
            let mut s = initial_state(self.mdp, &mut self.rng);
            for _ in 0..self.hyper.episode_cap {
                if self.mdp.is_terminal(s) {
                    break;
                }
                let a = if clip_actions {
                    argmax((0..q.n_actions()).map(|a| self.enforced.clamp(s, a, q.get(s, a))))
                } else {
                    argmax(q.row(s).iter().copied())
                };
                total += self.mdp.reward().get(s, a);
                s = next_state(self.mdp, s, a, &mut self.rng);
            }
        }
        total / self.hyper.eval_episodes as f64
    }
}

/// Runs ε-greedy Q-learning on `mdp` for `hyper.steps` environment steps.
///
/// Terminal rows hold their exact value `r(s, a)` from the start (there is no
/// continuation to learn). Evaluations happen at step 0 and after every
/// `eval_every` steps.
pub fn q_learning(
    mdp: &TabularMdp,
    clip: &ClipSpec,
    bounds: &ClipBounds,
    hyper: &Hyper,
    seed: u64,
) -> Result<LearnTrace> {
    hyper.validate()?;
    let enforced = Enforced::new(clip, bounds, mdp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(seed);
    eval_rng.set_stream(1);

    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let mut q = Table::from_fn(n_s, n_a, |s, a| {
        if mdp.is_terminal(s) {
            return mdp.reward().get(s, a);
        }
        match hyper.q_init {
            QInit::Zeros => 0.0,
            QInit::Uniform { lo, hi } => rng.gen_range(lo..hi),
        }
    });
    if clip.mode.clips_targets() {
        for s in (0..n_s).filter(|&s| !mdp.is_terminal(s)) {
            for a in 0..n_a {
                q.set(s, a, enforced.clamp(s, a, q.get(s, a)));
            }
        }
    }

    let bv = |q: &Table| bounds.lower.as_ref().map_or(Ok(0.0), |l| bound_violation(q, l));
    let mut evaluator = Evaluator {
        mdp,
        mode: clip.mode,
        enforced: &enforced,
        hyper,
        rng: eval_rng,
    };
    let mut evals = vec![EvalPoint {
        step: 0,
        return_mean: evaluator.run(&q),
        bv: bv(&q)?,
    }];
    let mut episode_returns = Vec::new();

    let gamma = mdp.gamma();
    let alpha = hyper.alpha;
    let weight = if clip.mode.penalizes() { clip.soft_weight } else { 0.0 };
    let mut s = initial_state(mdp, &mut rng);
    let mut ep_return = 0.0;
    let mut ep_len = 0;
    for step in 0..hyper.steps {
        if mdp.is_terminal(s) || ep_len >= hyper.episode_cap {
            episode_returns.push(ep_return);
            s = initial_state(mdp, &mut rng);
            ep_return = 0.0;
            ep_len = 0;
        }
        let a = if rng.gen::<f64>() < hyper.epsilon(step) {
            rng.gen_range(0..n_a)
        } else {
            argmax(q.row(s).iter().copied())
        };
        let r = mdp.reward().get(s, a);
        let s2 = next_state(mdp, s, a, &mut rng);
        let mut target = r + gamma * q.row(s2).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if clip.mode.clips_targets() {
            target = enforced.clamp(s, a, target);
        }
        let old = q.get(s, a);
        let push = weight * enforced.violation(s, a, old);
        let new = old + alpha * (target - old + push);
        if !new.is_finite() {
            return Err(Error::Numerical { state: s, action: a });
        }
        q.set(s, a, new);
        ep_return += r;
        ep_len += 1;
        s = s2;

        if (step + 1) % hyper.eval_every == 0 {
            evals.push(EvalPoint {
                step: step + 1,
                return_mean: evaluator.run(&q),
                bv: bv(&q)?,
            });
        }
    }

    Ok(LearnTrace {
        mode: clip.mode,
        seed,
        hyper: hyper.clone(),
        evals,
        episode_returns,
        final_q: q,
    })
}
