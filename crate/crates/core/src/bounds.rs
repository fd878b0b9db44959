//! Double-sided bounds on a composite task's optimal values.
//!
//! Every function here takes the *composite* MDP, whose reward is already
//! `f(r₁, …, r_M)`, together with the primitive optimal tables `qs` (solved in
//! the same regime). The auxiliary values `C`/`Ĉ` are always standard-RL
//! optimal values; `D`/`D̂` are plain policy evaluations of the zero-shot
//! policy on their auxiliary rewards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{
    boltzmann_policy, evaluate_policy_soft, evaluate_policy_standard, greedy_policy, hard_state_values,
    soft_state_values, solve_standard, Policy, Regime, RegimeKind, SolverOptions, TabularMdp, Table,
};
use crate::transfer::{apply_transfer, Classification, TransferFn};

/// Slack for the proven sign of `r_C`, `C`, `D` and friends.
///
/// The inputs are fixed points known only to `tol`, so an exactly-zero
/// quantity can come out slightly negative; the slack grows with the horizon.
pub fn sign_slack(opts: &SolverOptions, gamma: f64) -> f64 {
    1e-9_f64.max(8.0 * opts.tol / (1.0 - gamma))
}

fn check_inputs<T: AsRef<Table>>(mdp: &TabularMdp, f: &TransferFn, qs: &[T]) -> Result<Table> {
    let fq = apply_transfer(f, qs)?;
    if fq.shape() != (mdp.n_states(), mdp.n_actions()) {
        return Err(Error::Structural("primitive tables do not match the composite MDP".into()));
    }
    Ok(fq)
}

fn state_values(fq: &Table, regime: &Regime) -> Result<Vec<f64>> {
    match regime {
        Regime::Standard => Ok(hard_state_values(fq)),
        Regime::EntropyRegularized(cfg) => soft_state_values(fq, cfg),
    }
}

/// `V_f`: `max_a f(Q)` in standard RL, `(1/β) log E_{π₀} exp(β f(Q))` in soft RL.
pub fn value_f<T: AsRef<Table>>(f: &TransferFn, qs: &[T], regime: &Regime) -> Result<Vec<f64>> {
    state_values(&apply_transfer(f, qs)?, regime)
}

/// Greedy over `f(Q)` (standard) or Boltzmann of `f(Q)` against the prior (soft).
pub fn zero_shot_policy<T: AsRef<Table>>(f: &TransferFn, qs: &[T], regime: &Regime) -> Result<Policy> {
    let fq = apply_transfer(f, qs)?;
    match regime {
        Regime::Standard => Ok(greedy_policy(&fq)),
        Regime::EntropyRegularized(cfg) => boltzmann_policy(&fq, cfg),
    }
}

/// An auxiliary optimal value together with the reward that defines it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxValue {
    pub values: Table,
    pub reward: Table,
    pub iterations: usize,
}

/// `r_C = f(r) + γ E V_f − f(Q)`.
fn convex_reward(mdp: &TabularMdp, fq: &Table, vf: &[f64]) -> Table {
    Table::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
        mdp.reward().get(s, a) + mdp.gamma() * mdp.expected_next(s, a, vf) - fq.get(s, a)
    })
}

/// `r̂_C = f(Q) − f(r) − γ E V_f`, written out separately from [`convex_reward`].
fn concave_reward(mdp: &TabularMdp, fq: &Table, vf: &[f64]) -> Table {
    Table::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
        fq.get(s, a) - mdp.reward().get(s, a) - mdp.gamma() * mdp.expected_next(s, a, vf)
    })
}

fn check_sign(table: &Table, what: &str, slack: f64) -> Result<()> {
    let mut worst = (0.0, 0, 0);
    for s in 0..table.n_states() {
        for a in 0..table.n_actions() {
            if table.get(s, a) < worst.0 {
                worst = (table.get(s, a), s, a);
            }
        }
    }
    if worst.0 < -slack {
        return Err(Error::Consistency(format!(
            "{what} is {:e} at ({}, {}), below the proven lower limit 0",
            worst.0, worst.1, worst.2
        )));
    }
    Ok(())
}

fn solve_aux(mdp: &TabularMdp, reward: Table, opts: &SolverOptions) -> Result<AuxValue> {
    let sol = solve_standard(&mdp.with_reward(reward.clone())?, opts)?;
    Ok(AuxValue {
        values: sol.q.values,
        reward,
        iterations: sol.iterations,
    })
}

fn aux_c<T: AsRef<Table>>(
    mdp: &TabularMdp,
    f: &TransferFn,
    qs: &[T],
    regime: &Regime,
    opts: &SolverOptions,
    checked: bool,
) -> Result<AuxValue> {
    let fq = check_inputs(mdp, f, qs)?;
    let vf = state_values(&fq, regime)?;
    let r_c = convex_reward(mdp, &fq, &vf);
    let slack = sign_slack(opts, mdp.gamma());
    if checked {
        check_sign(&r_c, "r_C", slack)?;
    }
    let aux = solve_aux(mdp, r_c, opts)?;
    if checked {
        check_sign(&aux.values, "C", slack)?;
    }
    Ok(aux)
}

fn aux_c_hat<T: AsRef<Table>>(
    mdp: &TabularMdp,
    f: &TransferFn,
    qs: &[T],
    regime: &Regime,
    opts: &SolverOptions,
    checked: bool,
) -> Result<AuxValue> {
    let fq = check_inputs(mdp, f, qs)?;
    let vf = state_values(&fq, regime)?;
    let r_hat = concave_reward(mdp, &fq, &vf);
    let r_c = convex_reward(mdp, &fq, &vf);
    for (i, (x, y)) in r_hat.values().iter().zip(r_c.values()).enumerate() {
        if (x + y).abs() > 1e-12 * (1.0 + x.abs()) {
            return Err(Error::Consistency(format!(
                "r_C and r̂_C disagree at cell {i}: {y} vs {x}"
            )));
        }
    }
    let slack = sign_slack(opts, mdp.gamma());
    if checked {
        check_sign(&r_hat, "r̂_C", slack)?;
    }
    let aux = solve_aux(mdp, r_hat, opts)?;
    if checked {
        check_sign(&aux.values, "Ĉ", slack)?;
    }
    Ok(aux)
}

/// `C`, the optimal value of the standard task with reward `r_C`.
///
/// Requires `f` to carry the convex classification for the regime.
pub fn compute_c<T: AsRef<Table>>(
    mdp: &TabularMdp,
    f: &TransferFn,
    qs: &[T],
    regime: &Regime,
    opts: &SolverOptions,
) -> Result<AuxValue> {
    let class = f.require_classification(regime.kind())?;
    if !class.has_convex() {
        return Err(Error::Classification(format!("{f} is {class}, C needs convex conditions")));
    }
    aux_c(mdp, f, qs, regime, opts, true)
}

/// `Ĉ`, the optimal value of the standard task with reward `r̂_C = −r_C`.
pub fn compute_c_hat<T: AsRef<Table>>(
    mdp: &TabularMdp,
    f: &TransferFn,
    qs: &[T],
    regime: &Regime,
    opts: &SolverOptions,
) -> Result<AuxValue> {
    let class = f.require_classification(regime.kind())?;
    if !class.has_concave() {
        return Err(Error::Classification(format!("{f} is {class}, Ĉ needs concave conditions")));
    }
    aux_c_hat(mdp, f, qs, regime, opts, true)
}

/// How `D` is evaluated in the entropy-regularized regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DVariant {
    /// `D = r_D + γ E_{π_f} D`, no entropy term.
    #[default]
    Displayed,
    /// Soft value of `π_f` on `r_D`, charging `(1/β) log(π_f/π₀)`. Can be
    /// negative, so it is not sign-checked.
    SoftValue,
}

fn expect_policy(pi: &Policy, fq: &Table, s: usize) -> f64 {
    fq.row(s).iter().zip(pi.row(s)).map(|(x, p)| x * p).sum()
}

/// Regret certificate of the zero-shot policy under convex conditions.
pub fn compute_d<T: AsRef<Table>>(
    mdp: &TabularMdp,
    f: &TransferFn,
    qs: &[T],
    c: &Table,
    regime: &Regime,
    opts: &SolverOptions,
    variant: DVariant,
) -> Result<AuxValue> {
    let fq = check_inputs(mdp, f, qs)?;
    mdp.check_table(c)?;
    let pi = zero_shot_policy(f, qs, regime)?;
    let top: Vec<f64> = (0..mdp.n_states())
        .map(|s| {
            fq.row(s)
                .iter()
                .zip(c.row(s))
                .map(|(x, y)| x + y)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    // what π_f is credited with at s'
    let base: Vec<f64> = match regime {
        Regime::Standard => (0..mdp.n_states()).map(|s| expect_policy(&pi, &fq, s)).collect(),
        Regime::EntropyRegularized(cfg) => soft_state_values(&fq, cfg)?,
    };
    let gap: Vec<f64> = top.iter().zip(&base).map(|(t, b)| t - b).collect();
    let r_d = Table::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
        mdp.gamma() * mdp.expected_next(s, a, &gap)
    });
    let task = mdp.with_reward(r_d.clone())?;
    let sol = match (regime, variant) {
        (Regime::EntropyRegularized(cfg), DVariant::SoftValue) => evaluate_policy_soft(&task, &pi, cfg, opts)?,
        _ => evaluate_policy_standard(&task, &pi, opts)?,
    };
    if variant == DVariant::Displayed || regime.kind() == RegimeKind::Standard {
        check_sign(&sol.q.values, "D", sign_slack(opts, mdp.gamma()))?;
    }
    Ok(AuxValue {
        values: sol.q.values,
        reward: r_d,
        iterations: sol.iterations,
    })
}

/// Regret certificate of the zero-shot policy under concave conditions.
pub fn compute_d_hat<T: AsRef<Table>>(
    mdp: &TabularMdp,
    f: &TransferFn,
    qs: &[T],
    c_hat: &Table,
    regime: &Regime,
    opts: &SolverOptions,
) -> Result<AuxValue> {
    let fq = check_inputs(mdp, f, qs)?;
    mdp.check_table(c_hat)?;
    let pi = zero_shot_policy(f, qs, regime)?;
    let per_state: Vec<f64> = match regime {
        Regime::Standard => {
            let vf = hard_state_values(&fq);
            (0..mdp.n_states())
                .map(|s| {
                    (0..mdp.n_actions())
                        .map(|a| pi.prob(s, a) * (vf[s] - fq.get(s, a) + c_hat.get(s, a)))
                        .sum()
                })
                .collect()
        }
        Regime::EntropyRegularized(_) => (0..mdp.n_states()).map(|s| expect_policy(&pi, c_hat, s)).collect(),
    };
    let r_d = Table::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
        mdp.gamma() * mdp.expected_next(s, a, &per_state)
    });
    let sol = evaluate_policy_standard(&mdp.with_reward(r_d.clone())?, &pi, opts)?;
    check_sign(&sol.q.values, "D̂", sign_slack(opts, mdp.gamma()))?;
    Ok(AuxValue {
        values: sol.q.values,
        reward: r_d,
        iterations: sol.iterations,
    })
}

/// `max r_C / (1 − γ)`, a closed-form ceiling on `C`.
pub fn crude_c_bound(r_c: &Table, gamma: f64) -> f64 {
    r_c.max() / (1.0 - gamma)
}

/// Estimation error of the primitive tables and the Lipschitz constant used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSpec {
    /// `|Q̄ − Q|_∞ ≤ epsilon` for every primitive.
    pub epsilon: f64,
    /// Sup-norm Lipschitz constant of `f`; must be at least the function's own.
    pub lipschitz: f64,
}

impl EpsilonSpec {
    pub fn new(epsilon: f64, lipschitz: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0 && lipschitz.is_finite() && lipschitz >= 0.0) {
            return Err(Error::Config(format!("invalid epsilon spec ({epsilon}, {lipschitz})")));
        }
        Ok(Self { epsilon, lipschitz })
    }
}

/// `C̄` or `Ĉ̄` built from approximate tables `q_bars`.
///
/// The sign checks are skipped: with inexact inputs `r̄_C` may be negative.
pub fn epsilon_aux<T: AsRef<Table>>(
    mdp: &TabularMdp,
    f: &TransferFn,
    q_bars: &[T],
    regime: &Regime,
    classification: Classification,
    opts: &SolverOptions,
) -> Result<Option<AuxValue>> {
    match classification {
        Classification::Convex => aux_c(mdp, f, q_bars, regime, opts, false).map(Some),
        Classification::Concave => aux_c_hat(mdp, f, q_bars, regime, opts, false).map(Some),
        Classification::Both => Ok(None),
        Classification::Neither => Err(Error::Classification(format!("{f} has no bound"))),
    }
}

/// Bounds that stay valid when each primitive table is only `ε`-accurate.
///
/// Convex: `[f(Q̄) − Lε, f(Q̄) + C̄ + 2Lε/(1−γ)]`; concave:
/// `[f(Q̄) − Ĉ̄ − 2Lε/(1−γ), f(Q̄) + Lε]`; both: `f(Q̄) ± Lε`. `aux_bar` is
/// ignored for `Both`.
pub fn epsilon_bounds<T: AsRef<Table>>(
    f: &TransferFn,
    q_bars: &[T],
    eps: &EpsilonSpec,
    aux_bar: Option<&Table>,
    classification: Classification,
    gamma: f64,
) -> Result<(Table, Table)> {
    let l_f = f
        .lipschitz_bound()
        .ok_or_else(|| Error::Precondition(format!("{f} has no Lipschitz bound")))?;
    if eps.lipschitz < l_f {
        return Err(Error::Precondition(format!(
            "Lipschitz constant {} is below {f}'s bound {l_f}",
            eps.lipschitz
        )));
    }
    let fq = apply_transfer(f, q_bars)?;
    let le = eps.lipschitz * eps.epsilon;
    let wide = 2.0 * le / (1.0 - gamma);
    let aux = || {
        let t = aux_bar.ok_or_else(|| Error::Precondition("auxiliary table required".into()))?;
        fq.check_shape(t)?;
        Ok::<_, Error>(t)
    };
    match classification {
        Classification::Convex => {
            let c = aux()?;
            Ok((fq.map(|x| x - le), fq.zip_map(c, |x, c| x + c + wide)?))
        }
        Classification::Concave => {
            let c = aux()?;
            Ok((fq.zip_map(c, |x, c| x - c - wide)?, fq.map(|x| x + le)))
        }
        Classification::Both => Ok((fq.map(|x| x - le), fq.map(|x| x + le))),
        Classification::Neither => Err(Error::Classification(format!("{f} has no bound"))),
    }
}

/// Largest breach on each side, with the cell where it happens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub pass: bool,
    /// `max(lower − q̃)`
    pub lower_violation: f64,
    pub lower_witness: (usize, usize),
    /// `max(q̃ − upper)`
    pub upper_violation: f64,
    pub upper_witness: (usize, usize),
}

pub fn verify_bounds(q_tilde: &Table, lower: &Table, upper: &Table, tol: f64) -> Result<BoundCheck> {
    q_tilde.check_shape(lower)?;
    q_tilde.check_shape(upper)?;
    let mut lo = (f64::NEG_INFINITY, (0, 0));
    let mut hi = (f64::NEG_INFINITY, (0, 0));
    for s in 0..q_tilde.n_states() {
        for a in 0..q_tilde.n_actions() {
            let q = q_tilde.get(s, a);
            if lower.get(s, a) - q > lo.0 {
                lo = (lower.get(s, a) - q, (s, a));
            }
            if q - upper.get(s, a) > hi.0 {
                hi = (q - upper.get(s, a), (s, a));
            }
        }
    }
    Ok(BoundCheck {
        pass: lo.0 <= tol && hi.0 <= tol,
        lower_violation: lo.0,
        lower_witness: lo.1,
        upper_violation: hi.0,
        upper_witness: hi.1,
    })
}

/// Everything the bounds give for one composite task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub function: String,
    pub regime: RegimeKind,
    pub beta: Option<f64>,
    pub gamma: f64,
    pub tol: f64,
    pub classification: Classification,
    /// `f(Q)`, the zero-shot estimate.
    pub estimate: Table,
    pub lower: Table,
    pub upper: Table,
    /// `C` for convex (and exact) functions, `Ĉ` for concave ones.
    pub aux: Table,
    pub aux_reward: Table,
    /// `D` or `D̂` to match `aux`.
    pub regret: Table,
    pub crude_aux_bound: f64,
    pub gap_mean: f64,
    pub gap_max: f64,
    /// Cells where numerical error put lower above upper; both were set to the midpoint.
    pub clamped_cells: usize,
    pub zero_shot: Policy,
}

/// Computes `C`/`Ĉ`, `D`/`D̂` and the bound interval for `f` on `mdp`.
pub fn bound_report<T: AsRef<Table>>(
    mdp: &TabularMdp,
    f: &TransferFn,
    qs: &[T],
    regime: &Regime,
    opts: &SolverOptions,
) -> Result<BoundReport> {
    let classification = f.require_classification(regime.kind())?;
    let fq = check_inputs(mdp, f, qs)?;
    let (aux, regret, mut lower, mut upper) = if classification.has_convex() {
        let c = compute_c(mdp, f, qs, regime, opts)?;
        let d = compute_d(mdp, f, qs, &c.values, regime, opts, DVariant::Displayed)?;
        let upper = if classification.has_concave() {
            fq.clone()
        } else {
            fq.zip_map(&c.values, |x, c| x + c)?
        };
        (c, d, fq.clone(), upper)
    } else {
        let c = compute_c_hat(mdp, f, qs, regime, opts)?;
        let d = compute_d_hat(mdp, f, qs, &c.values, regime, opts)?;
        let lower = fq.zip_map(&c.values, |x, c| x - c)?;
        (c, d, lower, fq.clone())
    };
    let mut clamped = 0;
    for (l, u) in lower.values_mut().iter_mut().zip(upper.values_mut()) {
        if *l > *u {
            let mid = 0.5 * (*l + *u);
            *l = mid;
            *u = mid;
            clamped += 1;
        }
    }
    let gap = upper.zip_map(&lower, |u, l| u - l)?;
    Ok(BoundReport {
        function: f.to_string(),
        regime: regime.kind(),
        beta: regime.beta(),
        gamma: mdp.gamma(),
        tol: opts.tol,
        classification,
        crude_aux_bound: crude_c_bound(&aux.reward, mdp.gamma()),
        gap_mean: gap.mean(),
        gap_max: gap.max(),
        clamped_cells: clamped,
        zero_shot: zero_shot_policy(f, qs, regime)?,
        estimate: fq,
        lower,
        upper,
        aux_reward: aux.reward,
        aux: aux.values,
        regret: regret.values,
    })
}
