use serde::{Deserialize, Serialize};

use super::{greedy_policy, Policy, QKind, QTable, Regime, SoftConfig, TabularMdp, Table};
use crate::error::{Error, Result};

/// Stopping rule shared by every fixed-point iteration in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop once the sup-norm change between successive iterates is below this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 1_000_000,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) || self.max_iters == 0 {
            return Err(Error::Config(format!("invalid solver options {self:?}")));
        }
        Ok(())
    }
}

/// Converged fixed point plus iteration bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub q: QTable,
    pub iterations: usize,
    /// Sup-norm change of the final iteration.
    pub delta: f64,
}

/// `max_a q(s, a)` for every state.
pub fn hard_state_values(q: &Table) -> Vec<f64> {
    q.row_max()
}

/// `(1/β) log Σ_a π₀(a|s) exp(β q(s,a))`, max-shifted.
pub fn soft_state_values(q: &Table, cfg: &SoftConfig) -> Result<Vec<f64>> {
    cfg.check_shape(q.n_states(), q.n_actions())?;
    let mut v = vec![0.0; q.n_states()];
    fill_soft_values(q, cfg, &mut v)?;
    Ok(v)
}

fn fill_soft_values(q: &Table, cfg: &SoftConfig, out: &mut [f64]) -> Result<()> {
    let beta = cfg.beta();
    for (s, v) in out.iter_mut().enumerate() {
        let row = q.row(s);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let prior = cfg.prior().row(s);
        let acc: f64 = row.iter().zip(prior).map(|(&x, &p)| p * (beta * (x - m)).exp()).sum();
        *v = m + acc.ln() / beta;
        if !v.is_finite() {
            let a = row.iter().position(|x| !x.is_finite()).unwrap_or(0);
            return Err(Error::Numerical { state: s, action: a });
        }
    }
    Ok(())
}

/// Per-state `(1/β) Σ_a π(a|s) log(π(a|s)/π₀(a|s))`; zero-probability actions contribute nothing.
fn kl_penalties(pi: &Policy, cfg: &SoftConfig) -> Result<Vec<f64>> {
    cfg.check_shape(pi.n_states(), pi.n_actions())?;
    let mut out = Vec::with_capacity(pi.n_states());
    for s in 0..pi.n_states() {
        let mut kl = 0.0;
        for (a, (&p, &p0)) in pi.row(s).iter().zip(cfg.prior().row(s)).enumerate() {
            if p > 0.0 {
                if p0 <= 0.0 {
                    return Err(Error::Domain(format!(
                        "policy puts mass on ({s}, {a}) where the prior is zero"
                    )));
                }
                kl += p * (p / p0).ln();
            }
        }
        out.push(kl / cfg.beta());
    }
    Ok(out)
}

/// `Σ_a π(a|s) q(s,a)` minus the optional per-state KL penalty.
pub fn policy_state_values(q: &Table, pi: &Policy, cfg: Option<&SoftConfig>) -> Result<Vec<f64>> {
    if pi.probs().shape() != q.shape() {
        return Err(Error::Structural("policy and table shapes differ".into()));
    }
    let penalty = match cfg {
        Some(cfg) => Some(kl_penalties(pi, cfg)?),
        None => None,
    };
    Ok((0..q.n_states())
        .map(|s| {
            let v: f64 = q.row(s).iter().zip(pi.row(s)).map(|(x, p)| x * p).sum();
            v - penalty.as_ref().map_or(0.0, |k| k[s])
        })
        .collect())
}

fn backup_into(mdp: &TabularMdp, v: &[f64], out: &mut Table) -> Result<()> {
    let gamma = mdp.gamma();
    let reward = mdp.reward();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let x = reward.get(s, a) + gamma * mdp.expected_next(s, a, v);
            if !x.is_finite() {
                return Err(Error::Numerical { state: s, action: a });
            }
            out.set(s, a, x);
        }
    }
    Ok(())
}

/// One application of `r + γ E_{s'} max_{a'} q(s', a')`.
pub fn bellman_backup_standard(mdp: &TabularMdp, q: &Table) -> Result<QTable> {
    mdp.check_table(q)?;
    let v = hard_state_values(q);
    let mut out = Table::zeros(mdp.n_states(), mdp.n_actions());
    backup_into(mdp, &v, &mut out)?;
    Ok(QTable::new(QKind::Iterate, out))
}

/// One application of `r + (γ/β) E_{s'} log E_{a'~π₀} exp(β q(s', a'))`.
pub fn bellman_backup_soft(mdp: &TabularMdp, q: &Table, cfg: &SoftConfig) -> Result<QTable> {
    mdp.check_table(q)?;
    let v = soft_state_values(q, cfg)?;
    let mut out = Table::zeros(mdp.n_states(), mdp.n_actions());
    backup_into(mdp, &v, &mut out)?;
    Ok(QTable::new(QKind::Iterate, out))
}

/// Iterates `q ← r + γ E v(q)` from the zero table.
///
/// Every step is checked against the γ-contraction property; a violation
/// means the state-value map is not a sup-norm non-expansion and is reported
/// as an internal consistency error.
fn fixed_point(
    mdp: &TabularMdp,
    opts: &SolverOptions,
    kind: QKind,
    mut state_values: impl FnMut(&Table, &mut [f64]) -> Result<()>,
) -> Result<Solution> {
    opts.validate()?;
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let mut q = Table::zeros(n_s, n_a);
    let mut next = Table::zeros(n_s, n_a);
    let mut v = vec![0.0; n_s];
    let gamma = mdp.gamma();
    let r_scale = mdp.reward().values().iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let mut prev_delta = f64::INFINITY;
    for it in 1..=opts.max_iters {
        state_values(&q, &mut v)?;
        backup_into(mdp, &v, &mut next)?;
        let delta = next.sup_distance(&q)?;
        let scale = 1.0 + r_scale + next.values().iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if delta > gamma * prev_delta + 64.0 * f64::EPSILON * scale {
            return Err(Error::Consistency(format!(
                "iteration {it} expanded: delta {delta:e} after {prev_delta:e} with discount {gamma}"
            )));
        }
        std::mem::swap(&mut q, &mut next);
        if delta < opts.tol {
            return Ok(Solution {
                q: QTable::new(kind, q),
                iterations: it,
                delta,
            });
        }
        prev_delta = delta;
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iters,
        delta: prev_delta,
    })
}

/// Above this many states the exact finish is skipped.
const EXACT_MAX_STATES: usize = 1500;
const POLISH_ROUNDS: usize = 20;

/// Solves `A x = b` in place by Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col].abs() < 1e-300 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let m = a[row * n + col] / d;
            if m != 0.0 {
                for k in col..n {
                    a[row * n + k] -= m * a[col * n + k];
                }
                b[row] -= m * b[col];
            }
        }
    }
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row * n + k] * b[k]).sum();
        b[row] = (b[row] - tail) / a[row * n + row];
    }
    b.iter().all(|x| x.is_finite()).then_some(b)
}

/// `Q^π` from the linear system `(I − γ P_π) V = r_π − penalty`.
///
/// Value iteration stopped at `tol` is only accurate to about `tol/(1−γ)`,
/// and quantities built from differences of such tables (`r_C`, `r_D`) lose
/// another factor of the horizon. The direct solve brings the error down to
/// rounding.
fn exact_policy_q(mdp: &TabularMdp, pi: &Policy, penalty: Option<&[f64]>) -> Option<Table> {
    let n = mdp.n_states();
    if n > EXACT_MAX_STATES {
        return None;
    }
    let gamma = mdp.gamma();
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    for s in 0..n {
        a[s * n + s] = 1.0;
        b[s] = -penalty.map_or(0.0, |p| p[s]);
        for act in 0..mdp.n_actions() {
            let p = pi.prob(s, act);
            if p == 0.0 {
                continue;
            }
            b[s] += p * mdp.reward().get(s, act);
            for &(t, pt) in mdp.successors(s, act) {
                a[s * n + t] -= gamma * p * pt;
            }
        }
    }
    let v = gauss_solve(a, b)?;
    let mut q = Table::zeros(n, mdp.n_actions());
    backup_into(mdp, &v, &mut q).ok()?;
    Some(q)
}

/// Replaces an iterate by an exact value when the two agree to within the
/// iterate's own error bound; otherwise the iterate stands.
fn accept_exact(sol: &mut Solution, exact: Table, gamma: f64, opts: &SolverOptions) {
    let scale = 1.0 + exact.values().iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let bound = 2.0 * opts.tol / (1.0 - gamma) + 1e-12 * scale;
    if sol.q.values.sup_distance(&exact).is_ok_and(|d| d <= bound) {
        sol.q.values = exact;
    }
}

/// Optimal standard-RL action values by value iteration, finished by policy
/// iteration with exact evaluations from the greedy policy.
pub fn solve_standard(mdp: &TabularMdp, opts: &SolverOptions) -> Result<Solution> {
    let mut sol = fixed_point(mdp, opts, QKind::OptimalStandard, |q, v| {
        for (s, out) in v.iter_mut().enumerate() {
            *out = q.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        Ok(())
    })?;
    let mut pi = greedy_policy(&sol.q.values);
    for _ in 0..POLISH_ROUNDS {
        let Some(q) = exact_policy_q(mdp, &pi, None) else {
            break;
        };
        let next = greedy_policy(&q);
        if next == pi {
            accept_exact(&mut sol, q, mdp.gamma(), opts);
            break;
        }
        pi = next;
    }
    Ok(sol)
}

/// Optimal entropy-regularized action values by soft value iteration.
pub fn solve_soft(mdp: &TabularMdp, cfg: &SoftConfig, opts: &SolverOptions) -> Result<Solution> {
    cfg.check_shape(mdp.n_states(), mdp.n_actions())?;
    fixed_point(mdp, opts, QKind::OptimalSoft, |q, v| fill_soft_values(q, cfg, v))
}

pub fn solve(mdp: &TabularMdp, regime: &Regime, opts: &SolverOptions) -> Result<Solution> {
    match regime {
        Regime::Standard => solve_standard(mdp, opts),
        Regime::EntropyRegularized(cfg) => solve_soft(mdp, cfg, opts),
    }
}

fn check_policy(mdp: &TabularMdp, pi: &Policy) -> Result<()> {
    if pi.probs().shape() != (mdp.n_states(), mdp.n_actions()) {
        return Err(Error::Structural("policy shape does not match the MDP".into()));
    }
    Ok(())
}

/// `Q^π` under `Q ← r + γ E_{s'} E_{a'~π} Q(s', a')`.
pub fn evaluate_policy_standard(mdp: &TabularMdp, pi: &Policy, opts: &SolverOptions) -> Result<Solution> {
    check_policy(mdp, pi)?;
    let mut sol = fixed_point(mdp, opts, QKind::PolicyValue, |q, v| {
        for (s, out) in v.iter_mut().enumerate() {
            *out = q.row(s).iter().zip(pi.row(s)).map(|(x, p)| x * p).sum();
        }
        Ok(())
    })?;
    if let Some(q) = exact_policy_q(mdp, pi, None) {
        accept_exact(&mut sol, q, mdp.gamma(), opts);
    }
    Ok(sol)
}

/// Soft value of `π`: the continuation is charged `(1/β) log(π/π₀)` per step.
pub fn evaluate_policy_soft(
    mdp: &TabularMdp,
    pi: &Policy,
    cfg: &SoftConfig,
    opts: &SolverOptions,
) -> Result<Solution> {
    check_policy(mdp, pi)?;
    let penalty = kl_penalties(pi, cfg)?;
    let mut sol = fixed_point(mdp, opts, QKind::PolicyValue, |q, v| {
        for (s, out) in v.iter_mut().enumerate() {
            let e: f64 = q.row(s).iter().zip(pi.row(s)).map(|(x, p)| x * p).sum();
            *out = e - penalty[s];
        }
        Ok(())
    })?;
    if let Some(q) = exact_policy_q(mdp, pi, Some(&penalty)) {
        accept_exact(&mut sol, q, mdp.gamma(), opts);
    }
    Ok(sol)
}

pub fn evaluate_policy(mdp: &TabularMdp, pi: &Policy, regime: &Regime, opts: &SolverOptions) -> Result<Solution> {
    match regime {
        Regime::Standard => evaluate_policy_standard(mdp, pi, opts),
        Regime::EntropyRegularized(cfg) => evaluate_policy_soft(mdp, pi, cfg, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::PolicyKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mdp(seed: u64, n_s: usize, n_a: usize, gamma: f64) -> TabularMdp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Vec::with_capacity(n_s * n_a * n_s);
        for _ in 0..n_s * n_a {
            let row: Vec<f64> = (0..n_s).map(|_| rng.gen::<f64>()).collect();
            let z: f64 = row.iter().sum();
            p.extend(row.iter().map(|x| x / z));
        }
        let r = Table::from_fn(n_s, n_a, |_, _| rng.gen_range(-1.0..1.0));
        TabularMdp::without_terminals(p, r, gamma).unwrap()
    }

    /// Dense Gaussian elimination on `(I - γ P_π) q = r` over state-action pairs.
    fn linear_policy_value(mdp: &TabularMdp, pi: &Policy) -> Vec<f64> {
        let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
        let n = n_s * n_a;
        let mut m = vec![vec![0.0; n + 1]; n];
        for s in 0..n_s {
            for a in 0..n_a {
                let i = s * n_a + a;
                m[i][i] += 1.0;
                for (t, &p) in mdp.transition_row(s, a).iter().enumerate() {
                    for b in 0..n_a {
                        m[i][t * n_a + b] -= mdp.gamma() * p * pi.prob(t, b);
                    }
                }
                m[i][n] = mdp.reward().get(s, a);
            }
        }
        for c in 0..n {
            let piv = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
            m.swap(c, piv);
            let pivot_row = m[c].clone();
            for (r, row) in m.iter_mut().enumerate() {
                if r != c {
                    let k = row[c] / pivot_row[c];
                    for (x, p) in row[c..].iter_mut().zip(&pivot_row[c..]) {
                        *x -= k * p;
                    }
                }
            }
        }
        (0..n).map(|i| m[i][n] / m[i][i]).collect()
    }

    fn tight() -> SolverOptions {
        SolverOptions::with_tol(1e-13)
    }

    #[test]
    fn policy_evaluation_matches_linear_solve() {
        for seed in 0..5 {
            let mdp = random_mdp(seed, 5, 3, 0.9);
            let pi = Policy::uniform(5, 3);
            let q = evaluate_policy_standard(&mdp, &pi, &tight()).unwrap();
            let exact = linear_policy_value(&mdp, &pi);
            for (x, y) in q.q.values().iter().zip(&exact) {
                assert!((x - y).abs() < 1e-10, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn optimal_q_is_value_of_its_greedy_policy() {
        let mdp = random_mdp(7, 6, 4, 0.95);
        let q = solve_standard(&mdp, &tight()).unwrap();
        let pi = greedy_policy(&q.q);
        let exact = linear_policy_value(&mdp, &pi);
        for (x, y) in q.q.values().iter().zip(&exact) {
            assert!((x - y).abs() < 1e-9);
        }
        assert_eq!(q.q.kind, QKind::OptimalStandard);
    }

    #[test]
    fn exact_finish_leaves_rounding_residual() {
        let mdp = random_mdp(21, 8, 3, 0.99);
        let q = solve_standard(&mdp, &SolverOptions::with_tol(1e-6)).unwrap().q.values;
        let residual = bellman_backup_standard(&mdp, &q).unwrap().values.sup_distance(&q).unwrap();
        assert!(residual < 1e-12, "residual {residual:e}");
        let pi = Policy::uniform(8, 3);
        let v = evaluate_policy_standard(&mdp, &pi, &SolverOptions::with_tol(1e-6)).unwrap().q.values;
        let exact = linear_policy_value(&mdp, &pi);
        for (x, y) in v.values().iter().zip(&exact) {
            assert!((x - y).abs() < 1e-11);
        }
    }

    #[test]
    fn gauss_solve_small_system() {
        let x = gauss_solve(vec![0.0, 2.0, 1.0, 1.0], vec![4.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
        assert!(gauss_solve(vec![1.0, 1.0, 1.0, 1.0], vec![1.0, 2.0]).is_none());
    }

    #[test]
    fn soft_backup_matches_naive_formula() {
        let mdp = random_mdp(3, 4, 3, 0.9);
        let cfg = SoftConfig::uniform(2.0, 4, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = Table::from_fn(4, 3, |_, _| rng.gen_range(-3.0..3.0));
        let got = bellman_backup_soft(&mdp, &q, &cfg).unwrap();
        for s in 0..4 {
            for a in 0..3 {
                let mut e = 0.0;
                for (t, &p) in mdp.transition_row(s, a).iter().enumerate() {
                    let z: f64 = (0..3).map(|b| (2.0 * q.get(t, b)).exp() / 3.0).sum();
                    e += p * z.ln() / 2.0;
                }
                let want = mdp.reward().get(s, a) + 0.9 * e;
                assert!((got.get(s, a) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn soft_values_survive_large_inputs() {
        let q = Table::from_rows(vec![vec![1000.0, 999.0]]).unwrap();
        let cfg = SoftConfig::uniform(5.0, 1, 2).unwrap();
        let v = soft_state_values(&q, &cfg).unwrap()[0];
        let want = 1000.0 + ((1.0 + (-5.0f64).exp()) / 2.0).ln() / 5.0;
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn soft_optimum_is_soft_value_of_boltzmann_policy() {
        let mdp = random_mdp(5, 5, 3, 0.9);
        let cfg = SoftConfig::uniform(1.5, 5, 3).unwrap();
        let q = solve_soft(&mdp, &cfg, &tight()).unwrap();
        let pi = crate::mdp::boltzmann_policy(&q.q, &cfg).unwrap();
        let eval = evaluate_policy_soft(&mdp, &pi, &cfg, &tight()).unwrap();
        assert!(eval.q.sup_distance(&q.q).unwrap() < 1e-10);
    }

    #[test]
    fn soft_approaches_standard_as_beta_grows() {
        let mdp = random_mdp(9, 4, 3, 0.8);
        let hard = solve_standard(&mdp, &tight()).unwrap();
        let mut last = f64::INFINITY;
        for beta in [1.0, 10.0, 100.0, 1000.0] {
            let cfg = SoftConfig::uniform(beta, 4, 3).unwrap();
            let soft = solve_soft(&mdp, &cfg, &tight()).unwrap();
            let gap = hard.q.sup_distance(&soft.q).unwrap();
            // soft never exceeds hard; gap bounded by γ ln|A| / (β(1-γ))
            assert!(soft.q.values().iter().zip(hard.q.values()).all(|(s, h)| s <= &(h + 1e-9)));
            assert!(gap <= 0.8 * 3f64.ln() / (beta * 0.2) + 1e-9);
            assert!(gap < last);
            last = gap;
        }
    }

    #[test]
    fn reward_shift_shifts_value() {
        let mdp = random_mdp(2, 4, 2, 0.9);
        let shifted = mdp.with_reward(mdp.reward().map(|r| r + 1.0)).unwrap();
        let a = solve_standard(&mdp, &tight()).unwrap();
        let b = solve_standard(&shifted, &tight()).unwrap();
        for (x, y) in a.q.values().iter().zip(b.q.values()) {
            assert!((y - x - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn terminal_states_have_reward_only() {
        let transition = vec![0.0, 1.0, 0.0, 1.0];
        let mdp = TabularMdp::new(
            2,
            1,
            transition,
            Table::from_rows(vec![vec![0.0], vec![2.0]]).unwrap(),
            0.5,
            vec![false, true],
            vec![1.0, 0.0],
        )
        .unwrap();
        let q = solve_standard(&mdp, &SolverOptions::default()).unwrap();
        assert_eq!(q.q.get(1, 0), 2.0);
        assert_eq!(q.q.get(0, 0), 1.0);
    }

    #[test]
    fn kl_rejects_mass_outside_prior() {
        let prior = Policy::new(PolicyKind::Stochastic, Table::from_rows(vec![vec![1.0, 0.0]]).unwrap()).unwrap();
        assert!(SoftConfig::new(1.0, prior).is_err());
    }

    #[test]
    fn non_convergence_is_reported() {
        let mdp = random_mdp(1, 3, 2, 0.99);
        let opts = SolverOptions { tol: 1e-12, max_iters: 5 };
        assert!(matches!(solve_standard(&mdp, &opts), Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn bad_options_rejected() {
        let mdp = random_mdp(1, 2, 2, 0.5);
        let opts = SolverOptions { tol: 0.0, max_iters: 5 };
        assert!(matches!(solve_standard(&mdp, &opts), Err(Error::Config(_))));
    }
}
