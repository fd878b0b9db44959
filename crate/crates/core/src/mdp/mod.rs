//! Exact tabular MDPs and their standard and entropy-regularized solvers.

mod policy;
mod solve;
mod table;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use policy::{boltzmann_policy, greedy_policy, Policy, PolicyKind, SoftConfig};
pub use solve::{
    bellman_backup_soft, bellman_backup_standard, evaluate_policy, evaluate_policy_soft,
    evaluate_policy_standard, hard_state_values, policy_state_values, soft_state_values, solve,
    solve_soft, solve_standard, Solution, SolverOptions,
};
pub use table::Table;

/// Tolerance on probability rows and the initial distribution.
pub const PROB_TOL: f64 = 1e-12;

/// Which objective a computation is carried out in.
#[derive(Debug, Clone, PartialEq)]
pub enum Regime {
    Standard,
    EntropyRegularized(SoftConfig),
}

impl Regime {
    pub fn kind(&self) -> RegimeKind {
        match self {
            Regime::Standard => RegimeKind::Standard,
            Regime::EntropyRegularized(_) => RegimeKind::EntropyRegularized,
        }
    }

    pub fn soft_config(&self) -> Option<&SoftConfig> {
        match self {
            Regime::Standard => None,
            Regime::EntropyRegularized(cfg) => Some(cfg),
        }
    }

    pub fn beta(&self) -> Option<f64> {
        self.soft_config().map(SoftConfig::beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeKind {
    Standard,
    EntropyRegularized,
}

impl std::fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RegimeKind::Standard => "standard",
            RegimeKind::EntropyRegularized => "entropy-regularized",
        })
    }
}

impl std::str::FromStr for RegimeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" | "std" => Ok(RegimeKind::Standard),
            "entropy-regularized" | "entropy_regularized" | "soft" => Ok(RegimeKind::EntropyRegularized),
            other => Err(Error::Config(format!("unknown regime `{other}`"))),
        }
    }
}

/// Finite MDP with a terminal mask.
///
/// Terminal states contribute zero continuation value in every backup
/// whatever their stored transition rows say. Transitions are kept dense for
/// serialization and mirrored into a sparse successor list for the solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDoc", into = "MdpDoc")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Table,
    gamma: f64,
    terminal: Vec<bool>,
    initial_dist: Vec<f64>,
    succ_offsets: Vec<usize>,
    succ: Vec<(usize, f64)>,
}

impl TabularMdp {
    /// `transition` is flattened `[s][a][s']`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Table,
        gamma: f64,
        terminal: Vec<bool>,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("need at least one state and one action".into()));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::InvalidMdp(format!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.shape() != (n_states, n_actions) {
            return Err(Error::InvalidMdp("reward table shape does not match the MDP".into()));
        }
        if let Some((s, a)) = reward.first_non_finite() {
            return Err(Error::InvalidMdp(format!("non-finite reward at ({s}, {a})")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidMdp(format!("discount {gamma} outside (0, 1)")));
        }
        if terminal.len() != n_states || initial_dist.len() != n_states {
            return Err(Error::InvalidMdp("terminal mask or initial distribution has wrong length".into()));
        }
        if initial_dist.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::InvalidMdp("initial distribution has a negative or non-finite entry".into()));
        }
        let mu_sum: f64 = initial_dist.iter().sum();
        if (mu_sum - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidMdp(format!("initial distribution sums to {mu_sum}")));
        }

        let mut succ_offsets = Vec::with_capacity(n_states * n_actions + 1);
        let mut succ = Vec::new();
        succ_offsets.push(0);
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transition[(s * n_actions + a) * n_states..(s * n_actions + a + 1) * n_states];
                if !terminal[s] {
                    if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                        return Err(Error::InvalidMdp(format!(
                            "transition row ({s}, {a}) has a negative or non-finite entry"
                        )));
                    }
                    let total: f64 = row.iter().sum();
                    if (total - 1.0).abs() > PROB_TOL {
                        return Err(Error::InvalidMdp(format!(
                            "transition row ({s}, {a}) sums to {total}"
                        )));
                    }
                    succ.extend(row.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(t, &p)| (t, p)));
                }
                succ_offsets.push(succ.len());
            }
        }

        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            terminal,
            initial_dist,
            succ_offsets,
            succ,
        })
    }

    /// Non-terminal MDP with a uniform initial distribution.
    pub fn without_terminals(transition: Vec<f64>, reward: Table, gamma: f64) -> Result<Self> {
        let (n_states, n_actions) = reward.shape();
        Self::new(
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            vec![false; n_states],
            vec![1.0 / n_states as f64; n_states],
        )
    }

    #[inline]
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward(&self) -> &Table {
        &self.reward
    }

    pub fn terminal(&self) -> &[bool] {
        &self.terminal
    }

    #[inline]
    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    /// Dense `P[s][a][·]` row as stored.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    /// Non-zero successors of `(s, a)`; empty for terminal `s`.
    #[inline]
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        let i = s * self.n_actions + a;
        &self.succ[self.succ_offsets[i]..self.succ_offsets[i + 1]]
    }

    /// `E_{s'~P(s,a)} v(s')`, zero for terminal `s`.
    #[inline]
    pub fn expected_next(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        self.successors(s, a).iter().map(|&(t, p)| p * v[t]).sum()
    }

    /// Same dynamics, discount and terminals with a different reward table.
    pub fn with_reward(&self, reward: Table) -> Result<Self> {
        if reward.shape() != self.reward.shape() {
            return Err(Error::Structural("replacement reward has the wrong shape".into()));
        }
        if let Some((s, a)) = reward.first_non_finite() {
            return Err(Error::InvalidMdp(format!("non-finite reward at ({s}, {a})")));
        }
        Ok(Self { reward, ..self.clone() })
    }

    /// True when every non-terminal `(s, a)` has a single successor.
    pub fn is_deterministic(&self) -> bool {
        (0..self.n_states)
            .filter(|&s| !self.terminal[s])
            .all(|s| (0..self.n_actions).all(|a| self.successors(s, a).len() == 1))
    }

    pub(crate) fn check_table(&self, t: &Table) -> Result<()> {
        if t.shape() != (self.n_states, self.n_actions) {
            return Err(Error::Structural(format!(
                "table is {}x{} but the MDP is {}x{}",
                t.n_states(),
                t.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct MdpDoc {
    n_states: usize,
    n_actions: usize,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    gamma: f64,
    #[serde(default)]
    terminal: Option<Vec<bool>>,
    #[serde(default)]
    initial_dist: Option<Vec<f64>>,
}

impl TryFrom<MdpDoc> for TabularMdp {
    type Error = Error;

    fn try_from(doc: MdpDoc) -> Result<Self> {
        let n = doc.n_states;
        if doc.transition.len() != n || doc.transition.iter().any(|rows| rows.len() != doc.n_actions) {
            return Err(Error::InvalidMdp("transition tensor shape does not match n_states x n_actions".into()));
        }
        let mut flat = Vec::with_capacity(n * doc.n_actions * n);
        for rows in doc.transition {
            for row in rows {
                if row.len() != n {
                    return Err(Error::InvalidMdp("transition row has wrong length".into()));
                }
                flat.extend(row);
            }
        }
        let reward = Table::from_rows(doc.reward)?;
        TabularMdp::new(
            n,
            doc.n_actions,
            flat,
            reward,
            doc.gamma,
            doc.terminal.unwrap_or_else(|| vec![false; n]),
            doc.initial_dist.unwrap_or_else(|| vec![1.0 / n as f64; n]),
        )
    }
}

impl From<TabularMdp> for MdpDoc {
    fn from(m: TabularMdp) -> Self {
        let transition = (0..m.n_states)
            .map(|s| (0..m.n_actions).map(|a| m.transition_row(s, a).to_vec()).collect())
            .collect();
        MdpDoc {
            n_states: m.n_states,
            n_actions: m.n_actions,
            transition,
            reward: m.reward.to_rows(),
            gamma: m.gamma,
            terminal: Some(m.terminal),
            initial_dist: Some(m.initial_dist),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QKind {
    OptimalStandard,
    OptimalSoft,
    PolicyValue,
    Iterate,
}

/// Action-value table tagged with how it was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub kind: QKind,
    pub values: Table,
}

impl QTable {
    pub fn new(kind: QKind, values: Table) -> Self {
        Self { kind, values }
    }

    pub fn zeros(n_states: usize, n_actions: usize, kind: QKind) -> Self {
        Self::new(kind, Table::zeros(n_states, n_actions))
    }
}

impl std::ops::Deref for QTable {
    type Target = Table;

    fn deref(&self) -> &Table {
        &self.values
    }
}

impl AsRef<Table> for QTable {
    fn as_ref(&self) -> &Table {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> TabularMdp {
        // state 0 -> state 1 (terminal) under both actions
        let transition = vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        TabularMdp::new(
            2,
            2,
            transition,
            Table::from_rows(vec![vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap(),
            0.9,
            vec![false, true],
            vec![1.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn terminal_rows_are_ignored() {
        let m = two_state();
        assert!(m.successors(1, 0).is_empty());
        assert_eq!(m.expected_next(1, 0, &[5.0, 5.0]), 0.0);
        assert_eq!(m.expected_next(0, 1, &[5.0, 7.0]), 7.0);
        assert!(m.is_deterministic());
    }

    #[test]
    fn rejects_bad_rows_and_gamma() {
        let r = Table::zeros(1, 1);
        assert!(TabularMdp::without_terminals(vec![0.5], r.clone(), 0.5).is_err());
        assert!(TabularMdp::without_terminals(vec![1.0], r.clone(), 1.0).is_err());
        assert!(TabularMdp::without_terminals(vec![1.0], r.clone(), 0.0).is_err());
        assert!(TabularMdp::without_terminals(vec![1.0 + 1e-9], r, 0.5).is_err());
        let inf = Table::filled(1, 1, f64::INFINITY);
        assert!(TabularMdp::without_terminals(vec![1.0], inf, 0.5).is_err());
    }

    #[test]
    fn rejects_bad_initial_distribution() {
        let err = TabularMdp::new(
            1,
            1,
            vec![1.0],
            Table::zeros(1, 1),
            0.5,
            vec![false],
            vec![0.5],
        );
        assert!(matches!(err, Err(Error::InvalidMdp(_))));
    }

    #[test]
    fn json_round_trip() {
        let m = two_state();
        let text = serde_json::to_string(&m).unwrap();
        let back: TabularMdp = serde_json::from_str(&text).unwrap();
        assert_eq!(m, back);
    }
}
