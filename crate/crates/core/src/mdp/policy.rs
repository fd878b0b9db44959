use serde::{Deserialize, Serialize};

use super::{Table, PROB_TOL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// One-hot rows.
    Greedy,
    Boltzmann,
    /// Any other valid distribution (priors, hand-built policies).
    Stochastic,
}

/// Row-stochastic `|S| × |A|` action distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyDoc", into = "PolicyDoc")]
pub struct Policy {
    kind: PolicyKind,
    probs: Table,
}

impl Policy {
    pub fn new(kind: PolicyKind, probs: Table) -> Result<Self> {
        for (s, row) in probs.rows().enumerate() {
            if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                return Err(Error::Domain(format!("policy row {s} has a negative or non-finite entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > PROB_TOL {
                return Err(Error::Domain(format!("policy row {s} sums to {total}")));
            }
            if kind == PolicyKind::Greedy && row.iter().filter(|&&p| p != 0.0).count() != 1 {
                return Err(Error::Domain(format!("greedy policy row {s} is not one-hot")));
            }
        }
        Ok(Self { kind, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            kind: PolicyKind::Stochastic,
            probs: Table::filled(n_states, n_actions, 1.0 / n_actions as f64),
        }
    }

    /// One-hot policy from per-state action indices.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        if actions.iter().any(|&a| a >= n_actions) {
            return Err(Error::Structural("action index out of range".into()));
        }
        let probs = Table::from_fn(actions.len(), n_actions, |s, a| if actions[s] == a { 1.0 } else { 0.0 });
        Ok(Self {
            kind: PolicyKind::Greedy,
            probs,
        })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn probs(&self) -> &Table {
        &self.probs
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs.get(s, a)
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        self.probs.row(s)
    }

    pub fn n_states(&self) -> usize {
        self.probs.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.n_actions()
    }

    /// The chosen action of each state for a greedy policy; the modal action otherwise.
    pub fn argmax_actions(&self) -> Vec<usize> {
        self.probs.rows().map(argmax_first).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyDoc {
    kind: PolicyKind,
    probs: Table,
}

impl TryFrom<PolicyDoc> for Policy {
    type Error = Error;

    fn try_from(doc: PolicyDoc) -> Result<Self> {
        Policy::new(doc.kind, doc.probs)
    }
}

impl From<Policy> for PolicyDoc {
    fn from(p: Policy) -> Self {
        PolicyDoc {
            kind: p.kind,
            probs: p.probs,
        }
    }
}

/// Inverse temperature and prior policy of the entropy-regularized objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SoftConfigDoc", into = "SoftConfigDoc")]
pub struct SoftConfig {
    beta: f64,
    prior: Policy,
}

impl SoftConfig {
    pub fn new(beta: f64, prior: Policy) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("inverse temperature {beta} must be finite and positive")));
        }
        if prior.probs.values().iter().any(|&p| p <= 0.0) {
            return Err(Error::Config("prior policy must be strictly positive".into()));
        }
        Ok(Self { beta, prior })
    }

    /// Uniform prior over actions.
    pub fn uniform(beta: f64, n_states: usize, n_actions: usize) -> Result<Self> {
        Self::new(beta, Policy::uniform(n_states, n_actions))
    }

    #[inline]
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn prior(&self) -> &Policy {
        &self.prior
    }

    pub(crate) fn check_shape(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.prior.probs.shape() != (n_states, n_actions) {
            return Err(Error::Structural("prior policy shape does not match the tables".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SoftConfigDoc {
    beta: f64,
    prior: Policy,
}

impl TryFrom<SoftConfigDoc> for SoftConfig {
    type Error = Error;

    fn try_from(doc: SoftConfigDoc) -> Result<Self> {
        SoftConfig::new(doc.beta, doc.prior)
    }
}

impl From<SoftConfig> for SoftConfigDoc {
    fn from(c: SoftConfig) -> Self {
        SoftConfigDoc {
            beta: c.beta,
            prior: c.prior,
        }
    }
}

/// Index of the first maximum; lowest index wins ties.
pub(crate) fn argmax_first(row: &[f64]) -> usize {
    let mut best = 0;
    for (a, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = a;
        }
    }
    best
}

/// One-hot argmax of each row, ties to the lowest action index.
pub fn greedy_policy(q: &Table) -> Policy {
    let actions: Vec<usize> = q.rows().map(argmax_first).collect();
    Policy::deterministic(q.n_actions(), &actions).expect("argmax is in range")
}

/// `π(a|s) = π₀(a|s) exp(β (q(s,a) − v(s)))` with `v` the soft state value.
pub fn boltzmann_policy(q: &Table, cfg: &SoftConfig) -> Result<Policy> {
    cfg.check_shape(q.n_states(), q.n_actions())?;
    let beta = cfg.beta();
    let mut probs = Table::zeros(q.n_states(), q.n_actions());
    for s in 0..q.n_states() {
        let row = q.row(s);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let prior = cfg.prior().row(s);
        let out = probs.row_mut(s);
        let mut total = 0.0;
        for a in 0..row.len() {
            out[a] = prior[a] * (beta * (row[a] - m)).exp();
            total += out[a];
        }
        for p in out.iter_mut() {
            *p /= total;
        }
    }
    if let Some((s, a)) = probs.first_non_finite() {
        return Err(Error::Numerical { state: s, action: a });
    }
    Ok(Policy {
        kind: PolicyKind::Boltzmann,
        probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_picks_argmax_and_breaks_ties_low() {
        let q = Table::from_rows(vec![vec![1.0, 3.0, 2.0], vec![2.0, 2.0, 0.0]]).unwrap();
        let pi = greedy_policy(&q);
        assert_eq!(pi.argmax_actions(), vec![1, 0]);
        assert_eq!(pi.row(0), &[0.0, 1.0, 0.0]);
        assert_eq!(pi.kind(), PolicyKind::Greedy);
    }

    #[test]
    fn boltzmann_hand_value() {
        let q = Table::from_rows(vec![vec![0.0, 3f64.ln()]]).unwrap();
        let cfg = SoftConfig::uniform(1.0, 1, 2).unwrap();
        let pi = boltzmann_policy(&q, &cfg).unwrap();
        assert!((pi.prob(0, 0) - 0.25).abs() < 1e-15);
        assert!((pi.prob(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn boltzmann_of_constant_row_is_the_prior() {
        let prior = Policy::new(
            PolicyKind::Stochastic,
            Table::from_rows(vec![vec![0.2, 0.3, 0.5]]).unwrap(),
        )
        .unwrap();
        let cfg = SoftConfig::new(2.5, prior.clone()).unwrap();
        let q = Table::filled(1, 3, -4.0);
        let pi = boltzmann_policy(&q, &cfg).unwrap();
        for a in 0..3 {
            assert_eq!(pi.prob(0, a), prior.prob(0, a));
        }
    }

    #[test]
    fn boltzmann_large_beta_concentrates() {
        let q = Table::from_rows(vec![vec![0.0, 0.1, -0.2]]).unwrap();
        let cfg = SoftConfig::uniform(1e6, 1, 3).unwrap();
        let pi = boltzmann_policy(&q, &cfg).unwrap();
        assert!(pi.prob(0, 1) >= 1.0 - 1e-4);
    }

    #[test]
    fn soft_config_validation() {
        assert!(SoftConfig::uniform(0.0, 1, 2).is_err());
        assert!(SoftConfig::uniform(f64::INFINITY, 1, 2).is_err());
        let zero_prior = Policy::deterministic(2, &[0]).unwrap();
        assert!(SoftConfig::new(1.0, zero_prior).is_err());
    }

    #[test]
    fn policy_rows_must_be_distributions() {
        let bad = Table::from_rows(vec![vec![0.5, 0.6]]).unwrap();
        assert!(Policy::new(PolicyKind::Stochastic, bad).is_err());
        let not_one_hot = Table::from_rows(vec![vec![0.5, 0.5]]).unwrap();
        assert!(Policy::new(PolicyKind::Greedy, not_one_hot).is_err());
    }
}
