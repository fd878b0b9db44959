//! Case generators and reporting for the acceptance suite.

use std::fmt;

use qbound_core::envs::random_mdp;
use qbound_core::harness::derive_seed;
use qbound_core::mdp::{TabularMdp, Table};
use qbound_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GAMMAS: [f64; 3] = [0.8, 0.9, 0.99];

/// Primitive tasks sharing one set of dynamics.
#[derive(Debug, Clone)]
pub struct RandomCase {
    pub index: u64,
    pub gamma: f64,
    pub primitives: Vec<TabularMdp>,
}

impl RandomCase {
    pub fn shape(&self) -> (usize, usize) {
        (self.primitives[0].n_states(), self.primitives[0].n_actions())
    }
}

/// Case `index` of a sweep: 5 to 10 states, 2 to 4 actions, γ drawn from
/// [`GAMMAS`], and `n_primitives` reward tables on the same transitions.
pub fn random_case(seed: u64, index: u64, n_primitives: usize, reward_range: (f64, f64)) -> Result<RandomCase> {
    let case_seed = derive_seed(seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
    let n_s = rng.gen_range(5..=10);
    let n_a = rng.gen_range(2..=4);
    let gamma = GAMMAS[rng.gen_range(0..GAMMAS.len())];
    let base = random_mdp(n_s, n_a, reward_range, gamma, derive_seed(case_seed, 0))?;
    let primitives = (0..n_primitives as u64)
        .map(|k| {
            let r = random_mdp(n_s, n_a, reward_range, gamma, derive_seed(case_seed, k + 1))?;
            base.with_reward(r.reward().clone())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RandomCase {
        index,
        gamma,
        primitives,
    })
}

/// `q` plus independent uniform noise in `[-eps, eps]`.
pub fn perturb(q: &Table, eps: f64, seed: u64) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = q.clone();
    for x in out.values_mut() {
        *x += rng.gen_range(-eps..=eps);
    }
    out
}

/// Running maximum of a signed excess, with the case that produced it.
#[derive(Debug, Clone)]
pub struct Worst {
    pub value: f64,
    pub at: String,
}

impl Default for Worst {
    fn default() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            at: String::new(),
        }
    }
}

impl Worst {
    pub fn update(&mut self, value: f64, at: impl FnOnce() -> String) {
        if value > self.value {
            self.value = value;
            self.at = at();
        }
    }

    /// Largest excess over a table pair, `a − b` cellwise.
    pub fn update_tables(&mut self, a: &Table, b: &Table, at: impl FnOnce() -> String) {
        let m = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| x - y)
            .fold(f64::NEG_INFINITY, f64::max);
        self.update(m, at);
    }

    pub fn within(&self, tol: f64) -> bool {
        self.value <= tol
    }
}

impl fmt::Display for Worst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.at.is_empty() {
            write!(f, "{:.3e}", self.value)
        } else {
            write!(f, "{:.3e} at {}", self.value, self.at)
        }
    }
}

/// Verdict of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// `criterion 3 [exactness] PASS (…)`
pub fn line(id: &str, name: &str, outcome: &Outcome, seconds: f64) -> String {
    format!(
        "criterion {id} [{name}] {} ({}; {seconds:.1}s)",
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.detail
    )
}
