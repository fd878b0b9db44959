//! Numerical certification of the convex and concave condition sets.
//!
//! Every inequality is tested jointly on argument vectors: for arity `M > 1`
//! the sums, midpoints and scalings act on whole points of the box, and the
//! exchange conditions reduce each argument's pseudo-Q row separately before
//! applying `f`. Each condition is paired with its mirror (convexity with
//! concavity, and so on) and both are scored from one signed difference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Classification, TransferFn, TransferKind};
use crate::error::{Error, Result};
use crate::mdp::{Regime, RegimeKind, SoftConfig};

/// Violations up to this size are treated as rounding.
pub const CHECK_TOL: f64 = 1e-9;

const MAX_GRID_POINTS: usize = 4096;
const MAX_COARSE_POINTS: usize = 64;
const BATCH: usize = 1000;

fn default_grid() -> usize {
    64
}
fn default_random() -> usize {
    10_000
}
fn default_gamma() -> f64 {
    0.99
}
fn default_actions() -> usize {
    4
}

/// The box the checker samples, plus the task facts the conditions depend on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainBox {
    /// `[lo, hi]` per argument.
    pub bounds: Vec<[f64; 2]>,
    #[serde(default = "default_grid")]
    pub grid_per_axis: usize,
    #[serde(default = "default_random")]
    pub random_samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Discount used by the scaling condition.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// With deterministic dynamics the convexity/concavity condition is not needed.
    #[serde(default)]
    pub deterministic: bool,
    /// Width of the pseudo-Q rows in standard RL; the soft regime uses the prior's.
    #[serde(default = "default_actions")]
    pub n_actions: usize,
}

impl DomainBox {
    pub fn new(bounds: Vec<[f64; 2]>) -> Self {
        Self {
            bounds,
            grid_per_axis: default_grid(),
            random_samples: default_random(),
            seed: 0,
            gamma: default_gamma(),
            deterministic: false,
            n_actions: default_actions(),
        }
    }

    /// `[lo, hi]^dim`.
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        Self::new(vec![[lo, hi]; dim])
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_deterministic(mut self, deterministic: bool) -> Self {
        self.deterministic = deterministic;
        self
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bounds.is_empty() {
            return Err(Error::Config("domain box needs at least one axis".into()));
        }
        for (k, [lo, hi]) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("axis {k} has invalid interval [{lo}, {hi}]")));
            }
        }
        if self.grid_per_axis < 2 {
            return Err(Error::Config("grid_per_axis must be at least 2".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("box discount {} outside (0, 1)", self.gamma)));
        }
        if self.n_actions == 0 {
            return Err(Error::Config("n_actions must be positive".into()));
        }
        Ok(())
    }

    /// Largest per-axis count `n ≤ grid_per_axis` with `n^dim ≤ cap`, at least 2.
    fn per_axis(&self, cap: usize) -> usize {
        let dim = self.dim() as u32;
        let mut n = 2;
        while n < self.grid_per_axis && (n + 1).checked_pow(dim).is_some_and(|t| t <= cap) {
            n += 1;
        }
        n
    }

    fn lattice(&self, n: usize) -> Vec<Vec<f64>> {
        let dim = self.dim();
        let total = n.pow(dim as u32);
        (0..total)
            .map(|mut idx| {
                (0..dim)
                    .map(|k| {
                        let i = idx % n;
                        idx /= n;
                        let [lo, hi] = self.bounds[k];
                        lo + (hi - lo) * i as f64 / (n - 1) as f64
                    })
                    .collect()
            })
            .collect()
    }

    fn grid(&self) -> Vec<Vec<f64>> {
        self.lattice(self.per_axis(MAX_GRID_POINTS))
    }

    fn coarse(&self) -> Vec<Vec<f64>> {
        self.lattice(self.per_axis(MAX_COARSE_POINTS))
    }

    fn random_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|&[lo, hi]| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
            .collect()
    }

    /// Runs `body` once per random sample. Each batch of samples draws from its
    /// own ChaCha stream so a sample's value depends only on (seed, family, index).
    fn for_random(&self, family: u64, mut body: impl FnMut(usize, &mut ChaCha8Rng)) {
        let batches = self.random_samples.div_ceil(BATCH);
        for b in 0..batches {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream((family << 32) | b as u64);
            let end = ((b + 1) * BATCH).min(self.random_samples);
            for i in b * BATCH..end {
                body(i, &mut rng);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// `f((x+y)/2) ≤ (f(x)+f(y))/2`
    Convexity,
    Concavity,
    /// `f(x+y) ≤ f(x) + f(y)`
    Subadditivity,
    Superadditivity,
    /// `f(γx) ≤ γ f(x)`
    GammaSubscaling,
    GammaSuperscaling,
    /// `f(max Q) ≤ max f(Q)`, or its log-sum-exp analog
    ExchangeBelow,
    ExchangeAbove,
}

impl Condition {
    const CONVEX_SET: [Condition; 4] = [
        Condition::Convexity,
        Condition::Subadditivity,
        Condition::GammaSubscaling,
        Condition::ExchangeBelow,
    ];
    const CONCAVE_SET: [Condition; 4] = [
        Condition::Concavity,
        Condition::Superadditivity,
        Condition::GammaSuperscaling,
        Condition::ExchangeAbove,
    ];

    fn is_curvature(self) -> bool {
        matches!(self, Condition::Convexity | Condition::Concavity)
    }
}

/// The sample that violated a condition the most.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// The argument vectors involved: `[x, y]` for pair conditions, `[x]` for
    /// scaling, one vector per action for the exchange conditions.
    pub points: Vec<Vec<f64>>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub condition: Condition,
    pub holds: bool,
    /// Largest amount by which the inequality failed; zero if it never did.
    pub worst_violation: f64,
    pub witness: Option<Witness>,
    pub samples: usize,
    /// Reported but not used for the classification.
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub function: String,
    pub regime: RegimeKind,
    pub beta: Option<f64>,
    pub classification: Classification,
    pub verdicts: Vec<Verdict>,
    pub domain: DomainBox,
    pub notes: Vec<String>,
}

impl ConditionReport {
    pub fn verdict(&self, condition: Condition) -> &Verdict {
        self.verdicts
            .iter()
            .find(|v| v.condition == condition)
            .expect("every condition is checked")
    }
}

/// Tracks the extreme signed difference `lhs - rhs` in both directions.
struct Pair {
    below: Condition,
    above: Condition,
    max: (f64, Option<Witness>),
    min: (f64, Option<Witness>),
    samples: usize,
}

impl Pair {
    fn new(below: Condition, above: Condition) -> Self {
        Self {
            below,
            above,
            max: (0.0, None),
            min: (0.0, None),
            samples: 0,
        }
    }

    fn record(&mut self, lhs: f64, rhs: f64, points: impl FnOnce() -> Vec<Vec<f64>>) {
        self.samples += 1;
        let d = lhs - rhs;
        let (hi, lo) = if d.is_nan() { (f64::INFINITY, f64::NEG_INFINITY) } else { (d, d) };
        let up = hi > self.max.0;
        let down = lo < self.min.0;
        if up || down {
            let w = Witness {
                points: points(),
                lhs,
                rhs,
            };
            if up && down {
                self.max = (hi, Some(w.clone()));
                self.min = (lo, Some(w));
            } else if up {
                self.max = (hi, Some(w));
            } else {
                self.min = (lo, Some(w));
            }
        }
    }

    fn verdicts(self, deterministic: bool) -> [Verdict; 2] {
        let make = |condition: Condition, (v, witness): (f64, Option<Witness>)| Verdict {
            condition,
            holds: v <= CHECK_TOL,
            worst_violation: v,
            witness,
            samples: self.samples,
            excluded: deterministic && condition.is_curvature(),
        };
        [make(self.below, self.max.clone()), make(self.above, (-self.min.0, self.min.1.clone()))]
    }
}

/// `(1/β) log Σ_a p(a) exp(β x_a)`, max-shifted.
fn soft_mean(xs: &[f64], prior: &[f64], beta: f64) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let acc: f64 = xs.iter().zip(prior).map(|(x, p)| p * (beta * (x - m)).exp()).sum();
    m + acc.ln() / beta
}

enum Reducer<'a> {
    Max,
    Soft(&'a SoftConfig),
}

impl Reducer<'_> {
    fn reduce(&self, xs: &[f64], state: usize) -> f64 {
        match self {
            Reducer::Max => xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Reducer::Soft(cfg) => {
                let s = state % cfg.prior().n_states();
                soft_mean(xs, cfg.prior().row(s), cfg.beta())
            }
        }
    }
}

/// Min and max of `g` over the grid and random samples of `domain`.
pub(crate) fn sampled_range(g: &TransferFn, domain: &DomainBox) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut see = |x: &[f64]| {
        let y = g.eval(x);
        lo = lo.min(y);
        hi = hi.max(y);
    };
    for p in domain.grid() {
        see(&p);
    }
    domain.for_random(0, |_, rng| see(&domain.random_point(rng)));
    (lo, hi)
}

/// Tests every inequality of both condition sets for `regime` on `domain`.
///
/// Violations are data: the report lists each condition's worst sample.
/// Errors arise only from an inconsistent box or function.
pub fn check_conditions(f: &TransferFn, domain: &DomainBox, regime: &Regime) -> Result<ConditionReport> {
    domain.validate()?;
    if domain.dim() != f.arity() {
        return Err(Error::Structural(format!(
            "domain box has {} axes but {f} takes {} arguments",
            domain.dim(),
            f.arity()
        )));
    }
    let dim = domain.dim();
    let grid = domain.grid();
    let coarse = domain.coarse();

    let mut curvature = Pair::new(Condition::Convexity, Condition::Concavity);
    let mut additivity = Pair::new(Condition::Subadditivity, Condition::Superadditivity);
    let mut scaling = Pair::new(Condition::GammaSubscaling, Condition::GammaSuperscaling);
    let mut exchange = Pair::new(Condition::ExchangeBelow, Condition::ExchangeAbove);

    let mut pair = |x: &[f64], y: &[f64]| {
        let mid: Vec<f64> = x.iter().zip(y).map(|(a, b)| 0.5 * (a + b)).collect();
        let sum: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
        let (fx, fy) = (f.eval(x), f.eval(y));
        let pts = || vec![x.to_vec(), y.to_vec()];
        curvature.record(f.eval(&mid), 0.5 * (fx + fy), pts);
        additivity.record(f.eval(&sum), fx + fy, pts);
    };
    for i in 0..coarse.len() {
        for j in i..coarse.len() {
            pair(&coarse[i], &coarse[j]);
        }
    }
    domain.for_random(1, |_, rng| {
        let x = domain.random_point(rng);
        let y = domain.random_point(rng);
        pair(&x, &y);
    });

    let gamma = domain.gamma;
    let mut scale = |x: &[f64]| {
        let gx: Vec<f64> = x.iter().map(|v| gamma * v).collect();
        scaling.record(f.eval(&gx), gamma * f.eval(x), || vec![x.to_vec()]);
    };
    for p in &grid {
        scale(p);
    }
    domain.for_random(2, |_, rng| scale(&domain.random_point(rng)));

    let (reducer, n_actions) = match regime {
        Regime::Standard => (Reducer::Max, domain.n_actions),
        Regime::EntropyRegularized(cfg) => (Reducer::Soft(cfg), cfg.prior().n_actions()),
    };
    // rows[a] is the argument vector at action a
    let mut exch = |rows: &[Vec<f64>], state: usize| {
        let mut column = vec![0.0; rows.len()];
        let reduced: Vec<f64> = (0..dim)
            .map(|k| {
                for (c, r) in column.iter_mut().zip(rows) {
                    *c = r[k];
                }
                reducer.reduce(&column, state)
            })
            .collect();
        let fvals: Vec<f64> = rows.iter().map(|r| f.eval(r)).collect();
        exchange.record(f.eval(&reduced), reducer.reduce(&fvals, state), || rows.to_vec());
    };
    let mut idx = 0;
    for i in 0..coarse.len() {
        for j in 0..coarse.len() {
            if i != j || n_actions == 1 {
                let rows: Vec<Vec<f64>> = (0..n_actions)
                    .map(|a| if a == 0 { coarse[i].clone() } else { coarse[j].clone() })
                    .collect();
                exch(&rows, idx);
                idx += 1;
            }
        }
    }
    domain.for_random(3, |i, rng| {
        let rows: Vec<Vec<f64>> = (0..n_actions).map(|_| domain.random_point(rng)).collect();
        exch(&rows, idx + i);
    });

    let mut verdicts = Vec::with_capacity(8);
    for p in [curvature, additivity, scaling, exchange] {
        verdicts.extend(p.verdicts(domain.deterministic));
    }
    let set_holds = |set: &[Condition]| {
        set.iter().all(|c| {
            let v = verdicts.iter().find(|v| v.condition == *c).expect("checked");
            v.holds || v.excluded
        })
    };
    let classification = Classification::from_sets(
        set_holds(&Condition::CONVEX_SET),
        set_holds(&Condition::CONCAVE_SET),
    );

    let mut notes = Vec::new();
    if domain.deterministic {
        notes.push("deterministic dynamics: convexity/concavity reported but not required".into());
    }
    if matches!(f.kind(), TransferKind::SumOf(..)) && classification.has_concave() {
        notes.push(
            "sum under concave conditions: the closure argument only gives the exchange condition as a \
             one-sided inequality; rely on the sampled verdicts above"
                .into(),
        );
    }
    Ok(ConditionReport {
        function: f.to_string(),
        regime: regime.kind(),
        beta: regime.beta(),
        classification,
        verdicts,
        domain: domain.clone(),
        notes,
    })
}
