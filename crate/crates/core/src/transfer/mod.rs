//! Transfer functions: the catalog, pointwise application, closure operators,
//! and the numerical condition checker.

mod check;
mod expr;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{RegimeKind, Table};

pub use check::{check_conditions, Condition, ConditionReport, DomainBox, Verdict, Witness, CHECK_TOL};
pub use expr::Expr;

/// Which sufficient-condition set a function satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    #[serde(rename = "convex-conditions")]
    Convex,
    #[serde(rename = "concave-conditions")]
    Concave,
    Both,
    Neither,
}

impl Classification {
    pub fn has_convex(self) -> bool {
        matches!(self, Classification::Convex | Classification::Both)
    }

    pub fn has_concave(self) -> bool {
        matches!(self, Classification::Concave | Classification::Both)
    }

    fn from_sets(convex: bool, concave: bool) -> Self {
        match (convex, concave) {
            (true, true) => Classification::Both,
            (true, false) => Classification::Convex,
            (false, true) => Classification::Concave,
            (false, false) => Classification::Neither,
        }
    }

    /// The condition set both functions share, if any.
    pub fn meet(self, other: Classification) -> Option<Classification> {
        match Classification::from_sets(
            self.has_convex() && other.has_convex(),
            self.has_concave() && other.has_concave(),
        ) {
            Classification::Neither => None,
            c => Some(c),
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classification::Convex => "convex-conditions",
            Classification::Concave => "concave-conditions",
            Classification::Both => "both",
            Classification::Neither => "neither",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransferKind {
    Linear { k: f64 },
    OrMax,
    AndMin,
    NotNegate,
    ConicalCombo { weights: Vec<f64> },
    ConvexCombo { weights: Vec<f64> },
    SumOf(Box<TransferFn>, Box<TransferFn>),
    ComposeOf(Box<TransferFn>, Box<TransferFn>),
    Custom(Expr),
}

/// A map `ℝ^M → ℝ` applied pointwise to rewards and action values.
///
/// Catalog constructors carry the classification proven for each regime and a
/// sup-norm Lipschitz constant. Custom expressions start unclassified; use
/// [`check_conditions`] to certify them.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferFn {
    kind: TransferKind,
    arity: usize,
    lipschitz: Option<f64>,
    /// Indexed by regime: standard, entropy-regularized.
    declared: [Option<Classification>; 2],
}

fn regime_index(regime: RegimeKind) -> usize {
    match regime {
        RegimeKind::Standard => 0,
        RegimeKind::EntropyRegularized => 1,
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::Config("combination needs at least one weight".into()));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Config(format!("combination weights must be finite and non-negative: {weights:?}")));
    }
    Ok(())
}

impl TransferFn {
    /// `x ↦ kx`.
    ///
    /// In standard RL a positive (or zero) scale commutes with every backup, so
    /// both condition sets hold; a negative scale turns the max-exchange into
    /// `k·max ≤ max k·`, the convex side only. In entropy-regularized RL the
    /// power-mean inequality makes `k < 1` (positive) concave and `k > 1` or
    /// `k < 0` convex; `k ∈ {0, 1}` is exact.
    pub fn linear(k: f64) -> Result<Self> {
        if !k.is_finite() {
            return Err(Error::Config(format!("linear scale {k} is not finite")));
        }
        let standard = if k >= 0.0 {
            Classification::Both
        } else {
            Classification::Convex
        };
        let soft = if k == 0.0 || k == 1.0 {
            Classification::Both
        } else if k > 0.0 && k < 1.0 {
            Classification::Concave
        } else {
            Classification::Convex
        };
        Ok(Self {
            kind: TransferKind::Linear { k },
            arity: 1,
            lipschitz: Some(k.abs()),
            declared: [Some(standard), Some(soft)],
        })
    }

    pub fn or_max(arity: usize) -> Result<Self> {
        Self::boolean(TransferKind::OrMax, arity, Classification::Convex)
    }

    pub fn and_min(arity: usize) -> Result<Self> {
        Self::boolean(TransferKind::AndMin, arity, Classification::Concave)
    }

    fn boolean(kind: TransferKind, arity: usize, class: Classification) -> Result<Self> {
        if arity == 0 {
            return Err(Error::Config("composition needs at least one argument".into()));
        }
        Ok(Self {
            kind,
            arity,
            lipschitz: Some(1.0),
            declared: [Some(class), Some(class)],
        })
    }

    /// `x ↦ -x`; convex conditions in both regimes.
    pub fn not_negate() -> Self {
        Self {
            kind: TransferKind::NotNegate,
            arity: 1,
            lipschitz: Some(1.0),
            declared: [Some(Classification::Convex), Some(Classification::Convex)],
        }
    }

    /// `Σ α_k x_k` with `α_k ≥ 0`. Concave conditions in standard RL; no
    /// classification is claimed for entropy-regularized RL.
    pub fn conical_combo(weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights)?;
        let standard = if weights.len() == 1 {
            Classification::Both
        } else {
            Classification::Concave
        };
        Ok(Self {
            arity: weights.len(),
            lipschitz: Some(weights.iter().sum()),
            kind: TransferKind::ConicalCombo { weights },
            declared: [Some(standard), None],
        })
    }

    /// `Σ α_k x_k` with `α_k ≥ 0` and `Σ α_k ≤ 1`; concave conditions in both regimes.
    pub fn convex_combo(weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights)?;
        let total: f64 = weights.iter().sum();
        if total > 1.0 + 1e-12 {
            return Err(Error::Config(format!("convex combination weights sum to {total} > 1")));
        }
        Ok(Self {
            arity: weights.len(),
            lipschitz: Some(total),
            kind: TransferKind::ConvexCombo { weights },
            declared: [Some(Classification::Concave), Some(Classification::Concave)],
        })
    }

    /// An unclassified expression. `arity` defaults to the highest argument used.
    pub fn custom(expr: Expr, arity: Option<usize>) -> Result<Self> {
        let used = expr.arity();
        let arity = arity.unwrap_or(used.max(1));
        if arity == 0 || arity < used {
            return Err(Error::Config(format!(
                "expression uses {used} arguments but arity {arity} was declared"
            )));
        }
        Ok(Self {
            lipschitz: expr.lipschitz_bound(),
            kind: TransferKind::Custom(expr),
            arity,
            declared: [None, None],
        })
    }

    pub fn parse_expr(text: &str, arity: Option<usize>) -> Result<Self> {
        Self::custom(Expr::parse(text)?, arity)
    }

    /// Attach a classification, e.g. after certifying a custom function.
    pub fn with_classification(mut self, regime: RegimeKind, class: Option<Classification>) -> Self {
        self.declared[regime_index(regime)] = class;
        self
    }

    pub fn kind(&self) -> &TransferKind {
        &self.kind
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn lipschitz_bound(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn classification(&self, regime: RegimeKind) -> Option<Classification> {
        self.declared[regime_index(regime)]
    }

    /// Like [`Self::classification`] but an error when unclassified or `Neither`.
    pub fn require_classification(&self, regime: RegimeKind) -> Result<Classification> {
        match self.classification(regime) {
            Some(Classification::Neither) | None => Err(Error::Classification(format!(
                "{self} has no {regime} classification"
            ))),
            Some(c) => Ok(c),
        }
    }

    /// Evaluates at one point; `x.len()` must equal the arity.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.arity);
        match &self.kind {
            TransferKind::Linear { k } => k * x[0],
            TransferKind::OrMax => x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            TransferKind::AndMin => x.iter().copied().fold(f64::INFINITY, f64::min),
            TransferKind::NotNegate => -x[0],
            TransferKind::ConicalCombo { weights } | TransferKind::ConvexCombo { weights } => {
                weights.iter().zip(x).map(|(w, v)| w * v).sum()
            }
            TransferKind::SumOf(f, g) => f.eval(x) + g.eval(x),
            TransferKind::ComposeOf(f, g) => f.eval(&[g.eval(x)]),
            TransferKind::Custom(e) => e.eval(x),
        }
    }
}

impl fmt::Display for TransferFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            TransferKind::Linear { k } => write!(f, "linear({k})"),
            TransferKind::OrMax => write!(f, "or_max/{}", self.arity),
            TransferKind::AndMin => write!(f, "and_min/{}", self.arity),
            TransferKind::NotNegate => write!(f, "not_negate"),
            TransferKind::ConicalCombo { weights } => write!(f, "conical_combo({weights:?})"),
            TransferKind::ConvexCombo { weights } => write!(f, "convex_combo({weights:?})"),
            TransferKind::SumOf(a, b) => write!(f, "sum({a}, {b})"),
            TransferKind::ComposeOf(a, b) => write!(f, "compose({a}, {b})"),
            TransferKind::Custom(e) => write!(f, "expr({e})"),
        }
    }
}

/// `f + g`, keeping the condition set both share in `regime`.
///
/// The other regime's classification is the meet of the operands' too, or
/// unknown when they disagree.
pub fn sum_fns(f: &TransferFn, g: &TransferFn, regime: RegimeKind) -> Result<TransferFn> {
    if f.arity != g.arity {
        return Err(Error::Structural(format!("cannot add {f} and {g}: arities {} and {}", f.arity, g.arity)));
    }
    let cf = f.require_classification(regime)?;
    let cg = g.require_classification(regime)?;
    if cf.meet(cg).is_none() {
        return Err(Error::Classification(format!("{f} is {cf} but {g} is {cg}")));
    }
    Ok(TransferFn {
        arity: f.arity,
        lipschitz: f.lipschitz.zip(g.lipschitz).map(|(a, b)| a + b),
        declared: shared_classes(f, g),
        kind: TransferKind::SumOf(Box::new(f.clone()), Box::new(g.clone())),
    })
}

fn shared_classes(f: &TransferFn, g: &TransferFn) -> [Option<Classification>; 2] {
    let meet = |i: usize| match (f.declared[i], g.declared[i]) {
        (Some(a), Some(b)) => a.meet(b),
        _ => None,
    };
    [meet(0), meet(1)]
}

/// `f ∘ g` for unary `f`.
///
/// `f` must be non-decreasing on the range of `g`, which is estimated by
/// sampling `g` over `domain`.
pub fn compose_fns(f: &TransferFn, g: &TransferFn, regime: RegimeKind, domain: &DomainBox) -> Result<TransferFn> {
    if f.arity != 1 {
        return Err(Error::Structural(format!("outer function {f} must be unary")));
    }
    if domain.dim() != g.arity {
        return Err(Error::Structural(format!("domain has {} axes but {g} takes {}", domain.dim(), g.arity)));
    }
    let (lo, hi) = check::sampled_range(g, domain);
    const N: usize = 1024;
    let mut prev = f.eval(&[lo]);
    for i in 1..=N {
        let x = lo + (hi - lo) * i as f64 / N as f64;
        let y = f.eval(&[x]);
        if y < prev - CHECK_TOL {
            return Err(Error::Precondition(format!(
                "{f} decreases on [{lo}, {hi}] (near {x}), composition closure does not apply"
            )));
        }
        prev = y;
    }
    let cf = f.require_classification(regime)?;
    let cg = g.require_classification(regime)?;
    if cf.meet(cg).is_none() {
        return Err(Error::Classification(format!("{f} is {cf} but {g} is {cg}")));
    }
    Ok(TransferFn {
        arity: g.arity,
        lipschitz: f.lipschitz.zip(g.lipschitz).map(|(a, b)| a * b),
        declared: shared_classes(f, g),
        kind: TransferKind::ComposeOf(Box::new(f.clone()), Box::new(g.clone())),
    })
}

fn pointwise<T: AsRef<Table>>(f: &TransferFn, tables: &[T]) -> Result<Table> {
    if tables.len() != f.arity {
        return Err(Error::Structural(format!(
            "{f} takes {} arguments, got {} tables",
            f.arity,
            tables.len()
        )));
    }
    let first = tables[0].as_ref();
    for t in &tables[1..] {
        first.check_shape(t.as_ref())?;
    }
    let mut x = vec![0.0; f.arity];
    let mut out = Table::zeros(first.n_states(), first.n_actions());
    for (i, v) in out.values_mut().iter_mut().enumerate() {
        for (k, t) in tables.iter().enumerate() {
            x[k] = t.as_ref().values()[i];
        }
        *v = f.eval(&x);
        if !v.is_finite() {
            let n_a = first.n_actions();
            return Err(Error::Numerical {
                state: i / n_a,
                action: i % n_a,
            });
        }
    }
    Ok(out)
}

/// `f(q₁(s,a), …, q_M(s,a))` at every cell.
pub fn apply_transfer<T: AsRef<Table>>(f: &TransferFn, qs: &[T]) -> Result<Table> {
    pointwise(f, qs)
}

/// The composite task's reward `f(r₁(s,a), …, r_M(s,a))`.
pub fn transform_reward<T: AsRef<Table>>(f: &TransferFn, rewards: &[T]) -> Result<Table> {
    pointwise(f, rewards)
}

/// Serializable description of a transfer function, as used in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransferSpec {
    Linear { k: f64 },
    OrMax { arity: usize },
    AndMin { arity: usize },
    NotNegate,
    ConicalCombo { weights: Vec<f64> },
    ConvexCombo { weights: Vec<f64> },
    Expr {
        expr: String,
        #[serde(default)]
        arity: Option<usize>,
    },
}

impl TransferSpec {
    pub fn build(&self) -> Result<TransferFn> {
        match self {
            TransferSpec::Linear { k } => TransferFn::linear(*k),
            TransferSpec::OrMax { arity } => TransferFn::or_max(*arity),
            TransferSpec::AndMin { arity } => TransferFn::and_min(*arity),
            TransferSpec::NotNegate => Ok(TransferFn::not_negate()),
            TransferSpec::ConicalCombo { weights } => TransferFn::conical_combo(weights.clone()),
            TransferSpec::ConvexCombo { weights } => TransferFn::convex_combo(weights.clone()),
            TransferSpec::Expr { expr, arity } => TransferFn::parse_expr(expr, *arity),
        }
    }
}
