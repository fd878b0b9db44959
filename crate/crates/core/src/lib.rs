//! Tabular toolkit for bounding the optimal value function of transformed and
//! composed reinforcement-learning tasks.
//!
//! Given solved primitive tasks and a transfer function `f` (OR, AND, NOT,
//! linear maps, weighted combinations, or a custom expression), the crate
//! computes `f(Q)`, the auxiliary optimal values `C`/`Ĉ` that close the
//! double-sided bound, the regret certificates `D`/`D̂` of the zero-shot policy,
//! and numerically certifies `f` against the convex and concave condition sets.
//! Both standard and entropy-regularized (soft) RL are supported.
//!
//! Module map:
//! - [`mdp`]: tabular MDPs, Bellman backups, solvers and policy evaluation.
//! - [`transfer`]: transfer-function catalog, expression grammar, condition checker.
//! - [`bounds`]: `C`, `Ĉ`, `D`, `D̂`, zero-shot policies, ε-robust intervals.
//! - [`learn`]: tabular Q-learning with bound clipping.
//! - [`envs`]: gridworlds and random MDP generators.
//! - [`harness`]: experiment configs, sweeps, metrics and CSV/JSON output.

pub mod bounds;
pub mod envs;
pub mod error;
pub mod harness;
pub mod learn;
pub mod mdp;
pub mod transfer;

pub use error::{Error, Result};
