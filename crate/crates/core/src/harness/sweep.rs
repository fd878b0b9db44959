//! Stochasticity and sparsity sweeps: exact solves, bound gaps and policy KL.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::output::{fmt_f64, fmt_opt, write_csv};
use super::{derive_seed, Beta, ExperimentConfig};
use crate::bounds::zero_shot_policy;
use crate::envs::{build_primitives, random_sparse_grid, GridSpec};
use crate::error::{Error, Result};
use crate::mdp::{boltzmann_policy, solve, Regime, SolverOptions, Table, TabularMdp};
use crate::transfer::{apply_transfer, transform_reward, Classification, TransferFn, TransferSpec};

/// A cell counts as a bound-sign violation when its gap is below this.
pub const SIGN_TOL: f64 = 1e-8;

/// One sweep point aggregated over its trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// Slip probability, or reward density `n_rewards / size²`.
    pub sweep_value: f64,
    pub size: Option<usize>,
    pub n_rewards: Option<usize>,
    pub beta: Beta,
    pub trials: usize,
    /// Absent in standard RL, where greedy policies make the divergence infinite.
    pub mean_kl: Option<f64>,
    pub kl_std: Option<f64>,
    pub mean_gap: f64,
    pub gap_std: f64,
    /// Smallest cellwise gap over all trials; negative means a bound failed.
    pub min_gap: f64,
    /// Trials with a cell below `-SIGN_TOL`.
    pub sign_violations: usize,
}

struct Trial {
    kl: Option<f64>,
    gap: f64,
    min_gap: f64,
}

/// Sample mean and standard deviation (`n − 1` denominator, zero for one sample).
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Solves primitives and composite and measures how far `Q̃` sits from `f(Q)`.
///
/// The gap is oriented by the classification so it is non-negative when the
/// bound holds: `Q̃ − f(Q)` on the convex side, `f(Q) − Q̃` on the concave side.
fn run_trial(f: &TransferFn, prims: &[TabularMdp], beta: Beta, opts: &SolverOptions) -> Result<Trial> {
    let regime = beta.regime(prims[0].n_states(), prims[0].n_actions())?;
    let class = f.require_classification(regime.kind())?;
    let qs = prims
        .iter()
        .enumerate()
        .map(|(k, m)| Ok(solve(m, &regime, opts).map_err(|e| e.context(format!("primitive {k}")))?.q.values))
        .collect::<Result<Vec<Table>>>()?;
    let rewards: Vec<&Table> = prims.iter().map(TabularMdp::reward).collect();
    let composite = prims[0].with_reward(transform_reward(f, &rewards)?)?;
    let q_tilde = solve(&composite, &regime, opts).map_err(|e| e.context("composite"))?.q.values;
    let fq = apply_transfer(f, &qs)?;
    let gap = match class {
        Classification::Concave => fq.zip_map(&q_tilde, |e, q| e - q)?,
        _ => q_tilde.zip_map(&fq, |q, e| q - e)?,
    };
    let kl = match &regime {
        Regime::Standard => None,
        Regime::EntropyRegularized(cfg) => {
            let pi = boltzmann_policy(&q_tilde, cfg)?;
            let pi_f = zero_shot_policy(f, &qs, &regime)?;
            Some(super::kl_policy_divergence(&pi, &pi_f)?)
        }
    };
    Ok(Trial {
        kl,
        gap: gap.mean(),
        min_gap: gap.min(),
    })
}

fn aggregate(sweep_value: f64, beta: Beta, trials: &[Trial]) -> MetricRow {
    let gaps: Vec<f64> = trials.iter().map(|t| t.gap).collect();
    let (mean_gap, gap_std) = mean_std(&gaps);
    let kls: Option<Vec<f64>> = trials.iter().map(|t| t.kl).collect();
    let kl = kls.map(|k| mean_std(&k));
    MetricRow {
        sweep_value,
        size: None,
        n_rewards: None,
        beta,
        trials: trials.len(),
        mean_kl: kl.map(|k| k.0),
        kl_std: kl.map(|k| k.1),
        mean_gap,
        gap_std,
        min_gap: trials.iter().map(|t| t.min_gap).fold(f64::INFINITY, f64::min),
        sign_violations: trials.iter().filter(|t| t.min_gap < -SIGN_TOL).count(),
    }
}

/// Default slip grid: 0 to 0.8 in steps of 0.05.
pub fn default_slips() -> Vec<f64> {
    (0..=16).map(|i| i as f64 / 20.0).collect()
}

/// One row per (slip, β), slips outer. Dynamics are exact, so each point is one trial.
pub fn run_stochasticity_sweep(cfg: &ExperimentConfig) -> Result<Vec<MetricRow>> {
    let f = cfg.transfer_fn()?;
    let opts = cfg.solver_options();
    let slips = cfg.slips.clone().unwrap_or_else(default_slips);
    let mut rows = Vec::new();
    for &slip in &slips {
        if !(0.0..=1.0).contains(&slip) {
            return Err(Error::Config(format!("slip {slip} outside [0, 1]")));
        }
        let specs = cfg.grid_specs(Some(slip))?;
        let prims: Vec<TabularMdp> = build_primitives(&specs)?.into_iter().map(|w| w.mdp).collect();
        for beta in cfg.betas() {
            let trial = run_trial(&f, &prims, beta, &opts).map_err(|e| e.context(format!("slip {slip}, beta {beta}")))?;
            rows.push(aggregate(slip, beta, &[trial]));
        }
    }
    Ok(rows)
}

/// One row per (size, n_rewards, β). Trial `t` of a point draws its two grids
/// from seeds keyed by `(seed, size, n_rewards, 2t)` and `(…, 2t + 1)`, so a
/// point's result does not depend on which other points are swept.
pub fn run_sparsity_sweep(cfg: &ExperimentConfig) -> Result<Vec<MetricRow>> {
    let spec = cfg
        .transfer
        .clone()
        .unwrap_or(TransferSpec::ConvexCombo { weights: vec![0.5, 0.5] });
    let f = spec.build()?;
    let opts = cfg.solver_options();
    let trials = cfg.trials.unwrap_or(1000);
    let [lo, hi] = cfg.reward_range.unwrap_or([0.0, 1.0]);
    let mut rows = Vec::new();
    for &size in cfg.sizes.as_deref().unwrap_or(&[6, 10]) {
        let counts: Vec<usize> = cfg.n_rewards.clone().unwrap_or_else(|| (1..size * size).collect());
        for n in counts {
            let point_seed = derive_seed(derive_seed(cfg.seed, size as u64), n as u64);
            let grids = (0..trials as u64)
                .map(|t| {
                    (0..f.arity() as u64)
                        .map(|k| {
                            let mut g: GridSpec =
                                random_sparse_grid(size, n, (lo, hi), derive_seed(point_seed, f.arity() as u64 * t + k))?;
                            if let Some(gamma) = cfg.gamma {
                                g.params.gamma = gamma;
                            }
                            Ok(g.build()?.mdp)
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let density = n as f64 / (size * size) as f64;
            for beta in cfg.betas() {
                let results = grids
                    .iter()
                    .enumerate()
                    .map(|(t, prims)| {
                        run_trial(&f, prims, beta, &opts)
                            .map_err(|e| e.context(format!("size {size}, n_rewards {n}, beta {beta}, trial {t}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut row = aggregate(density, beta, &results);
                row.size = Some(size);
                row.n_rewards = Some(n);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

const STOCH_HEADER: [&str; 9] = [
    "slip", "beta", "trials", "mean_kl", "kl_std", "mean_gap", "gap_std", "min_gap", "sign_violations",
];
const SPARSE_HEADER: [&str; 11] = [
    "size", "n_rewards", "density", "beta", "trials", "mean_kl", "kl_std", "mean_gap", "gap_std", "min_gap",
    "sign_violations",
];

fn tail(r: &MetricRow) -> Vec<String> {
    vec![
        r.beta.to_string(),
        r.trials.to_string(),
        fmt_opt(r.mean_kl),
        fmt_opt(r.kl_std),
        fmt_f64(r.mean_gap),
        fmt_f64(r.gap_std),
        fmt_f64(r.min_gap),
        r.sign_violations.to_string(),
    ]
}

pub fn write_stochasticity(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![fmt_f64(r.sweep_value)];
            v.extend(tail(r));
            v
        })
        .collect();
    write_csv(path, &STOCH_HEADER, &records)
}

pub fn write_sparsity(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let opt = |x: Option<usize>| x.map(|n| n.to_string()).unwrap_or_default();
            let mut v = vec![opt(r.size), opt(r.n_rewards), fmt_f64(r.sweep_value)];
            v.extend(tail(r));
            v
        })
        .collect();
    write_csv(path, &SPARSE_HEADER, &records)
}
