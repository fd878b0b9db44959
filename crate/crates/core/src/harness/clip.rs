//! Clipping experiment: every arm over the same seeded trials.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::output::{fmt_f64, write_csv, write_json};
use super::{clip_bounds, create_dir, derive_seed, trace_rows, ExperimentConfig, TRACE_HEADER};
use crate::error::{Error, Result};
use crate::learn::{q_learning, ClipMode, LearnTrace};

/// Normal-approximation 95% interval half-width multiplier.
const Z95: f64 = 1.96;

/// Mean and 95% interval across trials at one evaluation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipAggregate {
    pub step: usize,
    pub return_mean: f64,
    pub return_ci_low: f64,
    pub return_ci_high: f64,
    pub bv_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: ClipMode,
    pub trials: usize,
    /// Median over trials, counting censored trials as never reaching zero.
    /// `None` when the median itself is censored.
    pub median_steps_to_zero_bv: Option<f64>,
    pub censored: usize,
    pub max_bv: f64,
    pub final_return_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClippingResult {
    /// `traces[i][t]`: arm `i`, trial `t`. Trial `t` uses the same seed in every arm.
    pub traces: Vec<Vec<LearnTrace>>,
    pub aggregates: Vec<Vec<ClipAggregate>>,
    pub summary: Vec<ArmSummary>,
    /// BV at or below this counted as zero.
    pub bv_zero_tol: f64,
    /// Whether the test arm's stored tables and BV traces match the none arm's
    /// trial for trial; absent unless both arms ran.
    pub test_matches_none: Option<bool>,
}

impl ClippingResult {
    pub fn arm(&self, mode: ClipMode) -> Option<&ArmSummary> {
        self.summary.iter().find(|a| a.arm == mode)
    }
}

fn aggregate(traces: &[LearnTrace]) -> Vec<ClipAggregate> {
    let n = traces.len() as f64;
    (0..traces[0].evals.len())
        .map(|i| {
            let returns: Vec<f64> = traces.iter().map(|t| t.evals[i].return_mean).collect();
            let mean = returns.iter().sum::<f64>() / n;
            let std = if traces.len() > 1 {
                (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let half = Z95 * std / n.sqrt();
            ClipAggregate {
                step: traces[0].evals[i].step,
                return_mean: mean,
                return_ci_low: mean - half,
                return_ci_high: mean + half,
                bv_mean: traces.iter().map(|t| t.evals[i].bv).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Median with censored values ordered after every observed one.
fn censored_median(values: &[Option<usize>]) -> Option<f64> {
    let mut v: Vec<Option<usize>> = values.to_vec();
    v.sort_by_key(|x| x.unwrap_or(usize::MAX));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2].map(|x| x as f64)
    } else {
        Some((v[n / 2 - 1]? as f64 + v[n / 2]? as f64) / 2.0)
    }
}

fn summarize(arm: ClipMode, traces: &[LearnTrace], zero_tol: f64) -> ArmSummary {
    let steps: Vec<Option<usize>> = traces.iter().map(|t| t.steps_to_zero_bv(zero_tol)).collect();
    ArmSummary {
        arm,
        trials: traces.len(),
        median_steps_to_zero_bv: censored_median(&steps),
        censored: steps.iter().filter(|s| s.is_none()).count(),
        max_bv: traces
            .iter()
            .flat_map(|t| t.evals.iter().map(|e| e.bv))
            .fold(0.0, f64::max),
        final_return_mean: traces.iter().map(|t| t.evals.last().map_or(0.0, |e| e.return_mean)).sum::<f64>()
            / traces.len() as f64,
    }
}

/// Runs every configured arm on `trials` (default 50) seeds `derive_seed(seed, t)`.
pub fn run_clipping_experiment(cfg: &ExperimentConfig) -> Result<ClippingResult> {
    let (composite, bounds) = clip_bounds(cfg)?;
    let clip = cfg.clipping.clone().unwrap_or_default();
    if clip.arms.is_empty() {
        return Err(Error::Config("clipping experiment lists no arms".into()));
    }
    let hyper = cfg.hyper()?;
    let trials = cfg.trials.unwrap_or(50);
    let traces = clip
        .arms
        .iter()
        .map(|&arm| {
            (0..trials as u64)
                .map(|t| {
                    q_learning(&composite, &clip.spec(arm), &bounds, hyper, derive_seed(cfg.seed, t))
                        .map_err(|e| e.context(format!("arm {arm}, trial {t}")))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let find = |mode| clip.arms.iter().position(|&a| a == mode);
    let test_matches_none = match (find(ClipMode::None), find(ClipMode::Test)) {
        (Some(i), Some(j)) => Some(traces[i].iter().zip(&traces[j]).all(|(a, b)| {
            a.final_q == b.final_q
                && a.episode_returns == b.episode_returns
                && a.evals.iter().map(|e| e.bv).eq(b.evals.iter().map(|e| e.bv))
        })),
        _ => None,
    };
    let zero_tol = cfg.bv_zero_tol(composite.gamma());
    Ok(ClippingResult {
        bv_zero_tol: zero_tol,
        aggregates: traces.iter().map(|t| aggregate(t)).collect(),
        summary: clip.arms.iter().zip(&traces).map(|(&arm, t)| summarize(arm, t, zero_tol)).collect(),
        traces,
        test_matches_none,
    })
}

/// `clip_<arm>.csv` aggregates, `trials/<arm>_<t>.csv` per trial, and `clip_summary.json`.
pub(super) fn write(out: &Path, res: &ClippingResult) -> Result<()> {
    let trial_dir = out.join("trials");
    create_dir(&trial_dir)?;
    for ((summary, agg), traces) in res.summary.iter().zip(&res.aggregates).zip(&res.traces) {
        let rows: Vec<Vec<String>> = agg
            .iter()
            .map(|a| {
                vec![
                    a.step.to_string(),
                    fmt_f64(a.return_mean),
                    fmt_f64(a.return_ci_low),
                    fmt_f64(a.return_ci_high),
                    fmt_f64(a.bv_mean),
                ]
            })
            .collect();
        write_csv(&out.join(format!("clip_{}.csv", summary.arm)), &TRACE_HEADER, &rows)?;
        for (t, trace) in traces.iter().enumerate() {
            write_csv(&trial_dir.join(format!("{}_{t:03}.csv", summary.arm)), &TRACE_HEADER, &trace_rows(trace))?;
        }
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        arms: &'a [ArmSummary],
        bv_zero_tol: f64,
        test_matches_none: Option<bool>,
    }
    write_json(
        &out.join("clip_summary.json"),
        &Summary {
            arms: &res.summary,
            bv_zero_tol: res.bv_zero_tol,
            test_matches_none: res.test_matches_none,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_with_censoring() {
        assert_eq!(censored_median(&[Some(3), None, Some(1)]), Some(3.0));
        assert_eq!(censored_median(&[Some(3), None, None]), None);
        assert_eq!(censored_median(&[Some(2), Some(4)]), Some(3.0));
        assert_eq!(censored_median(&[Some(2), None]), None);
    }
}
