use std::path::Path;

use qbound_core::harness::{clip_bounds, run_clipping_experiment, ExperimentConfig};
use qbound_core::learn::{q_learning, ClipMode, ClipSpec, Hyper, QInit};

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name).display().to_string()
}

fn or_config(steps: usize, trials: usize) -> ExperimentConfig {
    let text = format!(
        r#"{{
  "experiment": "clipping",
  "environment": {{
    "kind": "grids",
    "files": ["{}", "{}"],
    "params": {{"step_reward": -1.0, "diamond_reward": -0.5, "penalty_reward": -100.0, "gamma": 0.99}}
  }},
  "transfer": {{"kind": "or_max", "arity": 2}},
  "learning": {{"steps": {steps}, "eval_every": 500, "q_init": {{"uniform": {{"lo": -100.0, "hi": 0.0}}}}}},
  "trials": {trials},
  "seed": 0
}}"#,
        fixture("grid6_l.txt"),
        fixture("grid6_d.txt")
    );
    let cfg: ExperimentConfig = serde_json::from_str(&text).unwrap();
    cfg.validate().unwrap();
    cfg
}

#[test]
fn hard_clipping_keeps_every_entry_above_the_bound() {
    let cfg = or_config(20_000, 1);
    let (mdp, bounds) = clip_bounds(&cfg).unwrap();
    let lower = bounds.lower.clone().unwrap();
    for mode in [ClipMode::Hard, ClipMode::SoftHard] {
        for seed in 0..5 {
            let trace = q_learning(&mdp, &ClipSpec::new(mode), &bounds, cfg.learning.as_ref().unwrap(), seed).unwrap();
            assert!(trace.evals.iter().all(|e| e.bv == 0.0), "{mode} seed {seed}");
            for (q, l) in trace.final_q.values().iter().zip(lower.values()) {
                assert!(*q >= l - 1e-12);
            }
        }
    }
}

#[test]
fn test_clipping_leaves_learning_untouched() {
    let cfg = or_config(20_000, 1);
    let (mdp, bounds) = clip_bounds(&cfg).unwrap();
    let hyper = cfg.learning.as_ref().unwrap();
    for seed in 0..5 {
        let none = q_learning(&mdp, &ClipSpec::none(), &bounds, hyper, seed).unwrap();
        let test = q_learning(&mdp, &ClipSpec::new(ClipMode::Test), &bounds, hyper, seed).unwrap();
        assert_eq!(none.final_q, test.final_q);
        assert_eq!(none.episode_returns, test.episode_returns);
        assert!(none.evals.iter().zip(&test.evals).all(|(a, b)| a.bv == b.bv && a.step == b.step));
    }
}

#[test]
fn identical_seed_gives_identical_trace() {
    let cfg = or_config(10_000, 1);
    let (mdp, bounds) = clip_bounds(&cfg).unwrap();
    let mut hyper: Hyper = cfg.learning.clone().unwrap();
    hyper.q_init = QInit::Zeros;
    for mode in ClipMode::ALL {
        let a = q_learning(&mdp, &ClipSpec::new(mode), &bounds, &hyper, 11).unwrap();
        let b = q_learning(&mdp, &ClipSpec::new(mode), &bounds, &hyper, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.evals.windows(2).all(|w| w[0].step < w[1].step));
        assert!(a.evals.iter().all(|e| e.bv >= 0.0));
    }
}

#[test]
fn clipped_arms_finish_at_least_as_well_as_none() {
    let res = run_clipping_experiment(&or_config(200_000, 50)).unwrap();
    let final_returns = |mode: ClipMode| -> Vec<f64> {
        let i = ClipMode::ALL.iter().position(|&m| m == mode).unwrap();
        res.traces[i].iter().map(|t| t.evals.last().unwrap().return_mean).collect()
    };
    let none = final_returns(ClipMode::None);
    for mode in [ClipMode::Hard, ClipMode::Soft, ClipMode::SoftHard] {
        let wins = final_returns(mode).iter().zip(&none).filter(|(a, b)| a >= b).count();
        assert!(wins >= 30, "{mode}: {wins}/50");
    }
}
