use proptest::prelude::*;
use qbound_core::bounds::{bound_report, compute_c, compute_c_hat};
use qbound_core::envs::{parse_grid, random_mdp, GridParams};
use qbound_core::harness::composite_mdp;
use qbound_core::mdp::{
    bellman_backup_soft, bellman_backup_standard, boltzmann_policy, evaluate_policy, greedy_policy,
    soft_state_values, solve, Policy, PolicyKind, Regime, SoftConfig, SolverOptions, TabularMdp, Table, PROB_TOL,
};
use qbound_core::transfer::{apply_transfer, check_conditions, Classification, DomainBox, TransferFn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TIGHT: f64 = 1e-8;

fn opts() -> SolverOptions {
    SolverOptions::with_tol(1e-12)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `k` primitives on shared dynamics, rewards drawn from `range`.
fn primitives(seed: u64, n_s: usize, n_a: usize, gamma: f64, range: (f64, f64), k: usize) -> Vec<TabularMdp> {
    let base = random_mdp(n_s, n_a, range, gamma, seed).unwrap();
    (0..k as u64)
        .map(|i| {
            let r = random_mdp(n_s, n_a, range, gamma, seed ^ (0x9e37_79b9 + i)).unwrap();
            base.with_reward(r.reward().clone()).unwrap()
        })
        .collect()
}

fn random_table(r: &mut ChaCha8Rng, n_s: usize, n_a: usize, lo: f64, hi: f64) -> Table {
    Table::from_fn(n_s, n_a, |_, _| r.gen_range(lo..hi))
}

fn soft(beta: f64, n_s: usize, n_a: usize) -> Regime {
    Regime::EntropyRegularized(SoftConfig::uniform(beta, n_s, n_a).unwrap())
}

fn shape() -> impl Strategy<Value = (u64, usize, usize, f64)> {
    (any::<u64>(), 2usize..=7, 2usize..=4, prop::sample::select(vec![0.5, 0.8, 0.9, 0.95]))
}

fn catalog(regime: &Regime) -> Vec<TransferFn> {
    let mut fs = vec![
        TransferFn::or_max(2).unwrap(),
        TransferFn::and_min(2).unwrap(),
        TransferFn::not_negate(),
        TransferFn::linear(0.5).unwrap(),
        TransferFn::linear(2.0).unwrap(),
        TransferFn::convex_combo(vec![0.3, 0.6]).unwrap(),
    ];
    if let Regime::Standard = regime {
        fs.push(TransferFn::conical_combo(vec![0.7, 1.4]).unwrap());
        fs.push(TransferFn::linear(-1.5).unwrap());
    }
    fs
}

fn max_diff(a: &Table, b: &Table) -> f64 {
    a.sup_distance(b).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn backups_contract((seed, n_s, n_a, gamma) in shape(), beta in 0.1f64..20.0) {
        let m = &primitives(seed, n_s, n_a, gamma, (-1.0, 1.0), 1)[0];
        let mut r = rng(seed);
        let q1 = random_table(&mut r, n_s, n_a, -10.0, 10.0);
        let q2 = random_table(&mut r, n_s, n_a, -10.0, 10.0);
        let d = max_diff(&q1, &q2);
        let hard = max_diff(&bellman_backup_standard(m, &q1).unwrap().values, &bellman_backup_standard(m, &q2).unwrap().values);
        prop_assert!(hard <= gamma * d + 1e-12);
        let cfg = SoftConfig::uniform(beta, n_s, n_a).unwrap();
        let s = max_diff(&bellman_backup_soft(m, &q1, &cfg).unwrap().values, &bellman_backup_soft(m, &q2, &cfg).unwrap().values);
        prop_assert!(s <= gamma * d + 1e-12);
    }

    #[test]
    fn large_beta_matches_standard((seed, n_s, n_a, gamma) in shape()) {
        let m = &primitives(seed, n_s, n_a, gamma, (-1.0, 1.0), 1)[0];
        let hard = solve(m, &Regime::Standard, &opts()).unwrap().q.values;
        let soft_q = solve(m, &soft(1e6, n_s, n_a), &opts()).unwrap().q.values;
        prop_assert!(max_diff(&hard, &soft_q) <= 1e-3);
    }

    #[test]
    fn soft_value_dominates_prior_mean(seed in any::<u64>(), n_a in 1usize..6, beta in 0.01f64..100.0) {
        let mut r = rng(seed);
        let q = random_table(&mut r, 4, n_a, -50.0, 50.0);
        let prior = Table::from_fn(4, n_a, |_, _| r.gen_range(0.05..1.0));
        let prior = Table::from_rows(prior.rows().map(|row| {
            let z: f64 = row.iter().sum();
            row.iter().map(|p| p / z).collect()
        }).collect()).unwrap();
        let cfg = SoftConfig::new(beta, Policy::new(PolicyKind::Stochastic, prior.clone()).unwrap()).unwrap();
        let v = soft_state_values(&q, &cfg).unwrap();
        for (s, vs) in v.iter().enumerate() {
            let mean: f64 = q.row(s).iter().zip(prior.row(s)).map(|(x, p)| x * p).sum();
            prop_assert!(*vs >= mean - 1e-12, "state {s}: {vs} < {mean}");
        }
    }

    #[test]
    fn optimal_policies_attain_optimal_values((seed, n_s, n_a, gamma) in shape(), beta in 0.5f64..10.0) {
        let m = &primitives(seed, n_s, n_a, gamma, (-1.0, 1.0), 1)[0];
        let q = solve(m, &Regime::Standard, &opts()).unwrap().q.values;
        let q_pi = evaluate_policy(m, &greedy_policy(&q), &Regime::Standard, &opts()).unwrap().q.values;
        prop_assert!(max_diff(&q, &q_pi) <= TIGHT);
        let regime = soft(beta, n_s, n_a);
        let qs = solve(m, &regime, &opts()).unwrap().q.values;
        let pi = boltzmann_policy(&qs, regime.soft_config().unwrap()).unwrap();
        let qs_pi = evaluate_policy(m, &pi, &regime, &opts()).unwrap().q.values;
        prop_assert!(max_diff(&qs, &qs_pi) <= TIGHT);
    }

    #[test]
    fn reward_shift_moves_values_by_geometric_sum((seed, n_s, n_a, gamma) in shape(), c in -5.0f64..5.0, beta in 0.5f64..10.0) {
        let m = &primitives(seed, n_s, n_a, gamma, (-1.0, 1.0), 1)[0];
        let shifted = m.with_reward(m.reward().map(|r| r + c)).unwrap();
        for regime in [Regime::Standard, soft(beta, n_s, n_a)] {
            let q = solve(m, &regime, &opts()).unwrap().q.values;
            let q2 = solve(&shifted, &regime, &opts()).unwrap().q.values;
            let expect = q.map(|x| x + c / (1.0 - gamma));
            prop_assert!(max_diff(&q2, &expect) <= TIGHT);
        }
    }

    #[test]
    fn catalog_respects_lipschitz_constant(seed in any::<u64>()) {
        let mut r = rng(seed);
        for f in catalog(&Regime::Standard) {
            let l = f.lipschitz_bound().unwrap();
            for _ in 0..50 {
                let x: Vec<f64> = (0..f.arity()).map(|_| r.gen_range(-20.0..0.0)).collect();
                let y: Vec<f64> = (0..f.arity()).map(|_| r.gen_range(-20.0..0.0)).collect();
                let d = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                prop_assert!((f.eval(&x) - f.eval(&y)).abs() <= l * d + 1e-12, "{f}");
            }
        }
    }

    #[test]
    fn apply_transfer_commutes_with_cell_permutation(seed in any::<u64>(), n_s in 1usize..6, n_a in 1usize..4) {
        let mut r = rng(seed);
        let a = random_table(&mut r, n_s, n_a, -5.0, 5.0);
        let b = random_table(&mut r, n_s, n_a, -5.0, 5.0);
        let mut perm: Vec<usize> = (0..n_s * n_a).collect();
        perm.shuffle(&mut r);
        let permute = |t: &Table| Table::from_flat(n_s, n_a, perm.iter().map(|&i| t.values()[i]).collect()).unwrap();
        for f in catalog(&Regime::Standard) {
            let args: Vec<&Table> = [&a, &b][..f.arity()].to_vec();
            let permuted: Vec<Table> = args.iter().map(|t| permute(t)).collect();
            prop_assert_eq!(apply_transfer(&f, &permuted).unwrap(), permute(&apply_transfer(&f, &args).unwrap()));
        }
    }

    #[test]
    fn bounds_hold_for_catalog((seed, n_s, n_a, gamma) in shape(), beta in prop::sample::select(vec![0.0, 1.0, 5.0])) {
        let regime = if beta == 0.0 { Regime::Standard } else { soft(beta, n_s, n_a) };
        let prims = primitives(seed, n_s, n_a, gamma, (-1.0, 0.0), 2);
        let qs: Vec<Table> = prims.iter().map(|m| solve(m, &regime, &opts()).unwrap().q.values).collect();
        for f in catalog(&regime) {
            let k = f.arity();
            let composite = composite_mdp(&f, &prims[..k]).unwrap();
            let q_tilde = solve(&composite, &regime, &opts()).unwrap().q.values;
            let rep = bound_report(&composite, &f, &qs[..k], &regime, &opts()).unwrap();
            let q_pi = evaluate_policy(&composite, &rep.zero_shot, &regime, &opts()).unwrap().q.values;
            for (i, &q) in q_tilde.values().iter().enumerate() {
                prop_assert!(rep.lower.values()[i] <= q + TIGHT, "{f}: lower");
                prop_assert!(q <= rep.upper.values()[i] + TIGHT, "{f}: upper");
                prop_assert!(q - q_pi.values()[i] <= rep.regret.values()[i] + TIGHT, "{f}: regret");
                prop_assert!(q_pi.values()[i] <= q + TIGHT, "{f}: suboptimality");
                prop_assert!(rep.aux.values()[i] >= -1e-9 && rep.regret.values()[i] >= -1e-9, "{f}: sign");
            }
        }
    }

    #[test]
    fn positive_linear_maps_are_exact_in_standard_rl((seed, n_s, n_a, gamma) in shape(), k in 0.01f64..4.0) {
        let m = &primitives(seed, n_s, n_a, gamma, (-1.0, 1.0), 1)[0];
        let f = TransferFn::linear(k).unwrap();
        let q = solve(m, &Regime::Standard, &opts()).unwrap().q.values;
        let q_tilde = solve(&composite_mdp(&f, std::slice::from_ref(m)).unwrap(), &Regime::Standard, &opts()).unwrap().q.values;
        prop_assert!(max_diff(&q_tilde, &q.map(|x| k * x)) <= TIGHT);
        let a = greedy_policy(&q).argmax_actions();
        let b = greedy_policy(&q_tilde).argmax_actions();
        for s in 0..n_s {
            // near-ties may pick either action
            prop_assert!((q.get(s, a[s]) - q.get(s, b[s])).abs() <= TIGHT);
        }
    }

    #[test]
    fn soft_linear_maps_bound_one_side((seed, n_s, n_a, gamma) in shape(), beta in 0.5f64..10.0, k_small in 0.05f64..0.95, k_large in 1.05f64..4.0) {
        let m = &primitives(seed, n_s, n_a, gamma, (-1.0, 0.0), 1)[0];
        let regime = soft(beta, n_s, n_a);
        let q = solve(m, &regime, &opts()).unwrap().q.values;
        for (k, below) in [(k_small, true), (k_large, false)] {
            let f = TransferFn::linear(k).unwrap();
            let q_tilde = solve(&composite_mdp(&f, std::slice::from_ref(m)).unwrap(), &regime, &opts()).unwrap().q.values;
            for (qt, qv) in q_tilde.values().iter().zip(q.values()) {
                if below {
                    prop_assert!(*qt <= k * qv + TIGHT, "k={k}: {qt} > {}", k * qv);
                } else {
                    prop_assert!(*qt >= k * qv - TIGHT, "k={k}: {qt} < {}", k * qv);
                }
            }
        }
    }

    #[test]
    fn conical_combinations_bound_from_above((seed, n_s, n_a, gamma) in shape(), w1 in 0.01f64..3.0, w2 in 0.01f64..3.0) {
        let prims = primitives(seed, n_s, n_a, gamma, (-1.0, 1.0), 2);
        let f = TransferFn::conical_combo(vec![w1, w2]).unwrap();
        let qs: Vec<Table> = prims.iter().map(|m| solve(m, &Regime::Standard, &opts()).unwrap().q.values).collect();
        let q_tilde = solve(&composite_mdp(&f, &prims).unwrap(), &Regime::Standard, &opts()).unwrap().q.values;
        let fq = apply_transfer(&f, &qs).unwrap();
        for (qt, e) in q_tilde.values().iter().zip(fq.values()) {
            prop_assert!(*qt <= e + TIGHT);
        }
    }

    #[test]
    fn aux_rewards_are_negatives((seed, n_s, n_a, gamma) in shape(), k in 0.0f64..3.0) {
        let m = &primitives(seed, n_s, n_a, gamma, (-1.0, 0.0), 1)[0];
        let f = TransferFn::linear(k).unwrap();
        let q = solve(m, &Regime::Standard, &opts()).unwrap().q.values;
        let composite = composite_mdp(&f, std::slice::from_ref(m)).unwrap();
        let c = compute_c(&composite, &f, &[&q], &Regime::Standard, &opts()).unwrap();
        let c_hat = compute_c_hat(&composite, &f, &[&q], &Regime::Standard, &opts()).unwrap();
        for (a, b) in c.reward.values().iter().zip(c_hat.reward.values()) {
            prop_assert!((a + b).abs() <= 1e-12);
        }
    }

    #[test]
    fn random_mdps_are_well_formed(seed in any::<u64>(), n_s in 1usize..12, n_a in 1usize..6, lo in -5.0f64..0.0, w in 0.0f64..5.0) {
        let m = random_mdp(n_s, n_a, (lo, lo + w), 0.9, seed).unwrap();
        for s in 0..n_s {
            for a in 0..n_a {
                let row = m.transition_row(s, a);
                prop_assert!(row.iter().all(|p| *p > 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= PROB_TOL);
                let r = m.reward().get(s, a);
                prop_assert!(r >= lo && r <= lo + w);
            }
        }
    }

    #[test]
    fn grid_parsing_is_deterministic(seed in any::<u64>(), rows in 2usize..6, cols in 2usize..6, slip in 0.0f64..1.0) {
        let mut r = rng(seed);
        let mut cells: Vec<Vec<char>> = (0..rows)
            .map(|_| (0..cols).map(|_| *[' ', '.', '.', 'D', '#', 'X'].choose(&mut r).unwrap()).map(|c| if c == ' ' { '.' } else { c }).collect())
            .collect();
        cells[r.gen_range(0..rows)][r.gen_range(0..cols)] = 'S';
        let text: String = cells.iter().map(|row| row.iter().collect::<String>() + "\n").collect();
        let params = GridParams { slip, penalty_reward: Some(-10.0), ..GridParams::default() };
        let a = parse_grid(&text, params.clone()).unwrap();
        let b = parse_grid(&text, params).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn slip_lowers_intended_probability(s1 in 0.0f64..0.99, s2 in 0.0f64..0.99) {
        prop_assume!((s1 - s2).abs() > 1e-9);
        let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
        let text = "...\n.S.\n...\n";
        let at = |slip| parse_grid(text, GridParams { slip, ..GridParams::default() }).unwrap();
        let (a, b) = (at(lo), at(hi));
        // centre is state 4; actions up, down, left, right reach 1, 7, 3, 5
        for (act, target) in [(0, 1), (1, 7), (2, 3), (3, 5)] {
            prop_assert!(b.transition_row(4, act)[target] < a.transition_row(4, act)[target]);
        }
    }
}

fn classify(f: &TransferFn, regime: &Regime, lo: f64, hi: f64, seed: u64) -> Classification {
    let domain = DomainBox::uniform(f.arity(), lo, hi).with_seed(seed);
    check_conditions(f, &domain, regime).unwrap().classification
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn checker_agrees_with_catalog(seed in any::<u64>(), lo in -20.0f64..-2.0, width in 2.0f64..18.0, beta in prop::sample::select(vec![1.0, 5.0])) {
        let hi = (lo + width).min(0.0);
        for regime in [Regime::Standard, soft(beta, 1, 4)] {
            for f in catalog(&regime) {
                let declared = f.classification(regime.kind()).unwrap();
                prop_assert_eq!(classify(&f, &regime, lo, hi, seed), declared, "{} on [{}, {}]", f, lo, hi);
            }
        }
    }
}

#[test]
fn checker_rejects_square_plus_constant() {
    let f = TransferFn::parse_expr("x1*x1 + 1", None).unwrap();
    assert_eq!(classify(&f, &Regime::Standard, -20.0, 0.0, 0), Classification::Neither);
}
