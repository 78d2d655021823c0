mod common;

use common::*;
use rayon::prelude::*;
use rlvr_core::env::{entropy, mean_token_entropy, sample_trajectory, success_probability, Policy, SuiteConfig, TaskSuite};
use rlvr_core::eval::{evaluate, EvalConfig};
use rlvr_core::rng::{stream, Purpose};

#[test]
fn monte_carlo_success_rate_matches_analytic_probability() {
    let suite = TaskSuite::generate(&SuiteConfig::default(), 3).unwrap();
    let samples = 100_000u64;
    let worst = (0..20u64)
        .into_par_iter()
        .map(|pair| {
            let policy = random_policy(suite.feature_dim, suite.vocab_size, 0.3, pair);
            let problem = &suite.problems()[(pair as usize * 37) % suite.len()];
            let p = success_probability(&policy, problem);
            let mut rng = stream(Purpose::Eval, &[0xc0ffee, pair]);
            let hits = (0..samples).filter(|_| sample_trajectory(&policy, problem, &mut rng).reward == 1).count();
            let mean = hits as f64 / samples as f64;
            let se = (p * (1.0 - p) / samples as f64).sqrt().max(1.0 / samples as f64);
            let z = (mean - p).abs() / se;
            assert!(z <= 3.0, "pair {pair}: p={p} empirical={mean} z={z}");
            z
        })
        .reduce(|| 0.0, f64::max);
    println!("worst z-score {worst:.2}");
}

#[test]
fn mean_entropy_matches_independent_summation() {
    let suite = small_suite(10, 7, 5, 8);
    let policy = random_policy(5, 7, 1.0, 8);
    let mut total = 0.0;
    let mut count = 0.0;
    for p in suite.problems() {
        for t in 0..p.num_steps() {
            let lps: Vec<f64> = (0..7).map(|j| logprob_oracle(&policy, p.features(t), j)).collect();
            total -= lps.iter().map(|lp| lp.exp() * lp).sum::<f64>();
            count += 1.0;
        }
    }
    assert!((mean_token_entropy(&policy, suite.problems()) - total / count).abs() < 1e-12);
    assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
}

#[test]
fn uniform_policy_eval_matches_analytic_mean() {
    let suite = TaskSuite::generate(&SuiteConfig::default(), 0).unwrap();
    let policy = Policy::for_suite(&suite);
    let config = EvalConfig {
        samples_per_problem_n: 128,
        k_values: vec![1, 32, 128],
        eval_seed: 11,
    };
    let report = evaluate(&policy, &suite, &config, 0).unwrap();
    let probs: Vec<f64> = suite.problems().iter().map(|p| success_probability(&policy, p)).collect();
    let mean_p = probs.iter().sum::<f64>() / probs.len() as f64;
    let var = probs.iter().map(|p| p * (1.0 - p) / 128.0).sum::<f64>() / (probs.len() as f64).powi(2);
    assert!((report.pass_at_1 - mean_p).abs() <= 3.0 * var.sqrt());
    assert_eq!(report.analytic_pass_at_1, mean_p);
}

#[test]
fn default_suite_spans_required_difficulty_range() {
    let suite = TaskSuite::generate(&SuiteConfig::default(), 0).unwrap();
    let ps: Vec<f64> = suite.problems().iter().map(|p| p.uniform_success_probability(suite.vocab_size)).collect();
    let lo = ps.iter().cloned().fold(1.0, f64::min);
    let hi = ps.iter().cloned().fold(0.0, f64::max);
    assert!(lo <= 1e-4 && hi >= 0.9, "range [{lo}, {hi}]");
}
