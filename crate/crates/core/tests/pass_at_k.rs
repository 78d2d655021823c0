use num_rational::Ratio;
use rlvr_core::eval::{pass_at_k_analytic, pass_at_k_exact, pass_at_k_unbiased, rollout_efficiency};
use rlvr_core::dars::{build_allocation_plan, DarsConfig, DifficultyEstimate, ScheduleKind};
use rlvr_core::env::{Policy, ProblemId, SuiteConfig, TaskSuite, success_probability};
use rlvr_core::rng::{stream, Purpose};
use rand::Rng;

/// Fraction of k-subsets of n samples (c successes) containing a success, by enumeration.
fn enumerate(n: usize, c: usize, k: usize) -> Ratio<i128> {
    let (mut hit, mut total) = (0i128, 0i128);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        total += 1;
        if mask & ((1u32 << c) - 1) != 0 {
            hit += 1;
        }
    }
    Ratio::new(hit, total)
}

#[test]
fn estimator_equals_subset_enumeration() {
    for n in 1..=10 {
        for c in 0..=n {
            for k in 1..=n {
                assert_eq!(pass_at_k_exact(n, c, k).unwrap(), enumerate(n, c, k), "n={n} c={c} k={k}");
                let f = pass_at_k_unbiased(n, c, k).unwrap();
                let want = enumerate(n, c, k);
                assert!((f - *want.numer() as f64 / *want.denom() as f64).abs() < 1e-12);
            }
        }
    }
    assert_eq!(pass_at_k_exact(10, 3, 4).unwrap(), Ratio::new(5, 6));
    assert_eq!(pass_at_k_exact(4, 2, 2).unwrap(), Ratio::new(5, 6));
}

#[test]
fn estimator_is_monotone_and_indicator_at_full_k() {
    for n in 1..=40 {
        for c in 0..=n {
            for k in 1..=n {
                let v = pass_at_k_unbiased(n, c, k).unwrap();
                if k > 1 {
                    assert!(v >= pass_at_k_unbiased(n, c, k - 1).unwrap());
                }
                if c > 0 {
                    assert!(v >= pass_at_k_unbiased(n, c - 1, k).unwrap());
                }
            }
            assert_eq!(pass_at_k_unbiased(n, c, n).unwrap(), if c > 0 { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn analytic_matches_unbiased_estimator_over_seeds() {
    let suite = TaskSuite::generate(&SuiteConfig { num_problems: 64, ..SuiteConfig::default() }, 5).unwrap();
    let policy = Policy::for_suite(&suite);
    let analytic = pass_at_k_analytic(&policy, &suite, 32);
    let probs: Vec<f64> = suite.problems().iter().map(|p| success_probability(&policy, p)).collect();
    let (n, k) = (128usize, 32usize);
    let mut estimates = Vec::new();
    for seed in 0..10u64 {
        let mut rng = stream(Purpose::Eval, &[0xab, seed]);
        let mean = probs
            .iter()
            .map(|&p| {
                let c = (0..n).filter(|_| rng.gen::<f64>() < p).count();
                pass_at_k_unbiased(n, c, k).unwrap()
            })
            .sum::<f64>()
            / probs.len() as f64;
        estimates.push(mean);
    }
    let m = estimates.iter().sum::<f64>() / 10.0;
    let sd = (estimates.iter().map(|e| (e - m).powi(2)).sum::<f64>() / 9.0).sqrt();
    let se = (sd / 10f64.sqrt()).max(1e-9);
    assert!((m - analytic).abs() <= 3.0 * se, "estimated {m} analytic {analytic} se {se}");
}

#[test]
fn disjoint_block_coverage_converges_to_estimator() {
    let (n, c, k) = (64usize, 5usize, 8usize);
    let target = pass_at_k_unbiased(n, c, k).unwrap();
    let mut rng = stream(Purpose::Eval, &[0xb10c]);
    let trials = 20_000;
    let mut hits = 0usize;
    for _ in 0..trials {
        let mut samples: Vec<bool> = (0..n).map(|i| i < c).collect();
        // Random shuffle, then read off one disjoint block of size k.
        for i in (1..n).rev() {
            samples.swap(i, rng.gen_range(0..=i));
        }
        hits += samples.chunks(k).take(1).filter(|b| b.iter().any(|&s| s)).count();
    }
    let rate = hits as f64 / trials as f64;
    let se = (target * (1.0 - target) / trials as f64).sqrt();
    assert!((rate - target).abs() <= 3.0 * se, "{rate} vs {target}");
}

#[test]
fn equal_treatment_uses_no_more_rollouts_than_hardness_weighted() {
    let mut rng = stream(Purpose::Batch, &[0xe7]);
    for _ in 0..200 {
        let ests: Vec<DifficultyEstimate> = (0..16)
            .map(|i| DifficultyEstimate::new(ProblemId(i), 8, rng.gen_range(0..=8)).unwrap())
            .collect();
        let et = build_allocation_plan(&ests, &DarsConfig::new(ScheduleKind::EqualTreatment, 8, 32), 0).unwrap();
        let hw = build_allocation_plan(&ests, &DarsConfig::new(ScheduleKind::HardnessWeighted, 8, 32), 0).unwrap();
        assert!(rollout_efficiency(&[et]).unwrap() <= rollout_efficiency(&[hw]).unwrap());
    }
}
