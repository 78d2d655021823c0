#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;
use rlvr_core::advantage::AdvantageMode;
use rlvr_core::env::{sample_trajectory, Policy, SuiteConfig, TaskSuite};
use rlvr_core::rng::{stream, Purpose};
use rlvr_core::trainer::Group;

pub fn small_suite(problems: usize, vocab: usize, dim: usize, seed: u64) -> TaskSuite {
    TaskSuite::generate(
        &SuiteConfig {
            num_problems: problems,
            vocab_size: vocab,
            feature_dim: dim,
            max_steps: 3,
            aligned_fraction: 0.5,
            min_log10_p: -2.0,
            max_p: 0.9,
        },
        seed,
    )
    .unwrap()
}

pub fn random_policy(dim: usize, vocab: usize, scale: f64, seed: u64) -> Policy {
    let mut rng = stream(Purpose::Teacher, &[0xfeed, seed]);
    let w = (0..dim * vocab).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Policy::from_weights(dim, vocab, w).unwrap()
}

pub fn perturbed(policy: &Policy, scale: f64, seed: u64) -> Policy {
    let noise = random_policy(policy.feature_dim, policy.vocab_size, scale, seed ^ 0x5151);
    let w = policy.weights.iter().zip(&noise.weights).map(|(a, b)| a + b).collect();
    Policy::from_weights(policy.feature_dim, policy.vocab_size, w).unwrap()
}

/// Sample groups under `old` with reward-derived advantages.
pub fn sampled_groups(old: &Policy, suite: &TaskSuite, per_group: usize, seed: u64) -> Vec<Group> {
    suite
        .problems()
        .iter()
        .map(|p| {
            let trajs = (0..per_group)
                .map(|i| sample_trajectory(old, p, &mut stream(Purpose::Train, &[seed, u64::from(p.id.0), i as u64])))
                .collect();
            Group::new(p.id, trajs, AdvantageMode::NoStd).unwrap()
        })
        .collect()
}

/// Replace reward-derived advantages with arbitrary ones.
pub fn randomize_advantages(groups: &mut [Group], seed: u64) {
    let mut rng = stream(Purpose::Teacher, &[0xadd, seed]);
    for g in groups {
        for a in &mut g.advantages {
            *a = rng.gen_range(-1.5..1.5);
        }
    }
}

/// Independent forward pass: plain loops, log-sum-exp written out.
pub fn logprob_oracle(policy: &Policy, features: &[f64], token: usize) -> f64 {
    let v = policy.vocab_size;
    let logits: Vec<f64> = (0..v)
        .map(|j| (0..policy.feature_dim).map(|i| features[i] * policy.weights[i * v + j]).sum())
        .collect();
    let m = logits.iter().cloned().fold(f64::MIN, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits[token] - lse
}
