//! Pass@1 / pass@k evaluation and rollout accounting.

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dars::AllocationPlan;
use crate::env::{mean_token_entropy, sample_trajectory, success_probability, Policy, ProblemId, TaskSuite};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub samples_per_problem_n: usize,
    pub k_values: Vec<usize>,
    pub eval_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples_per_problem_n: 128,
            k_values: vec![1, 32, 128],
            eval_seed: 0x00e7_a15e,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_problem_n == 0 {
            return Err(Error::InvalidConfig("samples_per_problem_n must be positive".into()));
        }
        match self.k_values.iter().find(|&&k| k == 0 || k > self.samples_per_problem_n) {
            Some(&k) => Err(Error::InvalidK {
                k,
                samples: self.samples_per_problem_n,
            }),
            None => Ok(()),
        }
    }
}

fn check_counts(n: usize, c: usize) -> Result<()> {
    if n == 0 || c > n {
        return Err(Error::InvalidCounts { samples: n, successes: c });
    }
    Ok(())
}

/// Avg@n: the fraction of correct samples.
pub fn pass_at_1(n: usize, c: usize) -> Result<f64> {
    check_counts(n, c)?;
    Ok(c as f64 / n as f64)
}

/// Unbiased pass@k, `1 - C(n-c, k) / C(n, k)`, via the running product
/// `prod_{i<k} (n-c-i) / (n-i)`.
pub fn pass_at_k_unbiased(n: usize, c: usize, k: usize) -> Result<f64> {
    check_counts(n, c)?;
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, samples: n });
    }
    if c == 0 {
        return Ok(0.0);
    }
    if n - c < k {
        return Ok(1.0);
    }
    let miss: f64 = (0..k).map(|i| (n - c - i) as f64 / (n - i) as f64).product();
    Ok((1.0 - miss).clamp(0.0, 1.0))
}

/// The same estimator in exact rational arithmetic.
pub fn pass_at_k_exact(n: usize, c: usize, k: usize) -> Result<Ratio<i128>> {
    check_counts(n, c)?;
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, samples: n });
    }
    let miss = (0..k).fold(Ratio::from_integer(1i128), |acc, i| {
        let num = (n - c) as i128 - i as i128;
        acc * Ratio::new(num.max(0), (n - i) as i128)
    });
    Ok(Ratio::from_integer(1) - miss)
}

/// Mean over problems of `1 - (1 - p_j)^k` with exact success probabilities.
pub fn pass_at_k_analytic(policy: &Policy, suite: &TaskSuite, k: usize) -> f64 {
    let probs: Vec<f64> = suite
        .problems()
        .par_iter()
        .map(|p| success_probability(policy, p))
        .collect();
    analytic_from_probabilities(&probs, k)
}

fn analytic_from_probabilities(probs: &[f64], k: usize) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    probs.iter().map(|&p| 1.0 - (1.0 - p).powi(k as i32)).sum::<f64>() / probs.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ProblemCounts {
    pub problem_id: ProblemId,
    pub n: usize,
    pub c: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub step: usize,
    pub per_problem: Vec<ProblemCounts>,
    pub pass_at_1: f64,
    /// Unbiased estimator at each configured k.
    pub pass_at_k: Vec<(usize, f64)>,
    /// Fraction of problems with at least one success among all n samples.
    pub coverage_at_n: f64,
    /// Exact `1 - (1 - p)^k` at each configured k.
    pub analytic_pass_at_k: Vec<(usize, f64)>,
    pub analytic_pass_at_1: f64,
    pub mean_token_entropy: f64,
}

impl EvalReport {
    pub fn pass_at(&self, k: usize) -> Option<f64> {
        self.pass_at_k.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v)
    }

    pub fn analytic_at(&self, k: usize) -> Option<f64> {
        self.analytic_pass_at_k.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v)
    }
}

/// Sample `n` fresh trajectories per problem from the evaluation stream.
///
/// Evaluation streams are keyed by `eval_seed` only, so every checkpoint is
/// scored on common random numbers and training streams are never touched.
pub fn evaluate(policy: &Policy, suite: &TaskSuite, config: &EvalConfig, step: usize) -> Result<EvalReport> {
    config.validate()?;
    let n = config.samples_per_problem_n;
    let rows: Vec<(ProblemCounts, f64)> = suite
        .problems()
        .par_iter()
        .map(|problem| {
            let c = (0..n)
                .filter(|&i| {
                    let mut rng = stream(
                        Purpose::Eval,
                        &[suite.seed, config.eval_seed, u64::from(problem.id.0), i as u64],
                    );
                    sample_trajectory(policy, problem, &mut rng).reward == 1
                })
                .count();
            let counts = ProblemCounts {
                problem_id: problem.id,
                n,
                c,
            };
            (counts, success_probability(policy, problem))
        })
        .collect();

    let problems = rows.len() as f64;
    let per_problem: Vec<ProblemCounts> = rows.iter().map(|(c, _)| *c).collect();
    let probs: Vec<f64> = rows.iter().map(|(_, p)| *p).collect();

    let pass_at_1 = per_problem.iter().map(|r| r.c as f64 / r.n as f64).sum::<f64>() / problems;
    let pass_at_k = config
        .k_values
        .iter()
        .map(|&k| {
            let total = per_problem
                .iter()
                .map(|r| pass_at_k_unbiased(r.n, r.c, k))
                .sum::<Result<f64>>()?;
            Ok((k, total / problems))
        })
        .collect::<Result<Vec<_>>>()?;
    let coverage_at_n = per_problem.iter().filter(|r| r.c > 0).count() as f64 / problems;

    Ok(EvalReport {
        step,
        pass_at_1,
        pass_at_k,
        coverage_at_n,
        analytic_pass_at_k: config
            .k_values
            .iter()
            .map(|&k| (k, analytic_from_probabilities(&probs, k)))
            .collect(),
        analytic_pass_at_1: analytic_from_probabilities(&probs, 1),
        mean_token_entropy: mean_token_entropy(policy, suite.problems()),
        per_problem,
    })
}

/// Mean rollouts per prompt across iterations.
pub fn rollout_efficiency(plans: &[AllocationPlan]) -> Result<f64> {
    if plans.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(plans.iter().map(|p| p.avg_rollouts_per_prompt).sum::<f64>() / plans.len() as f64)
}
