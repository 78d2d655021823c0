//! The RLVR loop: rollout, optional DARS re-balancing, group advantages and
//! clipped-surrogate ascent under mini-batch or full-batch regimes.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advantage::{advantages, AdvantageMode, RewardGroup};
use crate::checkpoint::Checkpoint;
use crate::dars::{build_allocation_plan, estimate_difficulty, phase1_only_plan, AllocationPlan, DarsConfig};
use crate::env::{mean_token_entropy, sample_trajectory, softmax_in_place, Policy, Problem, ProblemId, TaskSuite, Trajectory};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalReport};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub batch_size_m: usize,
    pub base_rollout_n: usize,
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    /// Mini-batches per iteration.
    pub ppo_splits: usize,
    /// Passes over the iteration's data.
    pub ppo_epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dars: Option<DarsConfig>,
    pub advantage_mode: AdvantageMode,
    #[serde(default)]
    pub group_norm: GroupNorm,
    pub total_steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Several mini-batch steps, one pass.
    MiniBatch,
    /// One full-batch step per epoch.
    FullBatch,
    Mixed,
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.batch_size_m == 0 {
            return bad("batch_size_m must be positive".into());
        }
        if self.base_rollout_n == 0 {
            return bad("base_rollout_n must be positive".into());
        }
        if !(self.clip_epsilon > 0.0) {
            return bad(format!("clip_epsilon must be positive, got {}", self.clip_epsilon));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if self.ppo_splits == 0 || self.ppo_epochs == 0 {
            return bad("ppo_splits and ppo_epochs must be positive".into());
        }
        if self.ppo_splits > self.batch_size_m {
            return bad(format!(
                "ppo_splits {} exceeds batch_size_m {}",
                self.ppo_splits, self.batch_size_m
            ));
        }
        if let Some(d) = &self.dars {
            d.validate()?;
        }
        Ok(())
    }

    pub fn regime(&self) -> Regime {
        match (self.ppo_splits, self.ppo_epochs) {
            (1, _) => Regime::FullBatch,
            (_, 1) => Regime::MiniBatch,
            _ => Regime::Mixed,
        }
    }

    pub fn phase1_rollouts(&self) -> usize {
        self.dars.as_ref().map_or(self.base_rollout_n, |d| d.phase1_k0)
    }
}

/// Problems for iteration `step`: a window of the concatenation of seeded
/// per-epoch permutations, skipping any id already in the batch.
pub fn batch_for_step(suite_len: usize, batch_size: usize, seed: u64, step: usize) -> Result<Vec<ProblemId>> {
    if batch_size == 0 || batch_size > suite_len {
        return Err(Error::InvalidConfig(format!(
            "batch size {batch_size} cannot be drawn without replacement from {suite_len} problems"
        )));
    }
    let permutation = |epoch: usize| {
        let mut order: Vec<u32> = (0..suite_len as u32).collect();
        order.shuffle(&mut stream(Purpose::Batch, &[seed, epoch as u64]));
        order
    };
    let mut pos = step * batch_size;
    let mut epoch = pos / suite_len;
    let mut order = permutation(epoch);
    let mut seen = vec![false; suite_len];
    let mut batch = Vec::with_capacity(batch_size);
    while batch.len() < batch_size {
        if pos / suite_len != epoch {
            epoch = pos / suite_len;
            order = permutation(epoch);
        }
        let id = order[pos % suite_len];
        if !seen[id as usize] {
            seen[id as usize] = true;
            batch.push(ProblemId(id));
        }
        pos += 1;
    }
    Ok(batch)
}

/// The `G` dividing a group's summed token terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupNorm {
    /// The group's own size, `k0 + dn` after re-balancing.
    #[default]
    Merged,
    /// The base rollout size `N` for every group, so each extra rollout
    /// adds weight to its problem.
    Nominal,
}

impl GroupNorm {
    pub fn name(self) -> &'static str {
        match self {
            GroupNorm::Merged => "merged",
            GroupNorm::Nominal => "nominal",
        }
    }
}

impl std::str::FromStr for GroupNorm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "merged" => Ok(GroupNorm::Merged),
            "nominal" => Ok(GroupNorm::Nominal),
            other => Err(format!("unknown group normalization `{other}` (expected merged or nominal)")),
        }
    }
}

/// All rollouts of one problem in one iteration, with their advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub problem_id: ProblemId,
    pub trajectories: Vec<Trajectory>,
    /// One per trajectory, broadcast to every step.
    pub advantages: Vec<f64>,
    /// Divisor of the group's token sum; the group size unless overridden.
    pub normalizer: usize,
}

impl Group {
    pub fn new(problem_id: ProblemId, trajectories: Vec<Trajectory>, mode: AdvantageMode) -> Result<Self> {
        let rewards = RewardGroup::new(trajectories.iter().map(|t| t.reward).collect())?;
        Ok(Self {
            problem_id,
            advantages: advantages(&rewards, mode).0,
            normalizer: trajectories.len(),
            trajectories,
        })
    }

    pub fn is_degenerate(&self) -> bool {
        let first = self.trajectories.first().map(|t| t.reward);
        self.trajectories.iter().all(|t| Some(t.reward) == first)
    }
}

fn step_logprob(policy: &Policy, problem: &Problem, step: usize, token: u16) -> (f64, Vec<f64>) {
    let mut probs = policy.logits(problem.features(step));
    softmax_in_place(&mut probs);
    (probs[token as usize].ln(), probs)
}

/// `pi_new(o_t) / pi_old(o_t)` for one step of a sampled trajectory.
pub fn importance_ratio(policy: &Policy, problem: &Problem, trajectory: &Trajectory, step: usize) -> Result<f64> {
    let (logprob, _) = step_logprob(policy, problem, step, trajectory.tokens[step]);
    let ratio = (logprob - trajectory.logprobs_old[step]).exp();
    if !ratio.is_finite() {
        return Err(Error::NumericalOverflow(format!(
            "importance ratio at step {step} of problem {} is {ratio}",
            trajectory.problem_id
        )));
    }
    Ok(ratio)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEval {
    pub value: f64,
    pub gradient: Option<Vec<f64>>,
    /// Tokens whose clipped branch is selected, zeroing their gradient.
    pub clipped_tokens: usize,
    pub tokens: usize,
}

impl SurrogateEval {
    pub fn clip_fraction(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.clipped_tokens as f64 / self.tokens as f64
        }
    }
}

struct GroupTerm {
    value: f64,
    gradient: Option<Vec<f64>>,
    clipped: usize,
    tokens: usize,
}

fn group_term(policy: &Policy, suite: &TaskSuite, group: &Group, epsilon: f64, with_grad: bool) -> Result<GroupTerm> {
    let problem = suite
        .problem(group.problem_id)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown problem {}", group.problem_id)))?;
    let v = policy.vocab_size;
    let scale = 1.0 / group.normalizer as f64;
    let mut value = 0.0;
    let mut gradient = with_grad.then(|| vec![0.0; policy.weights.len()]);
    let (mut clipped, mut tokens) = (0, 0);

    for (traj, &adv) in group.trajectories.iter().zip(&group.advantages) {
        for t in 0..traj.tokens.len() {
            tokens += 1;
            let token = traj.tokens[t];
            let (logprob, probs) = step_logprob(policy, problem, t, token);
            let ratio = (logprob - traj.logprobs_old[t]).exp();
            if !ratio.is_finite() {
                return Err(Error::NumericalOverflow(format!(
                    "importance ratio at step {t} of problem {} is {ratio}",
                    group.problem_id
                )));
            }
            let clipped_ratio = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
            value += scale * (ratio * adv).min(clipped_ratio * adv);
            if adv == 0.0 {
                continue;
            }
            // min() picks the constant clipped branch once the ratio moves past
            // the trust region in the advantage's direction.
            let active = if adv > 0.0 { ratio <= 1.0 + epsilon } else { ratio >= 1.0 - epsilon };
            if !active {
                clipped += 1;
                continue;
            }
            if let Some(grad) = gradient.as_mut() {
                // d(r A)/dW = A r f (e_token - p)^T
                let coef = scale * adv * ratio;
                for (row, &f) in grad.chunks_exact_mut(v).zip(problem.features(t)) {
                    let cf = coef * f;
                    for (g, &p) in row.iter_mut().zip(&probs) {
                        *g -= cf * p;
                    }
                    row[token as usize] += cf;
                }
            }
        }
    }
    Ok(GroupTerm {
        value,
        gradient,
        clipped,
        tokens,
    })
}

/// Mean over groups of `(1/G) sum_i sum_t min(r A, clip(r) A)`, optionally
/// with its gradient. Groups are evaluated in parallel and reduced in order.
pub fn evaluate_surrogate(
    policy: &Policy,
    suite: &TaskSuite,
    groups: &[Group],
    epsilon: f64,
    with_grad: bool,
) -> Result<SurrogateEval> {
    if groups.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let terms: Vec<GroupTerm> = groups
        .par_iter()
        .map(|g| group_term(policy, suite, g, epsilon, with_grad))
        .collect::<Result<_>>()?;
    let inv = 1.0 / groups.len() as f64;
    let mut out = SurrogateEval {
        value: 0.0,
        gradient: with_grad.then(|| vec![0.0; policy.weights.len()]),
        clipped_tokens: 0,
        tokens: 0,
    };
    for term in terms {
        out.value += inv * term.value;
        out.clipped_tokens += term.clipped;
        out.tokens += term.tokens;
        if let (Some(acc), Some(g)) = (out.gradient.as_mut(), term.gradient) {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += inv * x;
            }
        }
    }
    if !out.value.is_finite() {
        return Err(Error::NumericalOverflow("surrogate is not finite".into()));
    }
    if out.gradient.as_ref().is_some_and(|g| g.iter().any(|x| !x.is_finite())) {
        return Err(Error::NumericalOverflow("surrogate gradient is not finite".into()));
    }
    Ok(out)
}

pub fn clipped_surrogate(policy: &Policy, suite: &TaskSuite, groups: &[Group], epsilon: f64) -> Result<f64> {
    evaluate_surrogate(policy, suite, groups, epsilon, false).map(|e| e.value)
}

pub fn surrogate_gradient(policy: &Policy, suite: &TaskSuite, groups: &[Group], epsilon: f64) -> Result<Vec<f64>> {
    let eval = evaluate_surrogate(policy, suite, groups, epsilon, true)?;
    Ok(eval.gradient.unwrap_or_default())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpdateStats {
    pub surrogate_value: f64,
    pub grad_norm: f64,
    pub clip_fraction: f64,
    pub tokens_processed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationMetrics {
    /// Number of completed iterations after this one.
    pub step: usize,
    pub mean_reward: f64,
    pub zero_gradient_group_fraction: f64,
    /// Step-distribution entropy over the batch, under the sampling policy.
    pub mean_token_entropy: f64,
    /// Entropy averaged over the sampled tokens of every trajectory.
    pub sampled_token_entropy: f64,
    pub avg_rollouts_per_prompt: f64,
    pub rollouts: usize,
    pub cumulative_rollouts: u64,
    pub update_stats: Vec<UpdateStats>,
}

#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub policy: Policy,
    pub metrics: IterationMetrics,
    pub plan: AllocationPlan,
}

fn sample_group(
    policy: &Policy,
    suite: &TaskSuite,
    problem: &Problem,
    seed: u64,
    step: usize,
    indices: std::ops::Range<usize>,
) -> Vec<Trajectory> {
    indices
        .map(|i| {
            let mut rng = stream(
                Purpose::Train,
                &[suite.seed, seed, step as u64, u64::from(problem.id.0), i as u64],
            );
            sample_trajectory(policy, problem, &mut rng)
        })
        .collect()
}

/// One training iteration. `step` counts iterations already completed and
/// keys the batch and rollout streams.
pub fn train_iteration(
    policy: &Policy,
    suite: &TaskSuite,
    config: &TrainerConfig,
    step: usize,
    cumulative_rollouts: u64,
) -> Result<IterationOutcome> {
    config.validate()?;
    let batch = batch_for_step(suite.len(), config.batch_size_m, config.seed, step)?;
    let problems: Vec<&Problem> = batch
        .iter()
        .map(|&id| suite.problem(id).expect("batch ids come from the suite"))
        .collect();
    let k0 = config.phase1_rollouts();

    let mut rollouts: Vec<Vec<Trajectory>> = problems
        .par_iter()
        .map(|p| sample_group(policy, suite, p, config.seed, step, 0..k0))
        .collect();

    let estimates = batch
        .iter()
        .zip(&rollouts)
        .map(|(&id, trajs)| {
            let rewards = RewardGroup::new(trajs.iter().map(|t| t.reward).collect())?;
            Ok(estimate_difficulty(id, &rewards))
        })
        .collect::<Result<Vec<_>>>()?;

    let plan = match &config.dars {
        Some(dars) => {
            let plan = build_allocation_plan(&estimates, dars, step)?;
            let extras: Vec<Vec<Trajectory>> = problems
                .par_iter()
                .map(|p| {
                    let dn = plan.extra_for(p.id).unwrap_or(0);
                    sample_group(policy, suite, p, config.seed, step, k0..k0 + dn)
                })
                .collect();
            for (group, extra) in rollouts.iter_mut().zip(extras) {
                group.extend(extra);
            }
            plan
        }
        None => phase1_only_plan(&estimates)?,
    };

    let groups = batch
        .iter()
        .zip(rollouts)
        .map(|(&id, trajs)| {
            let mut g = Group::new(id, trajs, config.advantage_mode)?;
            if config.group_norm == GroupNorm::Nominal {
                g.normalizer = config.base_rollout_n;
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;

    let total: usize = groups.iter().map(|g| g.trajectories.len()).sum();
    let successes = groups
        .iter()
        .flat_map(|g| &g.trajectories)
        .filter(|t| t.reward == 1)
        .count();
    let degenerate = groups.iter().filter(|g| g.is_degenerate()).count();
    let (entropy_sum, entropy_tokens) = groups
        .iter()
        .flat_map(|g| &g.trajectories)
        .flat_map(|t| &t.per_step_entropy)
        .fold((0.0, 0usize), |(s, n), h| (s + h, n + 1));

    let mut current = policy.clone();
    let mut update_stats = Vec::with_capacity(config.ppo_splits * config.ppo_epochs);
    let len = groups.len();
    for _ in 0..config.ppo_epochs {
        for split in 0..config.ppo_splits {
            let shard = &groups[split * len / config.ppo_splits..(split + 1) * len / config.ppo_splits];
            let eval = evaluate_surrogate(&current, suite, shard, config.clip_epsilon, true)?;
            let grad = eval.gradient.as_deref().unwrap_or_default();
            let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            for (w, g) in current.weights.iter_mut().zip(grad) {
                *w += config.learning_rate * g;
            }
            if current.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::NumericalOverflow("policy weights diverged".into()));
            }
            update_stats.push(UpdateStats {
                surrogate_value: eval.value,
                grad_norm,
                clip_fraction: eval.clip_fraction(),
                tokens_processed: eval.tokens,
            });
        }
    }

    let metrics = IterationMetrics {
        step: step + 1,
        mean_reward: successes as f64 / total as f64,
        zero_gradient_group_fraction: degenerate as f64 / len as f64,
        mean_token_entropy: mean_token_entropy(policy, problems.iter().copied()),
        sampled_token_entropy: if entropy_tokens == 0 { 0.0 } else { entropy_sum / entropy_tokens as f64 },
        avg_rollouts_per_prompt: total as f64 / len as f64,
        rollouts: total,
        cumulative_rollouts: cumulative_rollouts + total as u64,
        update_stats,
    };
    Ok(IterationOutcome {
        policy: current,
        metrics,
        plan,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSchedule {
    pub config: EvalConfig,
    /// Evaluate after every `every` iterations (and always at the start and end).
    pub every: usize,
}

/// Hooks called by [`run_training`]. An error aborts the run.
pub trait TrainingObserver {
    fn on_iteration(&mut self, _outcome: &IterationOutcome) -> Result<()> {
        Ok(())
    }
    fn on_evaluation(&mut self, _report: &EvalReport) -> Result<()> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _checkpoint: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

impl TrainingObserver for () {}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub eval: Option<EvalSchedule>,
    pub checkpoint_every: Option<usize>,
    pub resume: Option<Checkpoint>,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub policy: Policy,
    pub metrics: Vec<IterationMetrics>,
    pub evaluations: Vec<EvalReport>,
    pub plans: Vec<AllocationPlan>,
}

pub fn run_training(
    config: &TrainerConfig,
    suite: &TaskSuite,
    options: &RunOptions,
    observer: &mut dyn TrainingObserver,
) -> Result<TrainingOutcome> {
    config.validate()?;
    let (mut policy, start, mut cumulative) = match &options.resume {
        Some(ckpt) => {
            if ckpt.run_seed != config.seed || ckpt.suite_seed != suite.seed {
                return Err(Error::Checkpoint(format!(
                    "checkpoint seeds ({}, {}) do not match the run ({}, {})",
                    ckpt.run_seed, ckpt.suite_seed, config.seed, suite.seed
                )));
            }
            if ckpt.policy.feature_dim != suite.feature_dim || ckpt.policy.vocab_size != suite.vocab_size {
                return Err(Error::Checkpoint("checkpoint policy shape does not match the suite".into()));
            }
            (ckpt.policy.clone(), ckpt.step as usize, ckpt.cumulative_rollouts)
        }
        None => (Policy::for_suite(suite), 0, 0),
    };

    let mut outcome = TrainingOutcome {
        policy: policy.clone(),
        metrics: Vec::new(),
        evaluations: Vec::new(),
        plans: Vec::new(),
    };
    let run_eval = |policy: &Policy, step: usize, outcome: &mut TrainingOutcome, observer: &mut dyn TrainingObserver| -> Result<()> {
        if let Some(schedule) = &options.eval {
            let report = evaluate(policy, suite, &schedule.config, step)?;
            observer.on_evaluation(&report)?;
            outcome.evaluations.push(report);
        }
        Ok(())
    };

    if options.resume.is_none() {
        run_eval(&policy, 0, &mut outcome, observer)?;
    }
    for step in start..config.total_steps {
        let it = train_iteration(&policy, suite, config, step, cumulative)?;
        observer.on_iteration(&it)?;
        policy = it.policy;
        cumulative = it.metrics.cumulative_rollouts;
        outcome.metrics.push(it.metrics);
        outcome.plans.push(it.plan);

        let done = step + 1;
        let last = done == config.total_steps;
        if let Some(schedule) = &options.eval {
            if last || done % schedule.every.max(1) == 0 {
                run_eval(&policy, done, &mut outcome, observer)?;
            }
        }
        if let Some(every) = options.checkpoint_every {
            if last || done % every.max(1) == 0 {
                observer.on_checkpoint(&Checkpoint {
                    step: done as u64,
                    run_seed: config.seed,
                    suite_seed: suite.seed,
                    cumulative_rollouts: cumulative,
                    policy: policy.clone(),
                })?;
            }
        }
    }
    outcome.policy = policy;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dars::ScheduleKind;
    use crate::env::SuiteConfig;
    use rand::Rng;

    fn small_suite(problems: usize, seed: u64) -> TaskSuite {
        TaskSuite::generate(
            &SuiteConfig {
                num_problems: problems,
                vocab_size: 6,
                feature_dim: 5,
                max_steps: 3,
                aligned_fraction: 0.5,
                min_log10_p: -2.0,
                max_p: 0.9,
            },
            seed,
        )
        .unwrap()
    }

    fn config() -> TrainerConfig {
        TrainerConfig {
            batch_size_m: 8,
            base_rollout_n: 8,
            clip_epsilon: 0.2,
            learning_rate: 0.05,
            ppo_splits: 2,
            ppo_epochs: 1,
            dars: None,
            advantage_mode: AdvantageMode::NoStd,
            group_norm: GroupNorm::Merged,
            total_steps: 3,
            seed: 1,
        }
    }

    #[test]
    fn test_batches_are_without_replacement_and_cycle() {
        for step in 0..20 {
            let b = batch_for_step(10, 4, 7, step).unwrap();
            let mut ids: Vec<u32> = b.iter().map(|p| p.0).collect();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), 4);
        }
        let mut seen: Vec<u32> = (0..5).flat_map(|s| batch_for_step(10, 2, 7, s).unwrap()).map(|p| p.0).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert!(batch_for_step(10, 11, 7, 0).is_err());
    }

    #[test]
    fn test_regimes() {
        let mut c = config();
        assert_eq!(c.regime(), Regime::MiniBatch);
        c.ppo_splits = 1;
        c.ppo_epochs = 2;
        assert_eq!(c.regime(), Regime::FullBatch);
        c.ppo_splits = 9;
        assert!(c.validate().is_err());
    }

    #[test]
    fn test_importance_ratio_examples() {
        let suite = small_suite(4, 2);
        let policy = Policy::for_suite(&suite);
        let problem = &suite.problems()[0];
        let traj = sample_trajectory(&policy, problem, &mut stream(Purpose::Train, &[0]));
        for t in 0..traj.tokens.len() {
            assert!((importance_ratio(&policy, problem, &traj, t).unwrap() - 1.0).abs() < 1e-15);
        }
        let mut shifted = traj.clone();
        shifted.logprobs_old[0] -= 2f64.ln();
        assert!((importance_ratio(&policy, problem, &shifted, 0).unwrap() - 2.0).abs() < 1e-12);
        shifted.logprobs_old[0] = -1e6;
        assert!(matches!(
            importance_ratio(&policy, problem, &shifted, 0),
            Err(Error::NumericalOverflow(_))
        ));
    }

    #[test]
    fn test_zero_learning_rate_is_identity() {
        let suite = small_suite(16, 3);
        let mut c = config();
        c.learning_rate = 0.0;
        c.total_steps = 4;
        let mut rng = stream(Purpose::Teacher, &[77]);
        let weights = (0..suite.feature_dim * suite.vocab_size)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let start = Policy::from_weights(suite.feature_dim, suite.vocab_size, weights).unwrap();
        let options = RunOptions {
            eval: Some(EvalSchedule {
                config: EvalConfig {
                    samples_per_problem_n: 8,
                    k_values: vec![1, 8],
                    eval_seed: 0,
                },
                every: 1,
            }),
            checkpoint_every: None,
            resume: Some(Checkpoint {
                step: 0,
                run_seed: c.seed,
                suite_seed: suite.seed,
                cumulative_rollouts: 0,
                policy: start.clone(),
            }),
        };
        let out = run_training(&c, &suite, &options, &mut ()).unwrap();
        assert_eq!(out.policy, start);
        let h: Vec<f64> = out.evaluations.iter().map(|e| e.mean_token_entropy).collect();
        assert_eq!(h.len(), 4);
        assert!(h.iter().all(|&x| x == h[0]));
        assert!(h[0] < (suite.vocab_size as f64).ln());
    }

    #[test]
    fn test_first_update_is_clip_inert() {
        let suite = small_suite(16, 3);
        let out = train_iteration(&Policy::for_suite(&suite), &suite, &config(), 0, 0).unwrap();
        let first = out.metrics.update_stats[0];
        assert_eq!(first.clip_fraction, 0.0);
        assert_eq!(out.metrics.update_stats.len(), 2);
    }

    #[test]
    fn test_solved_suite_gives_zero_gradient() {
        let problems = (0..4)
            .map(|i| Problem::new(ProblemId(i), vec![(0..3).collect(); 2], vec![0.3; 4], 2).unwrap())
            .collect();
        let suite = TaskSuite::from_problems(problems, 3, 2, 0).unwrap();
        let mut c = config();
        c.batch_size_m = 4;
        let start = Policy::for_suite(&suite);
        let out = train_iteration(&start, &suite, &c, 0, 0).unwrap();
        assert_eq!(out.policy, start);
        assert_eq!(out.metrics.zero_gradient_group_fraction, 1.0);
        assert!(out.metrics.update_stats.iter().all(|u| u.grad_norm == 0.0));
    }

    #[test]
    fn test_dars_rollout_accounting() {
        let suite = small_suite(16, 6);
        let mut c = config();
        c.dars = Some(DarsConfig::new(ScheduleKind::EqualTreatment, 8, 32));
        let out = train_iteration(&Policy::for_suite(&suite), &suite, &c, 0, 0).unwrap();
        for e in &out.plan.entries {
            if e.a_hat >= 0.5 {
                assert_eq!(e.delta_n, 0);
            }
        }
        assert_eq!(out.metrics.rollouts, 8 * c.batch_size_m + out.plan.total_extra);
        assert_eq!(out.metrics.avg_rollouts_per_prompt, out.plan.avg_rollouts_per_prompt);
    }

    #[test]
    fn test_regimes_use_same_rollouts_without_dars() {
        let suite = small_suite(16, 5);
        let mut mini = config();
        mini.total_steps = 2;
        let mut full = mini.clone();
        full.ppo_splits = 1;
        full.ppo_epochs = 2;
        let a = run_training(&mini, &suite, &RunOptions::default(), &mut ()).unwrap();
        let b = run_training(&full, &suite, &RunOptions::default(), &mut ()).unwrap();
        assert_eq!(a.metrics[0].rollouts, b.metrics[0].rollouts);
        assert_eq!(a.metrics[1].cumulative_rollouts, b.metrics[1].cumulative_rollouts);
        let updates = |o: &TrainingOutcome| o.metrics.iter().map(|m| m.update_stats.len()).collect::<Vec<_>>();
        assert_eq!(updates(&a), vec![2, 2]);
        assert_eq!(updates(&b), vec![2, 2]);
    }

    #[test]
    fn test_total_steps_zero_returns_initial_policy() {
        let suite = small_suite(8, 1);
        let mut c = config();
        c.total_steps = 0;
        let out = run_training(&c, &suite, &RunOptions::default(), &mut ()).unwrap();
        assert_eq!(out.policy, Policy::for_suite(&suite));
        assert!(out.metrics.is_empty());
    }

    #[test]
    fn test_empty_batch_is_an_error() {
        let suite = small_suite(4, 1);
        let policy = Policy::for_suite(&suite);
        assert_eq!(clipped_surrogate(&policy, &suite, &[], 0.2), Err(Error::EmptyBatch));
    }

    #[test]
    fn test_nominal_normalization_scales_enlarged_groups() {
        let suite = small_suite(8, 2);
        let mut c = config();
        c.dars = Some(DarsConfig::new(ScheduleKind::EqualTreatment, 8, 16));
        let policy = Policy::for_suite(&suite);
        let merged = train_iteration(&policy, &suite, &c, 0, 0).unwrap();
        c.group_norm = GroupNorm::Nominal;
        let nominal = train_iteration(&policy, &suite, &c, 0, 0).unwrap();
        assert_eq!(merged.plan, nominal.plan);
        assert_eq!(merged.metrics.rollouts, nominal.metrics.rollouts);

        let problem = &suite.problems()[0];
        let mut rng = stream(Purpose::Train, &[9]);
        let trajs: Vec<Trajectory> = (0..12).map(|_| sample_trajectory(&policy, problem, &mut rng)).collect();
        let mut group = Group::new(problem.id, trajs, AdvantageMode::NoStd).unwrap();
        group.advantages.iter_mut().enumerate().for_each(|(i, a)| *a = i as f64 - 5.5);
        let full = surrogate_gradient(&policy, &suite, std::slice::from_ref(&group), 0.2).unwrap();
        group.normalizer = 8;
        let scaled = surrogate_gradient(&policy, &suite, std::slice::from_ref(&group), 0.2).unwrap();
        for (a, b) in full.iter().zip(&scaled) {
            assert!((a * 12.0 / 8.0 - b).abs() < 1e-12);
        }
        assert_eq!("nominal".parse::<GroupNorm>(), Ok(GroupNorm::Nominal));
        assert!("both".parse::<GroupNorm>().is_err());
    }
}
