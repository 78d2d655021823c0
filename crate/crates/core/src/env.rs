//! Synthetic verifiable-reward tasks and a shared linear-softmax policy.
//!
//! A problem is a fixed-length token sequence task: at step `t` the policy
//! sees a feature vector and emits one of `V` tokens, and the verifier accepts
//! the trajectory iff every token lies in that step's accepted set. Most
//! problems are "aligned": their accepted sets are the top tokens of a hidden
//! linear teacher, so skill transfers across problems. The rest use random
//! accepted sets that a shared policy can only fit by memorising.

use std::fmt::{self, Write as _};

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProblemId(pub u32);

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub num_problems: usize,
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub max_steps: usize,
    /// Fraction of problems whose accepted sets follow the hidden teacher.
    pub aligned_fraction: f64,
    /// Uniform-policy solvability is drawn log-uniformly from
    /// `[10^min_log10_p, max_p]` before rounding to whole accepted sets.
    pub min_log10_p: f64,
    pub max_p: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            num_problems: 512,
            vocab_size: 16,
            feature_dim: 32,
            max_steps: 6,
            aligned_fraction: 0.75,
            min_log10_p: -5.0,
            max_p: 0.95,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.vocab_size < 2 || self.vocab_size > u16::MAX as usize {
            return bad(format!("vocab_size must be in [2, 65535], got {}", self.vocab_size));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if self.num_problems == 0 || self.num_problems > u32::MAX as usize {
            return bad(format!("num_problems must be positive, got {}", self.num_problems));
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.aligned_fraction) {
            return bad(format!("aligned_fraction {} is outside [0, 1]", self.aligned_fraction));
        }
        if !(self.max_p > 0.0 && self.max_p <= 1.0) || !(self.min_log10_p <= self.max_p.log10()) {
            return bad(format!(
                "solvability range [1e{}, {}] is empty",
                self.min_log10_p, self.max_p
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub id: ProblemId,
    /// Sorted, duplicate-free accepted tokens per step.
    pub accepted: Vec<Vec<u16>>,
    features: Vec<f64>,
    feature_dim: usize,
}

impl Problem {
    /// `features` is row-major `num_steps x feature_dim`.
    pub fn new(id: ProblemId, mut accepted: Vec<Vec<u16>>, features: Vec<f64>, feature_dim: usize) -> Result<Self> {
        if accepted.is_empty() {
            return Err(Error::InvalidConfig(format!("problem {id} has no steps")));
        }
        if features.len() != accepted.len() * feature_dim {
            return Err(Error::InvalidConfig(format!(
                "problem {id}: {} feature values for {} steps of dimension {feature_dim}",
                features.len(),
                accepted.len()
            )));
        }
        for set in &mut accepted {
            set.sort_unstable();
            set.dedup();
        }
        Ok(Self {
            id,
            accepted,
            features,
            feature_dim,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.accepted.len()
    }

    pub fn features(&self, step: usize) -> &[f64] {
        &self.features[step * self.feature_dim..(step + 1) * self.feature_dim]
    }

    pub fn accepts(&self, step: usize, token: u16) -> bool {
        self.accepted[step].binary_search(&token).is_ok()
    }

    /// The verifier: every token must be in its step's accepted set.
    pub fn verify(&self, tokens: &[u16]) -> bool {
        tokens.len() == self.num_steps() && tokens.iter().enumerate().all(|(t, &tok)| self.accepts(t, tok))
    }

    pub fn uniform_success_probability(&self, vocab_size: usize) -> f64 {
        self.accepted
            .iter()
            .map(|s| s.len() as f64 / vocab_size as f64)
            .product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSuite {
    problems: Vec<Problem>,
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub max_steps: usize,
    pub seed: u64,
}

fn step_features(seed: u64, id: ProblemId, step: usize, dim: usize) -> Vec<f64> {
    let mut rng = stream(Purpose::Features, &[seed, u64::from(id.0), step as u64]);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn teacher_weights(seed: u64, dim: usize, vocab: usize) -> Vec<f64> {
    let mut rng = stream(Purpose::Teacher, &[seed]);
    (0..dim * vocab).map(|_| rng.sample(StandardNormal)).collect()
}

fn top_tokens(logits: &[f64], count: usize) -> Vec<u16> {
    let mut order: Vec<u16> = (0..logits.len() as u16).collect();
    order.sort_by(|&a, &b| logits[b as usize].total_cmp(&logits[a as usize]).then(a.cmp(&b)));
    order.truncate(count);
    order.sort_unstable();
    order
}

impl TaskSuite {
    pub fn generate(config: &SuiteConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let v = config.vocab_size;
        let d = config.feature_dim;
        let teacher = Policy::from_weights(d, v, teacher_weights(seed, d, v))?;
        let ln_lo = config.min_log10_p * std::f64::consts::LN_10;
        let ln_hi = config.max_p.ln();
        let ln_step = -(v as f64).ln();

        let problems = (0..config.num_problems)
            .map(|i| {
                let id = ProblemId(i as u32);
                let mut rng = stream(Purpose::SuiteLayout, &[seed, i as u64]);
                let aligned = rng.gen_bool(config.aligned_fraction);
                let ln_p = if ln_hi > ln_lo { rng.gen_range(ln_lo..=ln_hi) } else { ln_hi };
                // Enough steps that single-token sets can reach the target.
                let min_steps = ((ln_p / ln_step).ceil() as usize).clamp(1, config.max_steps);
                let steps = rng.gen_range(min_steps..=config.max_steps);
                let per_step = (ln_p / steps as f64).exp() * v as f64;

                let features: Vec<f64> = (0..steps).flat_map(|t| step_features(seed, id, t, d)).collect();
                let accepted = (0..steps)
                    .map(|t| {
                        let frac = per_step.fract();
                        let size = per_step.floor() as usize + usize::from(rng.gen_bool(frac));
                        let size = size.clamp(1, v);
                        if aligned {
                            let logits = teacher.logits(&features[t * d..(t + 1) * d]);
                            top_tokens(&logits, size)
                        } else {
                            let mut set: Vec<u16> =
                                index::sample(&mut rng, v, size).into_iter().map(|x| x as u16).collect();
                            set.sort_unstable();
                            set
                        }
                    })
                    .collect();
                Problem::new(id, accepted, features, d)
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            problems,
            vocab_size: v,
            feature_dim: d,
            max_steps: config.max_steps,
            seed,
        })
    }

    /// Assemble a suite from hand-built problems. Ids must be `0..len` in order.
    pub fn from_problems(problems: Vec<Problem>, vocab_size: usize, feature_dim: usize, seed: u64) -> Result<Self> {
        for (i, p) in problems.iter().enumerate() {
            if p.id.0 as usize != i {
                return Err(Error::InvalidConfig(format!("problem at index {i} has id {}", p.id)));
            }
            if p.feature_dim != feature_dim {
                return Err(Error::InvalidConfig(format!("problem {} has feature_dim {}", p.id, p.feature_dim)));
            }
            if p.accepted.iter().flatten().any(|&t| t as usize >= vocab_size) {
                return Err(Error::InvalidConfig(format!("problem {} accepts a token outside the vocabulary", p.id)));
            }
        }
        if problems.is_empty() {
            return Err(Error::InvalidConfig("a suite needs at least one problem".into()));
        }
        let max_steps = problems.iter().map(Problem::num_steps).max().unwrap_or(0);
        Ok(Self {
            problems,
            vocab_size,
            feature_dim,
            max_steps,
            seed,
        })
    }

    pub fn problems(&self) -> &[Problem] {
        &self.problems
    }

    pub fn problem(&self, id: ProblemId) -> Option<&Problem> {
        self.problems.get(id.0 as usize)
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }

    /// Line-oriented export. Features are not written; they are a function of
    /// the seed and are regenerated on import.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "rlvr-suite 1");
        let _ = writeln!(
            out,
            "V {} d {} T_max {} seed {} problems {}",
            self.vocab_size,
            self.feature_dim,
            self.max_steps,
            self.seed,
            self.problems.len()
        );
        for p in &self.problems {
            let _ = write!(out, "{} {}", p.id, p.num_steps());
            for set in &p.accepted {
                let joined: Vec<String> = set.iter().map(u16::to_string).collect();
                let _ = write!(out, " [{}]", joined.join(","));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let fail = |line: usize, reason: &str| Error::SuiteFormat {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, "rlvr-suite 1")) => {}
            _ => return Err(fail(1, "expected `rlvr-suite 1`")),
        }
        let (ln, header) = lines.next().ok_or_else(|| fail(2, "missing header"))?;
        let fields: Vec<&str> = header.split(' ').collect();
        let keys = ["V", "d", "T_max", "seed", "problems"];
        if fields.len() != 10 || fields.iter().step_by(2).zip(keys).any(|(f, k)| *f != k) {
            return Err(fail(ln, "expected `V <n> d <n> T_max <n> seed <n> problems <n>`"));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| fail(ln, &format!("bad number `{s}`")));
        let vocab_size = num(fields[1])? as usize;
        let feature_dim = num(fields[3])? as usize;
        let max_steps = num(fields[5])? as usize;
        let seed = num(fields[7])?;
        let count = num(fields[9])? as usize;

        let mut problems = Vec::with_capacity(count);
        for (ln, line) in lines {
            let mut parts = line.split(' ');
            let id = parts
                .next()
                .and_then(|s| s.parse::<u32>().ok())
                .ok_or_else(|| fail(ln, "bad problem id"))?;
            let steps = parts
                .next()
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| fail(ln, "bad step count"))?;
            let accepted = parts
                .map(|set| {
                    let inner = set
                        .strip_prefix('[')
                        .and_then(|s| s.strip_suffix(']'))
                        .ok_or_else(|| fail(ln, &format!("bad accepted set `{set}`")))?;
                    if inner.is_empty() {
                        return Ok(Vec::new());
                    }
                    inner
                        .split(',')
                        .map(|t| t.parse::<u16>().map_err(|_| fail(ln, &format!("bad token `{t}`"))))
                        .collect::<Result<Vec<u16>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            if accepted.len() != steps || steps == 0 || steps > max_steps {
                return Err(fail(ln, "step count does not match accepted sets"));
            }
            if accepted.iter().any(|s| s.windows(2).any(|w| w[0] >= w[1])) {
                return Err(fail(ln, "accepted sets must be sorted and duplicate-free"));
            }
            let pid = ProblemId(id);
            let features = (0..steps).flat_map(|t| step_features(seed, pid, t, feature_dim)).collect();
            problems.push(Problem::new(pid, accepted, features, feature_dim).map_err(|e| fail(ln, &e.to_string()))?);
        }
        if problems.len() != count {
            return Err(fail(0, &format!("header promises {count} problems, found {}", problems.len())));
        }
        let mut suite = Self::from_problems(problems, vocab_size, feature_dim, seed)?;
        suite.max_steps = max_steps;
        Ok(suite)
    }
}

/// Linear-softmax policy: `logits = W^T f`, with `W` stored row-major `d x V`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub feature_dim: usize,
    pub vocab_size: usize,
    pub weights: Vec<f64>,
}

impl Policy {
    pub fn zeros(feature_dim: usize, vocab_size: usize) -> Self {
        Self {
            feature_dim,
            vocab_size,
            weights: vec![0.0; feature_dim * vocab_size],
        }
    }

    pub fn for_suite(suite: &TaskSuite) -> Self {
        Self::zeros(suite.feature_dim, suite.vocab_size)
    }

    pub fn from_weights(feature_dim: usize, vocab_size: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != feature_dim * vocab_size {
            return Err(Error::InvalidConfig(format!(
                "{} weights for a {feature_dim} x {vocab_size} policy",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NumericalOverflow("non-finite policy weight".into()));
        }
        Ok(Self {
            feature_dim,
            vocab_size,
            weights,
        })
    }

    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        let v = self.vocab_size;
        let mut out = vec![0.0; v];
        for (row, &f) in self.weights.chunks_exact(v).zip(features) {
            for (o, &w) in out.iter_mut().zip(row) {
                *o += f * w;
            }
        }
        out
    }

    pub fn distribution(&self, features: &[f64]) -> Vec<f64> {
        let mut p = self.logits(features);
        softmax_in_place(&mut p);
        p
    }
}

pub fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    for l in logits.iter_mut() {
        *l /= total;
    }
}

/// Shannon entropy in nats.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

pub fn policy_step_distribution(policy: &Policy, problem: &Problem, step: usize) -> Vec<f64> {
    policy.distribution(problem.features(step))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub problem_id: ProblemId,
    pub tokens: Vec<u16>,
    /// Log-probabilities under the sampling policy, frozen for the iteration.
    pub logprobs_old: Vec<f64>,
    pub reward: u8,
    pub per_step_entropy: Vec<f64>,
}

pub fn sample_trajectory<R: Rng + ?Sized>(policy: &Policy, problem: &Problem, rng: &mut R) -> Trajectory {
    let steps = problem.num_steps();
    let mut tokens = Vec::with_capacity(steps);
    let mut logprobs_old = Vec::with_capacity(steps);
    let mut per_step_entropy = Vec::with_capacity(steps);
    for t in 0..steps {
        let probs = policy_step_distribution(policy, problem, t);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        // Falls back to the last token if rounding leaves u above the total mass.
        let mut token = probs.len() - 1;
        for (v, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                token = v;
                break;
            }
        }
        tokens.push(token as u16);
        logprobs_old.push(probs[token].ln());
        per_step_entropy.push(entropy(&probs));
    }
    let reward = u8::from(problem.verify(&tokens));
    Trajectory {
        problem_id: problem.id,
        tokens,
        logprobs_old,
        reward,
        per_step_entropy,
    }
}

/// Exact probability that a sampled trajectory passes the verifier.
pub fn success_probability(policy: &Policy, problem: &Problem) -> f64 {
    (0..problem.num_steps())
        .map(|t| {
            let probs = policy_step_distribution(policy, problem, t);
            problem.accepted[t].iter().map(|&v| probs[v as usize]).sum::<f64>()
        })
        .product::<f64>()
        .clamp(0.0, 1.0)
}

/// Mean step-distribution entropy over every (problem, step) pair.
pub fn mean_token_entropy<'a>(policy: &Policy, problems: impl IntoIterator<Item = &'a Problem>) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for p in problems {
        for t in 0..p.num_steps() {
            total += entropy(&policy_step_distribution(policy, p, t));
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}
