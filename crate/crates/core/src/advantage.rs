//! Group-relative advantages for binary verifiable rewards.
//!
//! For a group of `n` rollouts with `c` successes the group mean is `u = c / n`.
//! The no-std variant uses `r_i - u`; the std variant divides by the population
//! standard deviation `sqrt(u (1 - u))`. The cumulative advantage of a group is
//! `sum_i |A_i|`, which for binary rewards collapses to `2 n u (1 - u)` (no-std)
//! and `2 n sqrt(u (1 - u))` (std).

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Group standard deviation divides by the group size, not `n - 1`.
pub const POPULATION_STD: bool = true;

/// Exact rational type used wherever binary counts make exactness possible.
pub type Rational = Ratio<i64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantageMode {
    /// `r_i - u`
    NoStd,
    /// `(r_i - u) / sigma`
    Std,
}

impl AdvantageMode {
    pub fn name(self) -> &'static str {
        match self {
            AdvantageMode::NoStd => "no-std",
            AdvantageMode::Std => "std",
        }
    }
}

impl std::str::FromStr for AdvantageMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "no-std" | "nostd" => Ok(AdvantageMode::NoStd),
            "std" => Ok(AdvantageMode::Std),
            other => Err(format!("unknown advantage mode `{other}` (expected no-std or std)")),
        }
    }
}

/// Binary rewards of one group, in rollout order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewardGroup {
    rewards: Vec<u8>,
}

impl RewardGroup {
    pub fn new(rewards: Vec<u8>) -> Result<Self> {
        if rewards.is_empty() {
            return Err(Error::EmptyGroup);
        }
        if let Some(&bad) = rewards.iter().find(|&&r| r > 1) {
            return Err(Error::InvalidReward(bad));
        }
        Ok(Self { rewards })
    }

    pub fn from_bools(rewards: &[bool]) -> Result<Self> {
        Self::new(rewards.iter().map(|&r| u8::from(r)).collect())
    }

    pub fn rewards(&self) -> &[u8] {
        &self.rewards
    }

    pub fn group_size(&self) -> usize {
        self.rewards.len()
    }

    pub fn successes(&self) -> usize {
        self.rewards.iter().filter(|&&r| r == 1).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStats {
    pub successes: usize,
    pub size: usize,
    pub mean_u: f64,
    pub std_sigma: f64,
}

impl GroupStats {
    pub fn mean_exact(&self) -> Rational {
        Rational::new(self.successes as i64, self.size as i64)
    }

    /// All rewards identical: no learning signal under either mode.
    pub fn is_degenerate(&self) -> bool {
        self.successes == 0 || self.successes == self.size
    }
}

pub fn group_stats(group: &RewardGroup) -> GroupStats {
    let size = group.group_size();
    let successes = group.successes();
    let mean_u = successes as f64 / size as f64;
    // u (1 - u) in integer form keeps sigma exactly 0 for degenerate groups.
    let var_num = (successes * (size - successes)) as f64;
    let std_sigma = (var_num / (size * size) as f64).sqrt();
    GroupStats {
        successes,
        size,
        mean_u,
        std_sigma,
    }
}

/// Per-rollout advantages, index-aligned with the source group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageVector(pub Vec<f64>);

impl AdvantageVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn cumulative(&self) -> f64 {
        self.0.iter().map(|a| a.abs()).sum()
    }
}

pub fn advantages(group: &RewardGroup, mode: AdvantageMode) -> AdvantageVector {
    let stats = group_stats(group);
    let n = stats.size as f64;
    let c = stats.successes as f64;
    // (n r_i - c) / n is correctly rounded, unlike r_i - c / n.
    let centered = group.rewards().iter().map(|&r| (n * f64::from(r) - c) / n);
    let values = match mode {
        AdvantageMode::NoStd => centered.collect(),
        AdvantageMode::Std if stats.std_sigma == 0.0 => vec![0.0; stats.size],
        AdvantageMode::Std => centered.map(|a| a / stats.std_sigma).collect(),
    };
    AdvantageVector(values)
}

/// No-std advantages in exact rational arithmetic.
pub fn advantages_exact(group: &RewardGroup) -> Vec<Rational> {
    let mean = group_stats(group).mean_exact();
    group
        .rewards()
        .iter()
        .map(|&r| Rational::from_integer(i64::from(r)) - mean)
        .collect()
}

pub fn cumulative_advantage_empirical(group: &RewardGroup, mode: AdvantageMode) -> f64 {
    advantages(group, mode).cumulative()
}

pub fn cumulative_advantage_empirical_exact(group: &RewardGroup) -> Rational {
    advantages_exact(group)
        .into_iter()
        .fold(Rational::from_integer(0), |acc, a| acc + num_traits::Signed::abs(&a))
}

pub fn cumulative_advantage_closed_form(size_n: usize, accuracy_u: f64, mode: AdvantageMode) -> Result<f64> {
    if !(0.0..=1.0).contains(&accuracy_u) {
        return Err(Error::InvalidAccuracy(accuracy_u));
    }
    let spread = accuracy_u * (1.0 - accuracy_u);
    let n = size_n as f64;
    Ok(match mode {
        AdvantageMode::NoStd => 2.0 * n * spread,
        AdvantageMode::Std => 2.0 * n * spread.sqrt(),
    })
}

/// `2 n u (1 - u)` for a rational accuracy.
pub fn cumulative_advantage_closed_form_exact(size_n: usize, accuracy_u: Rational) -> Result<Rational> {
    let one = Rational::from_integer(1);
    if accuracy_u < Rational::from_integer(0) || accuracy_u > one {
        return Err(Error::InvalidAccuracy(ratio_to_f64(accuracy_u)));
    }
    Ok(Rational::from_integer(2 * size_n as i64) * accuracy_u * (one - accuracy_u))
}

pub fn ratio_to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub u: f64,
    pub value: f64,
}

/// Closed-form cumulative advantage sampled at `u = k / resolution`, `k = 0..=resolution`.
pub fn cumulative_advantage_curve(
    mode: AdvantageMode,
    size_n: usize,
    resolution: usize,
) -> Result<Vec<CurvePoint>> {
    if resolution < 2 {
        return Err(Error::InvalidConfig(format!(
            "curve resolution must be at least 2, got {resolution}"
        )));
    }
    (0..=resolution)
        .map(|k| {
            let u = k as f64 / resolution as f64;
            cumulative_advantage_closed_form(size_n, u, mode).map(|value| CurvePoint { u, value })
        })
        .collect()
}
