//! Difficulty-adaptive rollout sampling.
//!
//! Phase 1 draws `k0` rollouts per problem and estimates its accuracy `a`.
//! Phase 2 tops up hard problems with `dn` extra rollouts so that their
//! cumulative advantage reaches a schedule-dependent target:
//!
//! * equal treatment (ET): `dn = ceil((A(0.5) - A(a)) / S(a))` for `a < 0.5`
//! * hardness weighted (HW): `dn = ceil((2 (1 - a) A(0.5) - A(a)) / S(a))`
//!
//! where `A` is the closed-form group cumulative advantage at the base rollout
//! size and `S(a) = 2 a (1 - a)` is the cumulative advantage one extra rollout
//! adds. Both are capped by `n_max`, which bounds the increment, not the total.

use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::advantage::{
    cumulative_advantage_closed_form, ratio_to_f64, AdvantageMode, CurvePoint, Rational,
    RewardGroup,
};
use crate::env::ProblemId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScheduleKind {
    #[serde(rename = "et")]
    EqualTreatment,
    #[serde(rename = "hw")]
    HardnessWeighted,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::EqualTreatment => "et",
            ScheduleKind::HardnessWeighted => "hw",
        }
    }
}

impl std::str::FromStr for ScheduleKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "et" | "equal-treatment" => Ok(ScheduleKind::EqualTreatment),
            "hw" | "hardness-weighted" => Ok(ScheduleKind::HardnessWeighted),
            other => Err(format!("unknown schedule `{other}` (expected et or hw)")),
        }
    }
}

/// Linear decay of the extra-rollout cap over training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anneal {
    pub start_n_max: usize,
    pub end_n_max: usize,
    pub total_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DarsConfig {
    pub base_rollout_n: usize,
    pub phase1_k0: usize,
    pub n_max: usize,
    pub schedule: ScheduleKind,
    pub advantage_mode: AdvantageMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anneal: Option<Anneal>,
}

impl DarsConfig {
    pub fn new(schedule: ScheduleKind, base_rollout_n: usize, n_max: usize) -> Self {
        Self {
            base_rollout_n,
            phase1_k0: base_rollout_n,
            n_max,
            schedule,
            advantage_mode: AdvantageMode::NoStd,
            anneal: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_rollout_n == 0 {
            return Err(Error::InvalidConfig("dars base_rollout_n must be positive".into()));
        }
        if self.phase1_k0 == 0 {
            return Err(Error::InvalidConfig("dars phase1_k0 must be positive".into()));
        }
        if let Some(a) = self.anneal {
            if a.start_n_max < a.end_n_max {
                return Err(Error::InvalidConfig(format!(
                    "anneal start_n_max {} is below end_n_max {}",
                    a.start_n_max, a.end_n_max
                )));
            }
            if a.start_n_max > self.n_max {
                return Err(Error::InvalidConfig(format!(
                    "anneal start_n_max {} exceeds n_max {}",
                    a.start_n_max, self.n_max
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DifficultyEstimate {
    pub problem_id: ProblemId,
    pub phase1_k0: usize,
    pub successes: usize,
}

impl DifficultyEstimate {
    pub fn new(problem_id: ProblemId, phase1_k0: usize, successes: usize) -> Result<Self> {
        if phase1_k0 == 0 || successes > phase1_k0 {
            return Err(Error::InvalidCounts {
                samples: phase1_k0,
                successes,
            });
        }
        Ok(Self {
            problem_id,
            phase1_k0,
            successes,
        })
    }

    pub fn accuracy_exact(&self) -> Rational {
        Rational::new(self.successes as i64, self.phase1_k0 as i64)
    }

    pub fn accuracy(&self) -> f64 {
        self.successes as f64 / self.phase1_k0 as f64
    }

    pub fn difficulty(&self) -> f64 {
        (self.phase1_k0 - self.successes) as f64 / self.phase1_k0 as f64
    }
}

pub fn estimate_difficulty(problem_id: ProblemId, phase1_rewards: &RewardGroup) -> DifficultyEstimate {
    DifficultyEstimate {
        problem_id,
        phase1_k0: phase1_rewards.group_size(),
        successes: phase1_rewards.successes(),
    }
}

/// `S(a) = 2 a (1 - a)`.
pub fn s_weight(accuracy: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(Error::InvalidAccuracy(accuracy));
    }
    Ok(2.0 * accuracy * (1.0 - accuracy))
}

fn closed_form(n: usize, u: f64, mode: AdvantageMode) -> f64 {
    cumulative_advantage_closed_form(n, u.clamp(0.0, 1.0), mode).unwrap_or(0.0)
}

pub fn target_cumulative_advantage(
    schedule: ScheduleKind,
    estimate: &DifficultyEstimate,
    config: &DarsConfig,
) -> f64 {
    let medium = closed_form(config.base_rollout_n, 0.5, config.advantage_mode);
    match schedule {
        ScheduleKind::EqualTreatment => medium,
        ScheduleKind::HardnessWeighted => 2.0 * (1.0 - estimate.difficulty()) * medium,
    }
}

/// Pre-ceiling allocation `numerator / S(a)`.
///
/// `Unbounded` means `S(a) = 0` with a positive numerator: no finite number
/// of extra rollouts reaches the target and the cap decides. ET returns zero for
/// `a >= 0.5`. Negative values are returned as-is; callers clamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RawAllocation {
    Exact(Rational),
    Approx(f64),
    Unbounded,
}

impl RawAllocation {
    pub fn to_f64(self) -> f64 {
        match self {
            RawAllocation::Exact(r) => ratio_to_f64(r),
            RawAllocation::Approx(x) => x,
            RawAllocation::Unbounded => f64::INFINITY,
        }
    }

    /// Ceiling clamped below at zero; `None` when unbounded.
    pub fn rollouts(self) -> Option<u64> {
        match self {
            RawAllocation::Exact(r) if r <= Rational::zero() => Some(0),
            RawAllocation::Exact(r) => r.ceil().to_integer().to_u64(),
            RawAllocation::Approx(x) if x <= 0.0 => Some(0),
            RawAllocation::Approx(x) => {
                // A float that lands a hair above an integer is that integer.
                let nearest = x.round();
                let snapped = if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
                    nearest
                } else {
                    x.ceil()
                };
                Some(snapped as u64)
            }
            RawAllocation::Unbounded => None,
        }
    }
}

pub fn raw_extra_rollouts(
    schedule: ScheduleKind,
    estimate: &DifficultyEstimate,
    config: &DarsConfig,
) -> RawAllocation {
    let a = estimate.accuracy_exact();
    let half = Rational::new(1, 2);
    if schedule == ScheduleKind::EqualTreatment && a >= half {
        return RawAllocation::Exact(Rational::zero());
    }
    let one = Rational::from_integer(1);
    let s = Rational::from_integer(2) * a * (one - a);
    let n = config.base_rollout_n;

    match config.advantage_mode {
        AdvantageMode::NoStd => {
            let cum = |u: Rational| Rational::from_integer(2 * n as i64) * u * (one - u);
            let numerator = match schedule {
                ScheduleKind::EqualTreatment => cum(half) - cum(a),
                ScheduleKind::HardnessWeighted => {
                    Rational::from_integer(2) * (one - a) * cum(half) - cum(a)
                }
            };
            if s.is_zero() {
                if numerator > Rational::zero() {
                    RawAllocation::Unbounded
                } else {
                    RawAllocation::Exact(Rational::zero())
                }
            } else {
                RawAllocation::Exact(numerator / s)
            }
        }
        AdvantageMode::Std => {
            let af = ratio_to_f64(a);
            let medium = closed_form(n, 0.5, AdvantageMode::Std);
            let current = closed_form(n, af, AdvantageMode::Std);
            let numerator = match schedule {
                ScheduleKind::EqualTreatment => medium - current,
                ScheduleKind::HardnessWeighted => 2.0 * (1.0 - af) * medium - current,
            };
            if s.is_zero() {
                if numerator > 0.0 {
                    RawAllocation::Unbounded
                } else {
                    RawAllocation::Exact(Rational::zero())
                }
            } else {
                RawAllocation::Approx(numerator / ratio_to_f64(s))
            }
        }
    }
}

pub fn extra_rollouts(
    schedule: ScheduleKind,
    estimate: &DifficultyEstimate,
    config: &DarsConfig,
    effective_n_max: usize,
) -> usize {
    match raw_extra_rollouts(schedule, estimate, config).rollouts() {
        Some(dn) => dn.min(effective_n_max as u64) as usize,
        None => effective_n_max,
    }
}

pub fn anneal_n_max(step: usize, config: &DarsConfig) -> usize {
    let Some(a) = config.anneal else {
        return config.n_max;
    };
    if a.total_steps == 0 {
        return a.end_n_max;
    }
    let progress = step.min(a.total_steps) as f64 / a.total_steps as f64;
    let start = a.start_n_max as f64;
    let end = a.end_n_max as f64;
    let value = (start + (end - start) * progress).round();
    (value as usize).clamp(a.end_n_max, a.start_n_max)
}

/// One audit row of an allocation plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AllocationEntry {
    pub problem_id: ProblemId,
    pub k0: usize,
    pub successes: usize,
    pub a_hat: f64,
    pub delta_n: usize,
    pub effective_n_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationPlan {
    /// Sorted by problem id.
    pub entries: Vec<AllocationEntry>,
    pub total_extra: usize,
    pub avg_rollouts_per_prompt: f64,
}

impl AllocationPlan {
    pub fn extra_for(&self, problem_id: ProblemId) -> Option<usize> {
        self.entries
            .binary_search_by_key(&problem_id, |e| e.problem_id)
            .ok()
            .map(|i| self.entries[i].delta_n)
    }
}

pub fn build_allocation_plan(
    estimates: &[DifficultyEstimate],
    config: &DarsConfig,
    step: usize,
) -> Result<AllocationPlan> {
    if estimates.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let cap = anneal_n_max(step, config);
    let mut entries: Vec<AllocationEntry> = estimates
        .iter()
        .map(|e| AllocationEntry {
            problem_id: e.problem_id,
            k0: e.phase1_k0,
            successes: e.successes,
            a_hat: e.accuracy(),
            delta_n: extra_rollouts(config.schedule, e, config, cap),
            effective_n_max: cap,
        })
        .collect();
    entries.sort_by_key(|e| e.problem_id);
    let total_extra: usize = entries.iter().map(|e| e.delta_n).sum();
    let phase1: usize = entries.iter().map(|e| e.k0).sum();
    let avg_rollouts_per_prompt = (phase1 + total_extra) as f64 / entries.len() as f64;
    Ok(AllocationPlan {
        entries,
        total_extra,
        avg_rollouts_per_prompt,
    })
}

/// Accounting for an iteration without phase 2: every problem keeps its `k0`.
pub fn phase1_only_plan(estimates: &[DifficultyEstimate]) -> Result<AllocationPlan> {
    if estimates.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut entries: Vec<AllocationEntry> = estimates
        .iter()
        .map(|e| AllocationEntry {
            problem_id: e.problem_id,
            k0: e.phase1_k0,
            successes: e.successes,
            a_hat: e.accuracy(),
            delta_n: 0,
            effective_n_max: 0,
        })
        .collect();
    entries.sort_by_key(|e| e.problem_id);
    let phase1: usize = entries.iter().map(|e| e.k0).sum();
    let avg_rollouts_per_prompt = phase1 as f64 / entries.len() as f64;
    Ok(AllocationPlan {
        entries,
        total_extra: 0,
        avg_rollouts_per_prompt,
    })
}

/// Expected cumulative advantage after re-balancing: `A(a) + dn S(a)`.
pub fn rebalanced_cumulative_advantage(
    schedule: ScheduleKind,
    estimate: &DifficultyEstimate,
    config: &DarsConfig,
    effective_n_max: usize,
) -> f64 {
    let a = estimate.accuracy();
    let dn = extra_rollouts(schedule, estimate, config, effective_n_max);
    closed_form(config.base_rollout_n, a, config.advantage_mode) + dn as f64 * 2.0 * a * (1.0 - a)
}

/// Re-balanced curve at `u = k / resolution` using `config.n_max` as the cap.
pub fn rebalanced_curve(config: &DarsConfig, resolution: usize) -> Result<Vec<CurvePoint>> {
    if resolution < 2 {
        return Err(Error::InvalidConfig(format!(
            "curve resolution must be at least 2, got {resolution}"
        )));
    }
    (0..=resolution)
        .map(|k| {
            let est = DifficultyEstimate::new(ProblemId(0), resolution, k)?;
            Ok(CurvePoint {
                u: est.accuracy(),
                value: rebalanced_cumulative_advantage(config.schedule, &est, config, config.n_max),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(k0: usize, successes: usize) -> DifficultyEstimate {
        DifficultyEstimate::new(ProblemId(0), k0, successes).unwrap()
    }

    fn cfg(schedule: ScheduleKind) -> DarsConfig {
        DarsConfig::new(schedule, 8, 32)
    }

    #[test]
    fn test_s_weight() {
        assert_eq!(s_weight(0.5).unwrap(), 0.5);
        assert_eq!(s_weight(0.0).unwrap(), 0.0);
        assert_eq!(s_weight(0.25).unwrap(), 0.375);
        assert!(s_weight(1.01).is_err());
    }

    #[test]
    fn test_estimate_difficulty() {
        let g = RewardGroup::new(vec![1, 1, 0, 0, 0, 0, 0, 0]).unwrap();
        let e = estimate_difficulty(ProblemId(3), &g);
        assert_eq!((e.accuracy(), e.difficulty()), (0.25, 0.75));
        let e = estimate_difficulty(ProblemId(3), &RewardGroup::new(vec![1; 8]).unwrap());
        assert_eq!((e.accuracy(), e.difficulty()), (1.0, 0.0));
        let e = estimate_difficulty(ProblemId(3), &RewardGroup::new(vec![0; 8]).unwrap());
        assert_eq!((e.accuracy(), e.difficulty()), (0.0, 1.0));
        assert!(DifficultyEstimate::new(ProblemId(0), 0, 0).is_err());
        assert!(DifficultyEstimate::new(ProblemId(0), 4, 5).is_err());
    }

    #[test]
    fn test_targets() {
        let et = cfg(ScheduleKind::EqualTreatment);
        for s in 0..=8 {
            assert_eq!(target_cumulative_advantage(ScheduleKind::EqualTreatment, &est(8, s), &et), 4.0);
        }
        let hw = cfg(ScheduleKind::HardnessWeighted);
        assert_eq!(target_cumulative_advantage(ScheduleKind::HardnessWeighted, &est(8, 2), &hw), 2.0);
        assert_eq!(target_cumulative_advantage(ScheduleKind::HardnessWeighted, &est(8, 4), &hw), 4.0);
    }

    #[test]
    fn test_extra_rollout_examples() {
        let et = cfg(ScheduleKind::EqualTreatment);
        let hw = cfg(ScheduleKind::HardnessWeighted);
        assert_eq!(extra_rollouts(ScheduleKind::EqualTreatment, &est(8, 2), &et, 32), 3);
        assert_eq!(extra_rollouts(ScheduleKind::HardnessWeighted, &est(8, 2), &hw, 32), 8);
        assert_eq!(extra_rollouts(ScheduleKind::EqualTreatment, &est(8, 0), &et, 32), 32);
        assert_eq!(extra_rollouts(ScheduleKind::EqualTreatment, &est(8, 4), &et, 32), 0);
        // N (1 - 2a) / (2a) at a = 0.5 is zero.
        assert_eq!(extra_rollouts(ScheduleKind::HardnessWeighted, &est(8, 4), &hw, 32), 0);
    }

    #[test]
    fn test_division_by_zero_conventions() {
        let et = cfg(ScheduleKind::EqualTreatment);
        let hw = cfg(ScheduleKind::HardnessWeighted);
        assert_eq!(extra_rollouts(ScheduleKind::HardnessWeighted, &est(8, 0), &hw, 32), 32);
        assert_eq!(extra_rollouts(ScheduleKind::HardnessWeighted, &est(8, 8), &hw, 32), 0);
        assert_eq!(extra_rollouts(ScheduleKind::EqualTreatment, &est(8, 8), &et, 32), 0);
        // Above one half ET is inactive and HW's numerator goes negative.
        assert_eq!(extra_rollouts(ScheduleKind::EqualTreatment, &est(8, 6), &et, 32), 0);
        assert_eq!(extra_rollouts(ScheduleKind::HardnessWeighted, &est(8, 6), &hw, 32), 0);
    }

    #[test]
    fn test_cap_binds() {
        let hw = cfg(ScheduleKind::HardnessWeighted);
        // a = 1/64: N (1 - 2a) / (2a) = 8 * 62/64 * 32 = 248
        assert_eq!(extra_rollouts(ScheduleKind::HardnessWeighted, &est(64, 1), &hw, 32), 32);
        assert_eq!(extra_rollouts(ScheduleKind::HardnessWeighted, &est(64, 1), &hw, 500), 248);
        assert_eq!(extra_rollouts(ScheduleKind::HardnessWeighted, &est(64, 1), &hw, 0), 0);
    }

    #[test]
    fn test_std_mode_allocation() {
        let mut c = cfg(ScheduleKind::EqualTreatment);
        c.advantage_mode = AdvantageMode::Std;
        // (8 - 16 sqrt(3/16)) / 0.375 = 2.6548... -> 3
        assert_eq!(extra_rollouts(ScheduleKind::EqualTreatment, &est(8, 2), &c, 32), 3);
        assert_eq!(extra_rollouts(ScheduleKind::EqualTreatment, &est(8, 4), &c, 32), 0);
    }

    #[test]
    fn test_anneal() {
        let mut c = cfg(ScheduleKind::EqualTreatment);
        assert_eq!(anneal_n_max(10, &c), 32);
        c.anneal = Some(Anneal {
            start_n_max: 32,
            end_n_max: 8,
            total_steps: 100,
        });
        assert_eq!(anneal_n_max(0, &c), 32);
        assert_eq!(anneal_n_max(50, &c), 20);
        assert_eq!(anneal_n_max(100, &c), 8);
        assert_eq!(anneal_n_max(1000, &c), 8);
        let mut prev = usize::MAX;
        for step in 0..150 {
            let v = anneal_n_max(step, &c);
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn test_config_validation() {
        let mut c = cfg(ScheduleKind::EqualTreatment);
        assert!(c.validate().is_ok());
        c.anneal = Some(Anneal {
            start_n_max: 8,
            end_n_max: 16,
            total_steps: 10,
        });
        assert!(c.validate().is_err());
        c.anneal = None;
        c.phase1_k0 = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn test_plan_examples() {
        let et = cfg(ScheduleKind::EqualTreatment);
        let solved: Vec<_> = (0..4).map(|i| DifficultyEstimate::new(ProblemId(i), 8, 8).unwrap()).collect();
        let plan = build_allocation_plan(&solved, &et, 0).unwrap();
        assert_eq!((plan.total_extra, plan.avg_rollouts_per_prompt), (0, 8.0));

        let unsolved: Vec<_> = (0..4).map(|i| DifficultyEstimate::new(ProblemId(i), 8, 0).unwrap()).collect();
        let plan = build_allocation_plan(&unsolved, &et, 0).unwrap();
        assert!(plan.entries.iter().all(|e| e.delta_n == 32));
        assert_eq!(plan.avg_rollouts_per_prompt, 40.0);

        let quarter: Vec<_> = (0..4).rev().map(|i| DifficultyEstimate::new(ProblemId(i), 8, 2).unwrap()).collect();
        let plan = build_allocation_plan(&quarter, &et, 0).unwrap();
        assert_eq!(plan.avg_rollouts_per_prompt, 11.0);
        assert_eq!(plan.extra_for(ProblemId(2)), Some(3));
        assert!(plan.entries.windows(2).all(|w| w[0].problem_id < w[1].problem_id));

        assert_eq!(build_allocation_plan(&[], &et, 0), Err(Error::EmptyBatch));
    }

    #[test]
    fn test_plan_uses_annealed_cap() {
        let mut c = cfg(ScheduleKind::HardnessWeighted);
        c.anneal = Some(Anneal {
            start_n_max: 32,
            end_n_max: 8,
            total_steps: 100,
        });
        let unsolved = [DifficultyEstimate::new(ProblemId(0), 8, 0).unwrap()];
        let plan = build_allocation_plan(&unsolved, &c, 50).unwrap();
        assert_eq!(plan.entries[0].delta_n, 20);
        assert_eq!(plan.entries[0].effective_n_max, 20);
    }

    #[test]
    fn test_rebalanced_curve_contracts_with_cap() {
        let mut c = cfg(ScheduleKind::HardnessWeighted);
        let wide = rebalanced_curve(&c, 64).unwrap();
        c.n_max = 8;
        let narrow = rebalanced_curve(&c, 64).unwrap();
        c.n_max = 0;
        let vanilla = rebalanced_curve(&c, 64).unwrap();
        for ((w, n), v) in wide.iter().zip(&narrow).zip(&vanilla) {
            assert!(w.value >= n.value && n.value >= v.value);
            assert!((v.value - 16.0 * v.u * (1.0 - v.u)).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn prop_allocation_within_cap(k0 in 1usize..200, frac in 0.0f64..=1.0, n in 1usize..64,
                                      cap in 0usize..128, hw in proptest::bool::ANY, std in proptest::bool::ANY) {
            let successes = ((k0 as f64) * frac).round() as usize;
            let schedule = if hw { ScheduleKind::HardnessWeighted } else { ScheduleKind::EqualTreatment };
            let mut c = DarsConfig::new(schedule, n, cap);
            if std { c.advantage_mode = AdvantageMode::Std; }
            let dn = extra_rollouts(schedule, &est(k0, successes), &c, cap);
            proptest::prop_assert!(dn <= cap);
        }
    }
}
