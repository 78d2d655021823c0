//! Flat experiment configuration, the named preset table and the
//! preset < file < flag resolution order.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use rlvr_core::advantage::AdvantageMode;
use rlvr_core::dars::{Anneal, DarsConfig, ScheduleKind};
use rlvr_core::env::SuiteConfig;
use rlvr_core::eval::EvalConfig;
use rlvr_core::trainer::{GroupNorm, TrainerConfig};

use crate::error::{LabError, LabResult};

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    None,
    Et,
    Hw,
}

impl Schedule {
    pub fn kind(self) -> Option<ScheduleKind> {
        match self {
            Schedule::None => None,
            Schedule::Et => Some(ScheduleKind::EqualTreatment),
            Schedule::Hw => Some(ScheduleKind::HardnessWeighted),
        }
    }
}

impl FromStr for Schedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" | "off" => Ok(Schedule::None),
            "et" => Ok(Schedule::Et),
            "hw" => Ok(Schedule::Hw),
            other => Err(format!("unknown schedule `{other}` (expected none, et or hw)")),
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::None => "none",
            Schedule::Et => "et",
            Schedule::Hw => "hw",
        })
    }
}

/// Every tunable of a run, one flat key each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub seed: u64,
    pub total_steps: usize,

    pub batch_size: usize,
    pub rollout_n: usize,
    pub clip_epsilon: f64,
    pub lr: f64,
    pub ppo_splits: usize,
    pub ppo_epochs: usize,
    pub advantage_mode: AdvantageMode,
    pub group_norm: GroupNorm,

    pub schedule: Schedule,
    pub k0: usize,
    pub n_max: usize,
    /// Zero disables annealing.
    pub anneal_steps: usize,
    pub anneal_start_n_max: usize,
    pub anneal_end_n_max: usize,

    pub eval_every: usize,
    pub eval_samples: usize,
    pub eval_k: Vec<usize>,
    pub eval_seed: u64,
    /// Zero keeps only the final checkpoint.
    pub checkpoint_every: usize,

    pub suite_seed: u64,
    pub num_problems: usize,
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub max_steps: usize,
    pub aligned_fraction: f64,
    pub min_log10_p: f64,
    pub max_p: f64,
}

pub const BASELINE_BATCH: usize = 16;
pub const BREADTH_FACTOR: usize = 24;
pub const BASE_LR: f64 = 1.0;
pub const BREADTH_LR_FACTOR: f64 = 5.0;

pub const PRESETS: [&str; 7] = [
    "baseline",
    "depth-naive",
    "breadth-naive",
    "dars-et",
    "dars-hw",
    "dars-et-breadth",
    "dars-hw-breadth",
];

fn baseline() -> ExperimentConfig {
    let suite = SuiteConfig::default();
    ExperimentConfig {
        preset: "baseline".into(),
        seed: 0,
        total_steps: 160,
        batch_size: BASELINE_BATCH,
        rollout_n: 8,
        clip_epsilon: 0.2,
        lr: BASE_LR,
        ppo_splits: 2,
        ppo_epochs: 1,
        advantage_mode: AdvantageMode::NoStd,
        group_norm: GroupNorm::Merged,
        schedule: Schedule::None,
        k0: 8,
        n_max: 32,
        anneal_steps: 0,
        anneal_start_n_max: 32,
        anneal_end_n_max: 32,
        eval_every: 5,
        eval_samples: 128,
        eval_k: vec![1, 32, 128],
        eval_seed: 20_250_601,
        checkpoint_every: 20,
        suite_seed: 0,
        num_problems: suite.num_problems,
        vocab_size: suite.vocab_size,
        feature_dim: suite.feature_dim,
        max_steps: suite.max_steps,
        aligned_fraction: suite.aligned_fraction,
        min_log10_p: suite.min_log10_p,
        max_p: suite.max_p,
    }
}

fn breadth(mut c: ExperimentConfig) -> ExperimentConfig {
    c.batch_size = BASELINE_BATCH * BREADTH_FACTOR;
    c.ppo_splits = 1;
    c.ppo_epochs = 2;
    c.lr = BASE_LR * BREADTH_LR_FACTOR;
    c.total_steps = 40;
    c.eval_every = 1;
    c.checkpoint_every = 5;
    c
}

fn dars(mut c: ExperimentConfig, schedule: Schedule) -> ExperimentConfig {
    c.schedule = schedule;
    c.k0 = c.rollout_n;
    c.n_max = 4 * c.rollout_n;
    c
}

pub fn preset(name: &str) -> LabResult<ExperimentConfig> {
    let mut c = match name {
        "baseline" => baseline(),
        "depth-naive" => ExperimentConfig {
            rollout_n: 32,
            ..baseline()
        },
        "breadth-naive" => breadth(baseline()),
        "dars-et" => dars(baseline(), Schedule::Et),
        "dars-hw" => dars(baseline(), Schedule::Hw),
        "dars-et-breadth" => dars(breadth(baseline()), Schedule::Et),
        "dars-hw-breadth" => dars(breadth(baseline()), Schedule::Hw),
        other => return Err(LabError::UnknownPreset(other.into())),
    };
    c.preset = name.into();
    Ok(c)
}

/// Command-line overrides; `None` leaves the file or preset value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub total_steps: Option<usize>,
    pub n_max: Option<usize>,
    pub schedule: Option<Schedule>,
    pub ppo_splits: Option<usize>,
    pub ppo_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub rollout_n: Option<usize>,
    pub lr: Option<f64>,
}

fn type_name(v: &toml::Value) -> &'static str {
    match v {
        toml::Value::String(_) => "string",
        toml::Value::Integer(_) => "integer",
        toml::Value::Float(_) => "float",
        toml::Value::Boolean(_) => "boolean",
        toml::Value::Datetime(_) => "datetime",
        toml::Value::Array(_) => "array",
        toml::Value::Table(_) => "table",
    }
}

fn check_type(key: &str, expected: &toml::Value, found: &toml::Value) -> LabResult<()> {
    let ok = match (expected, found) {
        (toml::Value::Float(_), toml::Value::Integer(_)) => true,
        (toml::Value::Integer(_), toml::Value::Integer(i)) => *i >= 0,
        (toml::Value::Array(_), toml::Value::Array(items)) => {
            items.iter().all(|i| matches!(i, toml::Value::Integer(n) if *n >= 0))
        }
        (e, f) => type_name(e) == type_name(f),
    };
    if ok {
        return Ok(());
    }
    let expected = match expected {
        toml::Value::Integer(_) => "non-negative integer",
        toml::Value::Array(_) => "array of non-negative integers",
        other => type_name(other),
    };
    Err(LabError::TypeMismatch {
        key: key.into(),
        expected,
        found: type_name(found),
    })
}

/// Parse a flat TOML document on top of `base`.
pub fn overlay_toml(base: &ExperimentConfig, text: &str) -> LabResult<ExperimentConfig> {
    let file: toml::Table = text.parse().map_err(|e: toml::de::Error| LabError::ConfigParse(e.to_string()))?;
    let mut merged = toml::Table::try_from(base).expect("config serializes to a table");
    for (key, value) in file {
        let Some(current) = merged.get(&key) else {
            return Err(LabError::UnknownKey(key));
        };
        check_type(&key, current, &value)?;
        let text = value.as_str().unwrap_or_default();
        let parsed = match key.as_str() {
            "advantage_mode" => text.parse::<AdvantageMode>().map(|_| ()),
            "group_norm" => text.parse::<GroupNorm>().map(|_| ()),
            "schedule" => text.parse::<Schedule>().map(|_| ()),
            _ => Ok(()),
        };
        parsed.map_err(|reason| LabError::Constraint { key: key.clone(), reason })?;
        merged.insert(key, value);
    }
    ExperimentConfig::deserialize(toml::Value::Table(merged)).map_err(|e| LabError::ConfigParse(e.to_string()))
}

/// Resolve a configuration: preset table, then the optional file, then flags.
/// The preset is taken from the flag, else from the file, else `baseline`.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> LabResult<ExperimentConfig> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => LabError::ConfigNotFound(p.to_path_buf()),
            _ => LabError::Io {
                path: p.to_path_buf(),
                source: e,
            },
        })?),
        None => None,
    };
    let file_preset = match &text {
        Some(t) => {
            let table: toml::Table = t.parse().map_err(|e: toml::de::Error| LabError::ConfigParse(e.to_string()))?;
            match table.get("preset") {
                Some(toml::Value::String(s)) => Some(s.clone()),
                Some(other) => {
                    return Err(LabError::TypeMismatch {
                        key: "preset".into(),
                        expected: "string",
                        found: type_name(other),
                    })
                }
                None => None,
            }
        }
        None => None,
    };
    let name = overrides.preset.clone().or(file_preset).unwrap_or_else(|| "baseline".into());
    let mut config = preset(&name)?;
    if let Some(t) = &text {
        config = overlay_toml(&config, t)?;
        config.preset = name;
    }

    let o = overrides;
    if let Some(v) = o.seed {
        config.seed = v;
    }
    if let Some(v) = o.total_steps {
        config.total_steps = v;
    }
    if let Some(v) = o.n_max {
        config.n_max = v;
    }
    if let Some(v) = o.schedule {
        config.schedule = v;
    }
    if let Some(v) = o.ppo_splits {
        config.ppo_splits = v;
    }
    if let Some(v) = o.ppo_epochs {
        config.ppo_epochs = v;
    }
    if let Some(v) = o.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = o.rollout_n {
        config.rollout_n = v;
    }
    if let Some(v) = o.lr {
        config.lr = v;
    }
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Stable identifier written into every metrics record.
    pub fn run_id(&self) -> String {
        format!("{}-{}", self.preset, self.seed)
    }

    pub fn suite_config(&self) -> SuiteConfig {
        SuiteConfig {
            num_problems: self.num_problems,
            vocab_size: self.vocab_size,
            feature_dim: self.feature_dim,
            max_steps: self.max_steps,
            aligned_fraction: self.aligned_fraction,
            min_log10_p: self.min_log10_p,
            max_p: self.max_p,
        }
    }

    pub fn dars_config(&self) -> Option<DarsConfig> {
        self.schedule.kind().map(|schedule| DarsConfig {
            base_rollout_n: self.rollout_n,
            phase1_k0: self.k0,
            n_max: self.n_max,
            schedule,
            advantage_mode: self.advantage_mode,
            anneal: (self.anneal_steps > 0).then_some(Anneal {
                start_n_max: self.anneal_start_n_max,
                end_n_max: self.anneal_end_n_max,
                total_steps: self.anneal_steps,
            }),
        })
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            batch_size_m: self.batch_size,
            base_rollout_n: self.rollout_n,
            clip_epsilon: self.clip_epsilon,
            learning_rate: self.lr,
            ppo_splits: self.ppo_splits,
            ppo_epochs: self.ppo_epochs,
            dars: self.dars_config(),
            advantage_mode: self.advantage_mode,
            group_norm: self.group_norm,
            total_steps: self.total_steps,
            seed: self.seed,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            samples_per_problem_n: self.eval_samples,
            k_values: self.eval_k.clone(),
            eval_seed: self.eval_seed,
        }
    }

    pub fn validate(&self) -> LabResult<()> {
        let bad = |key: &str, reason: String| {
            Err(LabError::Constraint {
                key: key.into(),
                reason,
            })
        };
        if !PRESETS.contains(&self.preset.as_str()) {
            return Err(LabError::UnknownPreset(self.preset.clone()));
        }
        if self.batch_size == 0 || self.batch_size > self.num_problems {
            return bad(
                "batch_size",
                format!("must be in 1..={} (the suite size), got {}", self.num_problems, self.batch_size),
            );
        }
        if self.ppo_splits == 0 || self.ppo_splits > self.batch_size {
            return bad("ppo_splits", format!("must be in 1..={}, got {}", self.batch_size, self.ppo_splits));
        }
        for (key, v) in [
            ("rollout_n", self.rollout_n),
            ("ppo_epochs", self.ppo_epochs),
            ("eval_every", self.eval_every),
            ("eval_samples", self.eval_samples),
        ] {
            if v == 0 {
                return bad(key, "must be positive".into());
            }
        }
        if !(self.clip_epsilon > 0.0) {
            return bad("clip_epsilon", format!("must be positive, got {}", self.clip_epsilon));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("must be finite and non-negative, got {}", self.lr));
        }
        if self.eval_k.is_empty() {
            return bad("eval_k", "must list at least one k".into());
        }
        if let Some(&k) = self.eval_k.iter().find(|&&k| k == 0 || k > self.eval_samples) {
            return bad("eval_k", format!("k = {k} must be in 1..={} (eval_samples)", self.eval_samples));
        }
        if self.schedule != Schedule::None {
            if self.k0 == 0 {
                return bad("k0", "must be positive".into());
            }
            if self.n_max == 0 {
                return bad("n_max", "must be positive".into());
            }
            if self.anneal_steps > 0 {
                if self.anneal_start_n_max < self.anneal_end_n_max {
                    return bad("anneal_start_n_max", "must be at least anneal_end_n_max".into());
                }
                if self.anneal_start_n_max > self.n_max {
                    return bad("anneal_start_n_max", format!("must not exceed n_max = {}", self.n_max));
                }
            }
        }
        self.suite_config()
            .validate()
            .map_err(|e| LabError::Constraint {
                key: "suite".into(),
                reason: e.to_string(),
            })?;
        self.trainer_config().validate()?;
        Ok(())
    }
}
