//! Tidy comma-separated tables for each figure analog.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rlvr_core::advantage::{cumulative_advantage_curve, AdvantageMode};
use rlvr_core::dars::{rebalanced_curve, DarsConfig, ScheduleKind};
use rlvr_core::eval::pass_at_k_unbiased;

use crate::config::ExperimentConfig;
use crate::error::{LabError, LabResult};
use crate::metrics::{names, read_metrics, MetricsRecord};
use crate::run::RunPaths;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Cumulative advantage against accuracy, plus re-balanced curves.
    Fig3,
    Pass1VsStep,
    /// Pass@k against step and cumulative rollouts.
    Fig7,
    /// Token entropy against pass@1.
    Fig5,
    /// Pass@k against pass@1.
    Fig8,
    /// Pass@k against k at the final evaluation.
    Fig10,
    /// Rollouts per prompt and final scores.
    Table2,
}

pub const PLOT_KINDS: [&str; 7] = ["fig3", "pass1-vs-step", "fig7", "fig5", "fig8", "fig10", "table2"];

impl FromStr for PlotKind {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "fig3" => PlotKind::Fig3,
            "pass1-vs-step" => PlotKind::Pass1VsStep,
            "fig7" | "passk-vs-step" => PlotKind::Fig7,
            "fig5" | "entropy-vs-pass1" => PlotKind::Fig5,
            "fig8" | "passk-vs-pass1" => PlotKind::Fig8,
            "fig10" | "passk-vs-k" => PlotKind::Fig10,
            "table2" | "rollout-efficiency" => PlotKind::Table2,
            other => return Err(LabError::UnknownPlotKind(other.into())),
        })
    }
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = [
            PlotKind::Fig3,
            PlotKind::Pass1VsStep,
            PlotKind::Fig7,
            PlotKind::Fig5,
            PlotKind::Fig8,
            PlotKind::Fig10,
            PlotKind::Table2,
        ]
        .iter()
        .position(|k| k == self)
        .expect("listed");
        f.write_str(PLOT_KINDS[i])
    }
}

pub struct RunData {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub records: Vec<MetricsRecord>,
}

impl RunData {
    pub fn load(dir: &Path) -> LabResult<Self> {
        let paths = RunPaths::new(dir);
        Ok(Self {
            dir: dir.to_path_buf(),
            config: paths.load_config()?,
            records: read_metrics(&paths.metrics())?,
        })
    }

    fn value(&self, metric: &str, step: usize, k: Option<usize>) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.metric == metric && r.step == step && r.k == k)
            .map(|r| r.value)
    }

    fn eval_steps(&self) -> Vec<usize> {
        let steps: BTreeSet<usize> = self
            .records
            .iter()
            .filter(|r| r.metric == names::PASS_AT_1)
            .map(|r| r.step)
            .collect();
        steps.into_iter().collect()
    }

    fn ks(&self, metric: &str) -> Vec<usize> {
        let ks: BTreeSet<usize> = self.records.iter().filter(|r| r.metric == metric).filter_map(|r| r.k).collect();
        ks.into_iter().collect()
    }

    fn has(&self, metric: &str) -> bool {
        self.records.iter().any(|r| r.metric == metric)
    }
}

fn required(kind: PlotKind) -> &'static [&'static str] {
    match kind {
        PlotKind::Fig3 | PlotKind::Fig10 => &[],
        PlotKind::Pass1VsStep => &[names::PASS_AT_1, names::ANALYTIC_PASS_AT_1, names::EVAL_ROLLOUTS],
        PlotKind::Fig7 => &[names::PASS_AT_K, names::ANALYTIC_PASS_AT_K, names::EVAL_ROLLOUTS],
        PlotKind::Fig5 => &[names::PASS_AT_1, names::EVAL_ENTROPY],
        PlotKind::Fig8 => &[names::PASS_AT_1, names::PASS_AT_K],
        PlotKind::Table2 => &[names::AVG_ROLLOUTS, names::CUMULATIVE_ROLLOUTS, names::PASS_AT_1],
    }
}

fn csv_err(e: csv::Error) -> LabError {
    LabError::RunFormat {
        path: PathBuf::from("<plot output>"),
        reason: e.to_string(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Write the table for `kind` built from `runs` (ignored by `fig3`).
pub fn emit_plot_data<W: Write>(kind: PlotKind, runs: &[RunData], out: W) -> LabResult<()> {
    let mut missing: Vec<String> = Vec::new();
    for run in runs {
        for m in required(kind) {
            if !run.has(m) {
                missing.push(format!("{}: {m}", run.dir.display()));
            }
        }
        if kind == PlotKind::Fig10 && !RunPaths::new(&run.dir).final_counts().exists() {
            missing.push(format!("{}: final_counts", run.dir.display()));
        }
    }
    if !missing.is_empty() {
        return Err(LabError::MissingSeries(missing));
    }
    if kind != PlotKind::Fig3 && runs.is_empty() {
        return Err(LabError::MissingSeries(vec!["no run directories given".into()]));
    }

    let mut w = csv::Writer::from_writer(out);
    let mut row = |fields: Vec<String>| w.write_record(&fields).map_err(csv_err);
    let id = |r: &RunData| vec![r.config.run_id(), r.config.preset.clone(), r.config.seed.to_string()];

    match kind {
        PlotKind::Fig3 => {
            row(["series", "mode", "n", "n_max", "u", "value"].map(String::from).to_vec())?;
            for mode in [AdvantageMode::NoStd, AdvantageMode::Std] {
                for n in [8, 32] {
                    for p in cumulative_advantage_curve(mode, n, 64)? {
                        row(vec!["base".into(), mode.name().into(), n.to_string(), String::new(), p.u.to_string(), p.value.to_string()])?;
                    }
                }
            }
            for schedule in [ScheduleKind::EqualTreatment, ScheduleKind::HardnessWeighted] {
                for n_max in [8, 16, 32] {
                    let cfg = DarsConfig::new(schedule, 8, n_max);
                    for p in rebalanced_curve(&cfg, 64)? {
                        row(vec![
                            schedule.name().into(),
                            AdvantageMode::NoStd.name().into(),
                            "8".into(),
                            n_max.to_string(),
                            p.u.to_string(),
                            p.value.to_string(),
                        ])?;
                    }
                }
            }
        }
        PlotKind::Pass1VsStep => {
            row(["run_id", "preset", "seed", "step", "cumulative_rollouts", "pass_at_1", "analytic_pass_at_1"].map(String::from).to_vec())?;
            for r in runs {
                for s in r.eval_steps() {
                    let mut f = id(r);
                    f.extend([
                        s.to_string(),
                        fmt_opt(r.value(names::EVAL_ROLLOUTS, s, None)),
                        fmt_opt(r.value(names::PASS_AT_1, s, None)),
                        fmt_opt(r.value(names::ANALYTIC_PASS_AT_1, s, None)),
                    ]);
                    row(f)?;
                }
            }
        }
        PlotKind::Fig7 => {
            row(["run_id", "preset", "seed", "step", "cumulative_rollouts", "k", "pass_at_k", "analytic_pass_at_k"].map(String::from).to_vec())?;
            for r in runs {
                for s in r.eval_steps() {
                    for k in r.ks(names::PASS_AT_K) {
                        let mut f = id(r);
                        f.extend([
                            s.to_string(),
                            fmt_opt(r.value(names::EVAL_ROLLOUTS, s, None)),
                            k.to_string(),
                            fmt_opt(r.value(names::PASS_AT_K, s, Some(k))),
                            fmt_opt(r.value(names::ANALYTIC_PASS_AT_K, s, Some(k))),
                        ]);
                        row(f)?;
                    }
                }
            }
        }
        PlotKind::Fig5 => {
            row(["run_id", "preset", "seed", "step", "pass_at_1", "mean_token_entropy"].map(String::from).to_vec())?;
            for r in runs {
                for s in r.eval_steps() {
                    let mut f = id(r);
                    f.extend([
                        s.to_string(),
                        fmt_opt(r.value(names::PASS_AT_1, s, None)),
                        fmt_opt(r.value(names::EVAL_ENTROPY, s, None)),
                    ]);
                    row(f)?;
                }
            }
        }
        PlotKind::Fig8 => {
            row(["run_id", "preset", "seed", "step", "k", "pass_at_1", "pass_at_k"].map(String::from).to_vec())?;
            for r in runs {
                for k in r.ks(names::PASS_AT_K) {
                    for s in r.eval_steps() {
                        let mut f = id(r);
                        f.extend([
                            s.to_string(),
                            k.to_string(),
                            fmt_opt(r.value(names::PASS_AT_1, s, None)),
                            fmt_opt(r.value(names::PASS_AT_K, s, Some(k))),
                        ]);
                        row(f)?;
                    }
                }
            }
        }
        PlotKind::Fig10 => {
            row(["run_id", "preset", "seed", "step", "k", "pass_at_k"].map(String::from).to_vec())?;
            for r in runs {
                let (step, counts) = read_counts(&RunPaths::new(&r.dir).final_counts())?;
                let n = counts.first().map_or(0, |c| c.0);
                for k in 1..=n {
                    let total = counts.iter().map(|&(n, c)| pass_at_k_unbiased(n, c, k)).sum::<rlvr_core::Result<f64>>()?;
                    let mut f = id(r);
                    f.extend([step.to_string(), k.to_string(), (total / counts.len() as f64).to_string()]);
                    row(f)?;
                }
            }
        }
        PlotKind::Table2 => {
            row(["run_id", "preset", "seed", "steps", "avg_rollouts_per_prompt", "cumulative_rollouts", "final_pass_at_1"].map(String::from).to_vec())?;
            for r in runs {
                let avg: Vec<f64> = r.records.iter().filter(|x| x.metric == names::AVG_ROLLOUTS).map(|x| x.value).collect();
                let cumulative = r.records.iter().filter(|x| x.metric == names::CUMULATIVE_ROLLOUTS).map(|x| x.value).next_back();
                let pass1 = r.records.iter().filter(|x| x.metric == names::PASS_AT_1).map(|x| x.value).next_back();
                let mut f = id(r);
                f.extend([
                    avg.len().to_string(),
                    (avg.iter().sum::<f64>() / avg.len() as f64).to_string(),
                    fmt_opt(cumulative),
                    fmt_opt(pass1),
                ]);
                row(f)?;
            }
        }
    }
    w.flush().map_err(|e| LabError::Io {
        path: PathBuf::from("<plot output>"),
        source: e,
    })
}

fn read_counts(path: &Path) -> LabResult<(usize, Vec<(usize, usize)>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut step = 0;
    let mut counts = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let field = |i: usize| -> LabResult<usize> {
            rec.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| LabError::RunFormat {
                path: path.to_path_buf(),
                reason: format!("bad field {i} in {rec:?}"),
            })
        };
        step = field(0)?;
        counts.push((field(2)?, field(3)?));
    }
    Ok((step, counts))
}
