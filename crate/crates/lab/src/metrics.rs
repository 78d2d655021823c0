//! Line-delimited metrics records, one per (run, step, metric[, k]).

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rlvr_core::eval::EvalReport;
use rlvr_core::trainer::IterationMetrics;

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub preset: String,
    pub seed: u64,
    pub step: usize,
    pub metric: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

pub mod names {
    pub const MEAN_REWARD: &str = "train/mean_reward";
    pub const ZERO_GRADIENT_FRACTION: &str = "train/zero_gradient_group_fraction";
    pub const TRAIN_ENTROPY: &str = "train/mean_token_entropy";
    pub const SAMPLED_ENTROPY: &str = "train/sampled_token_entropy";
    pub const AVG_ROLLOUTS: &str = "train/avg_rollouts_per_prompt";
    pub const ROLLOUTS: &str = "train/rollouts";
    pub const CUMULATIVE_ROLLOUTS: &str = "train/cumulative_rollouts";
    pub const UPDATES: &str = "train/updates";
    pub const SURROGATE: &str = "train/surrogate_value";
    pub const GRAD_NORM: &str = "train/grad_norm";
    pub const CLIP_FRACTION: &str = "train/clip_fraction";

    pub const PASS_AT_1: &str = "eval/pass_at_1";
    pub const PASS_AT_K: &str = "eval/pass_at_k";
    pub const ANALYTIC_PASS_AT_1: &str = "eval/analytic_pass_at_1";
    pub const ANALYTIC_PASS_AT_K: &str = "eval/analytic_pass_at_k";
    pub const COVERAGE: &str = "eval/coverage_at_n";
    pub const EVAL_ENTROPY: &str = "eval/mean_token_entropy";
    pub const EVAL_ROLLOUTS: &str = "eval/cumulative_rollouts";
}

pub struct RecordFactory {
    pub run_id: String,
    pub preset: String,
    pub seed: u64,
}

impl RecordFactory {
    fn record(&self, step: usize, metric: &str, value: f64, k: Option<usize>) -> MetricsRecord {
        MetricsRecord {
            run_id: self.run_id.clone(),
            preset: self.preset.clone(),
            seed: self.seed,
            step,
            metric: metric.into(),
            value,
            k,
        }
    }

    pub fn iteration(&self, m: &IterationMetrics) -> Vec<MetricsRecord> {
        let updates = m.update_stats.len().max(1) as f64;
        let mean = |f: fn(&rlvr_core::trainer::UpdateStats) -> f64| m.update_stats.iter().map(f).sum::<f64>() / updates;
        let s = m.step;
        vec![
            self.record(s, names::MEAN_REWARD, m.mean_reward, None),
            self.record(s, names::ZERO_GRADIENT_FRACTION, m.zero_gradient_group_fraction, None),
            self.record(s, names::TRAIN_ENTROPY, m.mean_token_entropy, None),
            self.record(s, names::SAMPLED_ENTROPY, m.sampled_token_entropy, None),
            self.record(s, names::AVG_ROLLOUTS, m.avg_rollouts_per_prompt, None),
            self.record(s, names::ROLLOUTS, m.rollouts as f64, None),
            self.record(s, names::CUMULATIVE_ROLLOUTS, m.cumulative_rollouts as f64, None),
            self.record(s, names::UPDATES, m.update_stats.len() as f64, None),
            self.record(s, names::SURROGATE, mean(|u| u.surrogate_value), None),
            self.record(s, names::GRAD_NORM, mean(|u| u.grad_norm), None),
            self.record(s, names::CLIP_FRACTION, mean(|u| u.clip_fraction), None),
        ]
    }

    pub fn evaluation(&self, r: &EvalReport, cumulative_rollouts: u64) -> Vec<MetricsRecord> {
        let s = r.step;
        let mut out = vec![
            self.record(s, names::EVAL_ROLLOUTS, cumulative_rollouts as f64, None),
            self.record(s, names::PASS_AT_1, r.pass_at_1, None),
            self.record(s, names::ANALYTIC_PASS_AT_1, r.analytic_pass_at_1, None),
        ];
        for &(k, v) in &r.pass_at_k {
            out.push(self.record(s, names::PASS_AT_K, v, Some(k)));
        }
        for &(k, v) in &r.analytic_pass_at_k {
            out.push(self.record(s, names::ANALYTIC_PASS_AT_K, v, Some(k)));
        }
        let n = r.per_problem.first().map_or(0, |c| c.n);
        out.push(self.record(s, names::COVERAGE, r.coverage_at_n, Some(n)));
        out.push(self.record(s, names::EVAL_ENTROPY, r.mean_token_entropy, None));
        out
    }
}

/// Append-only writer; every record is flushed as one complete line.
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
}

impl MetricsWriter {
    pub fn append(path: &Path) -> LabResult<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(LabError::io(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn write(&mut self, records: &[MetricsRecord]) -> LabResult<()> {
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r).expect("records serialize");
            buf.push(b'\n');
        }
        self.file.write_all(&buf).map_err(LabError::io(&self.path))?;
        self.file.flush().map_err(LabError::io(&self.path))
    }
}

/// Read every complete record. A final line without its newline is an
/// interrupted write and is skipped.
pub fn read_metrics(path: &Path) -> LabResult<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(LabError::io(path))?;
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut line = String::new();
    let mut number = 0;
    loop {
        line.clear();
        let read = reader.read_line(&mut line).map_err(LabError::io(path))?;
        if read == 0 || !line.ends_with('\n') {
            break;
        }
        number += 1;
        let record = serde_json::from_str(line.trim_end()).map_err(|e| LabError::RunFormat {
            path: path.to_path_buf(),
            reason: format!("metrics line {number}: {e}"),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Keep the records up to and including `step`, dropping anything written
/// after it (including a torn final line).
pub fn truncate_after(path: &Path, step: usize) -> LabResult<()> {
    let kept: Vec<MetricsRecord> = read_metrics(path)?.into_iter().filter(|r| r.step <= step).collect();
    let mut buf = Vec::new();
    for r in &kept {
        serde_json::to_writer(&mut buf, r).expect("records serialize");
        buf.push(b'\n');
    }
    std::fs::write(path, buf).map_err(LabError::io(path))
}

/// `(step, value)` pairs of one series, in file order.
pub fn series(records: &[MetricsRecord], metric: &str, k: Option<usize>) -> Vec<(usize, f64)> {
    records
        .iter()
        .filter(|r| r.metric == metric && r.k == k)
        .map(|r| (r.step, r.value))
        .collect()
}
