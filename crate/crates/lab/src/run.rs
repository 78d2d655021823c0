//! Run directories: layout, the persisting observer, fresh runs and resume.
//!
//! ```text
//! <run>/config.toml        resolved configuration (loadable with --config)
//! <run>/run.json           run id, seed, code version, creation time
//! <run>/metrics.jsonl      append-only metrics records
//! <run>/allocations.csv    one audit row per (step, problem)
//! <run>/checkpoints/       step-NNNNNN.ckpt
//! <run>/final_counts.csv   per-problem (n, c) of the last evaluation
//! <run>/report.json        summary derived from metrics.jsonl
//! ```

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rlvr_core::checkpoint::Checkpoint;
use rlvr_core::env::TaskSuite;
use rlvr_core::eval::{evaluate, EvalReport};
use rlvr_core::trainer::{run_training, EvalSchedule, IterationOutcome, RunOptions, TrainingObserver};

use crate::config::{load_config, ExperimentConfig, Overrides, CODE_VERSION};
use crate::error::{LabError, LabResult};
use crate::metrics::{names, read_metrics, series, truncate_after, MetricsRecord, MetricsWriter, RecordFactory};

pub const OUT_DIR_ENV: &str = "RLVR_LAB_OUT";
pub const DEFAULT_OUT_DIR: &str = "runs";

#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    /// The configuration echoed into an existing run directory.
    pub fn load_config(&self) -> LabResult<ExperimentConfig> {
        if !self.root.is_dir() {
            return Err(LabError::Io {
                path: self.root.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "run directory not found"),
            });
        }
        if !self.config().is_file() {
            return Err(LabError::RunFormat {
                path: self.root.clone(),
                reason: "config.toml is missing".into(),
            });
        }
        load_config(Some(&self.config()), &Overrides::default())
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("run.json")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }
    pub fn allocations(&self) -> PathBuf {
        self.root.join("allocations.csv")
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn checkpoint(&self, step: u64) -> PathBuf {
        self.checkpoints().join(format!("step-{step:06}.ckpt"))
    }
    pub fn final_counts(&self) -> PathBuf {
        self.root.join("final_counts.csv")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub preset: String,
    pub seed: u64,
    pub code_version: String,
    pub created: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub step: usize,
    pub problem_id: u32,
    pub k0: usize,
    pub successes: usize,
    pub a_hat: f64,
    pub delta_n: usize,
    pub effective_n_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub preset: String,
    pub seed: u64,
    pub code_version: String,
    pub steps_completed: usize,
    pub cumulative_rollouts: u64,
    pub avg_rollouts_per_prompt: f64,
    pub final_step: usize,
    pub final_pass_at_1: f64,
    pub final_pass_at_k: Vec<(usize, f64)>,
    pub final_analytic_pass_at_k: Vec<(usize, f64)>,
    pub final_mean_token_entropy: f64,
}

/// Name a fresh run directory `{preset}-{seed}-{timestamp}` under `out_root`.
pub fn new_run_dir(out_root: &Path, config: &ExperimentConfig) -> LabResult<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{}-{}-{}", config.preset, config.seed, stamp);
    let mut dir = out_root.join(&base);
    let mut n = 1;
    while dir.exists() {
        dir = out_root.join(format!("{base}.{n}"));
        n += 1;
    }
    Ok(dir)
}

pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT_DIR), PathBuf::from)
}

struct Persist {
    paths: RunPaths,
    factory: RecordFactory,
    metrics: MetricsWriter,
    audit: csv::Writer<std::fs::File>,
    cumulative: u64,
    halt_after: Option<usize>,
    last_eval: Option<EvalReport>,
    failure: Option<LabError>,
}

impl Persist {
    fn fail(&mut self, e: LabError) -> rlvr_core::Error {
        let msg = e.to_string();
        self.failure = Some(e);
        rlvr_core::Error::Aborted(msg)
    }

    fn audit_rows(&mut self, it: &IterationOutcome) -> LabResult<()> {
        for e in &it.plan.entries {
            self.audit
                .serialize(AuditRow {
                    step: it.metrics.step,
                    problem_id: e.problem_id.0,
                    k0: e.k0,
                    successes: e.successes,
                    a_hat: e.a_hat,
                    delta_n: e.delta_n,
                    effective_n_max: e.effective_n_max,
                })
                .map_err(|e| csv_error(&self.paths.allocations(), e))?;
        }
        self.audit.flush().map_err(LabError::io(self.paths.allocations()))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> LabError {
    LabError::RunFormat {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

impl TrainingObserver for Persist {
    fn on_iteration(&mut self, it: &IterationOutcome) -> rlvr_core::Result<()> {
        self.cumulative = it.metrics.cumulative_rollouts;
        let records = self.factory.iteration(&it.metrics);
        if let Err(e) = self.metrics.write(&records).and_then(|_| self.audit_rows(it)) {
            return Err(self.fail(e));
        }
        if self.halt_after == Some(it.metrics.step) {
            return Err(rlvr_core::Error::Aborted(format!("halted after step {}", it.metrics.step)));
        }
        Ok(())
    }

    fn on_evaluation(&mut self, report: &EvalReport) -> rlvr_core::Result<()> {
        let records = self.factory.evaluation(report, self.cumulative);
        if let Err(e) = self.metrics.write(&records) {
            return Err(self.fail(e));
        }
        self.last_eval = Some(report.clone());
        Ok(())
    }

    fn on_checkpoint(&mut self, c: &Checkpoint) -> rlvr_core::Result<()> {
        let path = self.paths.checkpoint(c.step);
        let tmp = path.with_extension("tmp");
        let written = std::fs::write(&tmp, c.to_bytes()).and_then(|_| std::fs::rename(&tmp, &path));
        written.map_err(|e| {
            let err = LabError::io(&path)(e);
            self.fail(err)
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunControl {
    /// Stop right after recording this iteration, as if the process died.
    pub halt_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub dir: PathBuf,
    pub halted: bool,
    pub report: Option<RunReport>,
}

fn write_text(path: &Path, text: &str) -> LabResult<()> {
    std::fs::write(path, text).map_err(LabError::io(path))
}

/// Start a run in `dir`, which must not exist yet.
pub fn run_experiment(config: &ExperimentConfig, dir: &Path, control: &RunControl) -> LabResult<RunResult> {
    config.validate()?;
    if dir.exists() {
        return Err(LabError::Io {
            path: dir.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::AlreadyExists, "run directory already exists"),
        });
    }
    let paths = RunPaths::new(dir);
    std::fs::create_dir_all(paths.checkpoints()).map_err(LabError::io(paths.checkpoints()))?;
    let header = format!("# {CODE_VERSION}\n# reproduce: rlvr-lab run --config config.toml\n");
    write_text(&paths.config(), &(header + &config.to_toml()))?;
    let manifest = RunManifest {
        run_id: config.run_id(),
        preset: config.preset.clone(),
        seed: config.seed,
        code_version: CODE_VERSION.into(),
        created: chrono::Utc::now().to_rfc3339(),
    };
    write_text(&paths.manifest(), &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    execute(config, paths, None, control)
}

/// Continue the run in `dir` from its latest checkpoint, discarding any
/// records written after that checkpoint.
pub fn resume_experiment(dir: &Path, control: &RunControl) -> LabResult<RunResult> {
    let paths = RunPaths::new(dir);
    let config = paths.load_config()?;
    let checkpoint = latest_checkpoint(&paths)?;
    match &checkpoint {
        Some(c) => {
            let step = c.step as usize;
            if paths.metrics().exists() {
                truncate_after(&paths.metrics(), step)?;
            }
            if paths.allocations().exists() {
                truncate_audit(&paths.allocations(), step)?;
            }
        }
        None => {
            for p in [paths.metrics(), paths.allocations()] {
                if p.exists() {
                    std::fs::remove_file(&p).map_err(LabError::io(&p))?;
                }
            }
        }
    }
    execute(&config, paths, checkpoint, control)
}

fn truncate_audit(path: &Path, step: usize) -> LabResult<()> {
    let rows = read_audit(path)?;
    let file = std::fs::File::create(path).map_err(LabError::io(path))?;
    let mut w = csv::Writer::from_writer(file);
    let mut any = false;
    for r in rows.into_iter().filter(|r| r.step <= step) {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
        any = true;
    }
    if !any {
        drop(w);
        std::fs::remove_file(path).map_err(LabError::io(path))?;
        return Ok(());
    }
    w.flush().map_err(LabError::io(path))
}

pub fn read_audit(path: &Path) -> LabResult<Vec<AuditRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    for row in r.deserialize() {
        match row {
            Ok(row) => rows.push(row),
            // A torn last row from an interrupted write.
            Err(e) if matches!(e.kind(), csv::ErrorKind::UnequalLengths { .. } | csv::ErrorKind::Deserialize { .. }) => break,
            Err(e) => return Err(csv_error(path, e)),
        }
    }
    Ok(rows)
}

pub fn latest_checkpoint(paths: &RunPaths) -> LabResult<Option<Checkpoint>> {
    let dir = paths.checkpoints();
    if !dir.exists() {
        return Ok(None);
    }
    let mut steps: Vec<u64> = std::fs::read_dir(&dir)
        .map_err(LabError::io(&dir))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix("step-")?.strip_suffix(".ckpt")?.parse().ok()
        })
        .collect();
    steps.sort_unstable();
    match steps.last() {
        Some(&s) => load_checkpoint(paths, s).map(Some),
        None => Ok(None),
    }
}

pub fn load_checkpoint(paths: &RunPaths, step: u64) -> LabResult<Checkpoint> {
    let path = paths.checkpoint(step);
    let bytes = std::fs::read(&path).map_err(LabError::io(&path))?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}

fn execute(
    config: &ExperimentConfig,
    paths: RunPaths,
    resume: Option<Checkpoint>,
    control: &RunControl,
) -> LabResult<RunResult> {
    let suite = TaskSuite::generate(&config.suite_config(), config.suite_seed)?;
    let audit_path = paths.allocations();
    let audit_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&audit_path)
        .map_err(LabError::io(&audit_path))?;
    let fresh_audit = audit_file.metadata().map_err(LabError::io(&audit_path))?.len() == 0;
    let audit = csv::WriterBuilder::new().has_headers(fresh_audit).from_writer(audit_file);

    let mut observer = Persist {
        factory: RecordFactory {
            run_id: config.run_id(),
            preset: config.preset.clone(),
            seed: config.seed,
        },
        metrics: MetricsWriter::append(&paths.metrics())?,
        audit,
        cumulative: resume.as_ref().map_or(0, |c| c.cumulative_rollouts),
        halt_after: control.halt_after,
        last_eval: None,
        failure: None,
        paths: paths.clone(),
    };
    let options = RunOptions {
        eval: Some(EvalSchedule {
            config: config.eval_config(),
            every: config.eval_every,
        }),
        checkpoint_every: Some(if config.checkpoint_every == 0 {
            usize::MAX
        } else {
            config.checkpoint_every
        }),
        resume,
    };
    let outcome = run_training(&config.trainer_config(), &suite, &options, &mut observer);
    match outcome {
        Ok(_) => {}
        Err(rlvr_core::Error::Aborted(_)) if observer.failure.is_none() => {
            return Ok(RunResult {
                dir: paths.root,
                halted: true,
                report: None,
            });
        }
        Err(e) => return Err(observer.failure.take().unwrap_or(LabError::Core(e))),
    }

    if let Some(last) = &observer.last_eval {
        write_counts(&paths.final_counts(), last)?;
    }
    let report = build_report(config, &read_metrics(&paths.metrics())?)?;
    write_text(&paths.report(), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    Ok(RunResult {
        dir: paths.root,
        halted: false,
        report: Some(report),
    })
}

fn write_counts(path: &Path, report: &EvalReport) -> LabResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["step", "problem_id", "n", "c"]).map_err(|e| csv_error(path, e))?;
    for c in &report.per_problem {
        w.write_record([
            report.step.to_string(),
            c.problem_id.to_string(),
            c.n.to_string(),
            c.c.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(LabError::io(path))
}

pub fn build_report(config: &ExperimentConfig, records: &[MetricsRecord]) -> LabResult<RunReport> {
    let pass1 = series(records, names::PASS_AT_1, None);
    let Some(&(final_step, final_pass_at_1)) = pass1.last() else {
        return Err(LabError::MissingSeries(vec![names::PASS_AT_1.into()]));
    };
    let at_final = |metric: &str| -> Vec<(usize, f64)> {
        records
            .iter()
            .filter(|r| r.metric == metric && r.step == final_step)
            .filter_map(|r| r.k.map(|k| (k, r.value)))
            .collect()
    };
    let avg = series(records, names::AVG_ROLLOUTS, None);
    let cumulative = series(records, names::CUMULATIVE_ROLLOUTS, None);
    let entropy = series(records, names::EVAL_ENTROPY, None);
    Ok(RunReport {
        run_id: config.run_id(),
        preset: config.preset.clone(),
        seed: config.seed,
        code_version: CODE_VERSION.into(),
        steps_completed: avg.len(),
        cumulative_rollouts: cumulative.last().map_or(0, |&(_, v)| v as u64),
        avg_rollouts_per_prompt: if avg.is_empty() {
            config.trainer_config().phase1_rollouts() as f64
        } else {
            avg.iter().map(|&(_, v)| v).sum::<f64>() / avg.len() as f64
        },
        final_step,
        final_pass_at_1,
        final_pass_at_k: at_final(names::PASS_AT_K),
        final_analytic_pass_at_k: at_final(names::ANALYTIC_PASS_AT_K),
        final_mean_token_entropy: entropy.last().map_or(f64::NAN, |&(_, v)| v),
    })
}

/// Score a stored checkpoint (or the latest one) with the run's evaluation settings.
pub fn evaluate_checkpoint(dir: &Path, step: Option<u64>, eval_seed: Option<u64>) -> LabResult<EvalReport> {
    let paths = RunPaths::new(dir);
    let config = paths.load_config()?;
    let checkpoint = match step {
        Some(s) => load_checkpoint(&paths, s)?,
        None => latest_checkpoint(&paths)?.ok_or_else(|| LabError::RunFormat {
            path: paths.checkpoints(),
            reason: "no checkpoints".into(),
        })?,
    };
    let suite = TaskSuite::generate(&config.suite_config(), config.suite_seed)?;
    let mut eval = config.eval_config();
    if let Some(s) = eval_seed {
        eval.eval_seed = s;
    }
    Ok(evaluate(&checkpoint.policy, &suite, &eval, checkpoint.step as usize)?)
}
