use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rlvr_lab::config::{load_config, Overrides, Schedule, PRESETS};
use rlvr_lab::plot::{emit_plot_data, PlotKind, RunData};
use rlvr_lab::run::{default_out_root, evaluate_checkpoint, new_run_dir, resume_experiment, run_experiment, RunControl, OUT_DIR_ENV};
use rlvr_lab::{LabError, LabResult};

#[derive(Parser)]
#[command(name = "rlvr-lab", version, about = "RLVR experiments on a synthetic verifiable-reward suite")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate, writing a run directory.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Parent directory for new runs.
        #[arg(long, env = OUT_DIR_ENV)]
        out_dir: Option<PathBuf>,
        /// Exact run directory instead of `{preset}-{seed}-{timestamp}`.
        #[arg(long, conflicts_with = "resume")]
        run_dir: Option<PathBuf>,
        /// Continue an existing run directory from its latest checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after recording this iteration.
        #[arg(long, hide = true)]
        halt_after: Option<usize>,
    },
    /// Evaluate a stored checkpoint and print the report as JSON.
    Eval {
        #[arg(long)]
        run_dir: PathBuf,
        /// Checkpoint step (defaults to the latest).
        #[arg(long)]
        step: Option<u64>,
        #[arg(long)]
        eval_seed: Option<u64>,
    },
    /// Emit a figure table as CSV.
    PlotData {
        /// One of fig3, pass1-vs-step, fig7, fig5, fig8, fig10, table2.
        #[arg(long)]
        kind: String,
        /// Output file (defaults to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run directories.
        runs: Vec<PathBuf>,
    },
    /// Print the resolved configuration as TOML.
    ShowConfig {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// List preset names.
    ListPresets,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    total_steps: Option<usize>,
    #[arg(long)]
    n_max: Option<usize>,
    /// none, et or hw.
    #[arg(long)]
    schedule: Option<Schedule>,
    #[arg(long)]
    ppo_splits: Option<usize>,
    #[arg(long)]
    ppo_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    rollout_n: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> LabResult<rlvr_lab::config::ExperimentConfig> {
        let overrides = Overrides {
            preset: self.preset.clone(),
            seed: self.seed,
            total_steps: self.total_steps,
            n_max: self.n_max,
            schedule: self.schedule,
            ppo_splits: self.ppo_splits,
            ppo_epochs: self.ppo_epochs,
            batch_size: self.batch_size,
            rollout_n: self.rollout_n,
            lr: self.lr,
        };
        load_config(self.config.as_deref(), &overrides)
    }
}

fn execute(cli: Cli) -> LabResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| LabError::Constraint {
                key: "threads".into(),
                reason: e.to_string(),
            })?;
    }
    match cli.command {
        Command::Run {
            config,
            out_dir,
            run_dir,
            resume,
            halt_after,
        } => {
            let control = RunControl { halt_after };
            let result = match resume {
                Some(dir) => resume_experiment(&dir, &control)?,
                None => {
                    let cfg = config.resolve()?;
                    let dir = match run_dir {
                        Some(d) => d,
                        None => new_run_dir(&out_dir.unwrap_or_else(default_out_root), &cfg)?,
                    };
                    run_experiment(&cfg, &dir, &control)?
                }
            };
            match result.report {
                Some(report) => {
                    let ks: Vec<String> = report.final_pass_at_k.iter().map(|(k, v)| format!("pass@{k}={v:.4}")).collect();
                    println!(
                        "{}  steps={} rollouts={} avg/prompt={:.2} pass@1={:.4} {}",
                        result.dir.display(),
                        report.steps_completed,
                        report.cumulative_rollouts,
                        report.avg_rollouts_per_prompt,
                        report.final_pass_at_1,
                        ks.join(" ")
                    );
                }
                None => println!("{}  halted", result.dir.display()),
            }
        }
        Command::Eval { run_dir, step, eval_seed } => {
            let report = evaluate_checkpoint(&run_dir, step, eval_seed)?;
            let summary = serde_json::json!({
                "step": report.step,
                "pass_at_1": report.pass_at_1,
                "pass_at_k": report.pass_at_k,
                "coverage_at_n": report.coverage_at_n,
                "analytic_pass_at_1": report.analytic_pass_at_1,
                "analytic_pass_at_k": report.analytic_pass_at_k,
                "mean_token_entropy": report.mean_token_entropy,
            });
            println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
        }
        Command::PlotData { kind, out, runs } => {
            let kind: PlotKind = kind.parse()?;
            let runs = runs.iter().map(|d| RunData::load(d)).collect::<LabResult<Vec<_>>>()?;
            match out {
                Some(path) => {
                    let file = std::fs::File::create(&path).map_err(LabError::io(&path))?;
                    emit_plot_data(kind, &runs, file)?;
                }
                None => emit_plot_data(kind, &runs, std::io::stdout().lock())?,
            }
        }
        Command::ShowConfig { config } => print!("{}", config.resolve()?.to_toml()),
        Command::ListPresets => {
            for p in PRESETS {
                println!("{p}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
