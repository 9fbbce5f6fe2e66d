//! Command-line entry point.
//!
//! Every subcommand takes an optional `--config FILE` plus `key=value`
//! overrides. Precedence: built-in defaults, then the file, then overrides
//! in the order given. Exit codes: 0 success, 1 usage or validation error,
//! 2 numeric failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::eval::{
    ablation_points, eval_tasks, exposure_bias_probe, gradcheck_suite, horizon_sweep, run_ablation, short_accuracy,
    AblationKind, AblationOptions, SweepSpec, GRADCHECK_TOLERANCE,
};
use crate::jsonl;
use crate::policy::checkpoint;
use crate::tasks::{TaskKind, TaskRecord};
use crate::trainer::{task_stream, train_pipeline, write_run, Manifest, MANIFEST_FILE, REPORTS_DIR, STAGE2_CKPT};

#[derive(Debug, Parser)]
#[command(name = "dgrpo-lab", version, about = "Sequence-policy optimization laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Flat key=value config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// key=value overrides, applied after the config file.
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write `data.count` tasks drawn from the training mixture as JSON lines.
    MakeData(Common),
    /// Finite-difference check of every objective.
    Gradcheck {
        /// Random instances per objective and policy family.
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Run stage 1 and stage 2 into `run.dir`.
    Train(Common),
    /// Horizon sweep, short-task accuracy and exposure probe of a checkpoint.
    Eval(Common),
    /// Run an ablation grid (`ablate.kind`, `ablate.grid`, `ablate.seeds`).
    Ablate(Common),
    /// Print the configuration recorded in `run.dir/manifest.json`.
    ReportManifest(Common),
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load(common: &Common) -> Result<Config> {
    Config::load(common.config.as_deref(), &common.overrides)
}

fn write_json_lines<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<PathBuf> {
    let path = dir.join(name);
    jsonl::write(&path, rows)?;
    Ok(path)
}

fn run(cmd: Command) -> Result<i32> {
    let mut out = std::io::stdout().lock();
    match cmd {
        Command::MakeData(common) => {
            let cfg = load(&common)?;
            let mut stream = task_stream(&cfg, "stage1-data")?;
            let records = (0..cfg.data.count)
                .map(|_| stream.next_task().map(|t| t.to_record()))
                .collect::<Result<Vec<TaskRecord>>>()?;
            let path = if cfg.data.out.is_empty() {
                Path::new(&cfg.run.dir).join("data.jsonl")
            } else {
                PathBuf::from(&cfg.data.out)
            };
            jsonl::write(&path, &records)?;
            let acc = stream.accounts();
            let _ = writeln!(
                out,
                "wrote {} tasks to {} (long-token share {:.4})",
                records.len(),
                path.display(),
                acc.long_share()
            );
            Ok(0)
        }
        Command::Gradcheck { instances, common } => {
            let cfg = load(&common)?;
            let rows = gradcheck_suite(instances, cfg.seed)?;
            let _ = writeln!(out, "{:<8} {:<8} {:>9} {:>14}  result", "objective", "policy", "instances", "max_rel_err");
            for r in &rows {
                let verdict = if r.passed { "PASS" } else { "FAIL" };
                let _ = writeln!(
                    out,
                    "{:<8} {:<8} {:>9} {:>14.3e}  {verdict}",
                    r.objective, r.policy, r.instances, r.max_rel_error
                );
            }
            if rows.iter().all(|r| r.passed) {
                Ok(0)
            } else {
                eprintln!("gradient check exceeded relative error {GRADCHECK_TOLERANCE:e}");
                Ok(2)
            }
        }
        Command::Train(common) => {
            let cfg = load(&common)?;
            let run = train_pipeline(&cfg)?;
            let dir = PathBuf::from(&cfg.run.dir);
            write_run(&dir, &cfg, &run)?;
            let _ = writeln!(out, "run {} written to {} ({} updates)", cfg.run.id, dir.display(), run.metrics.len());
            match run.failure {
                None => Ok(0),
                Some(e) => Err(e),
            }
        }
        Command::Eval(common) => {
            let cfg = load(&common)?;
            let vocab = cfg.vocab()?;
            let ckpt = if cfg.eval.checkpoint.is_empty() {
                Path::new(&cfg.run.dir).join(STAGE2_CKPT)
            } else {
                PathBuf::from(&cfg.eval.checkpoint)
            };
            let policy = checkpoint::load(&ckpt)?;
            let spec = SweepSpec::from_config(&cfg)?;
            let sweep = horizon_sweep(&policy, &vocab, &spec)?;
            let reports = Path::new(&cfg.run.dir).join(REPORTS_DIR);
            write_json_lines(&reports, "sweep.jsonl", &sweep.cells)?;
            for c in &sweep.cells {
                let _ = writeln!(out, "{:<14} H={:<4} acc {:.3} ± {:.3}", c.kind.name(), c.horizon, c.mean, c.std);
            }
            let short = short_accuracy(&policy, &cfg, cfg.seed)?;
            let _ = writeln!(out, "short_arith acc {short:.3}");
            let probe_tasks = eval_tasks(TaskKind::LongForm, cfg.tasks.horizons[0], &cfg.tasks.params, &vocab, cfg.eval.n_per_cell, cfg.seed)?;
            let probe = exposure_bias_probe(
                &policy,
                &ckpt.display().to_string(),
                &[0.0, 0.1, 0.2, 0.5, 1.0],
                &probe_tasks,
                &vocab,
                &cfg.eval_decode()?,
                cfg.seed,
            )?;
            write_json_lines(&reports, "probe.jsonl", &probe.points)?;
            for p in &probe.points {
                let _ = writeln!(out, "probe q={:<4} acc {:.3}", p.q, p.accuracy);
            }
            Ok(0)
        }
        Command::Ablate(common) => {
            let cfg = load(&common)?;
            let kind: AblationKind = cfg.ablate.kind.parse()?;
            let points = ablation_points(kind, &cfg.ablate.grid)?;
            let seeds: Vec<u64> = (0..cfg.ablate.seeds as u64).map(|i| cfg.seed + i).collect();
            let report = run_ablation(kind, &points, &cfg, &seeds, AblationOptions::default())?;
            let dir = PathBuf::from(&cfg.run.dir);
            for r in &report.runs {
                let sub = dir.join(format!("{kind}-{}-seed{}", r.label, r.seed));
                jsonl::write(&sub.join(crate::trainer::METRICS_FILE), &r.metrics)?;
            }
            write_json_lines(&dir.join(REPORTS_DIR), &format!("ablation-{kind}.jsonl"), &report.rows)?;
            let _ = writeln!(out, "{:<10} {:>15} {:>15} {:>15}", kind, "long_acc", "short_acc", "final_reward");
            for r in &report.rows {
                let _ = writeln!(
                    out,
                    "{:<10} {:>7.3} ± {:.3} {:>7.3} ± {:.3} {:>7.3} ± {:.3}",
                    r.label,
                    r.long_accuracy.mean,
                    r.long_accuracy.std,
                    r.short_accuracy.mean,
                    r.short_accuracy.std,
                    r.final_reward.mean,
                    r.final_reward.std
                );
            }
            Ok(0)
        }
        Command::ReportManifest(common) => {
            let cfg = load(&common)?;
            let dir = PathBuf::from(&cfg.run.dir);
            let manifest = Manifest::load(&dir.join(MANIFEST_FILE))?;
            let missing = manifest.missing_artifacts(&dir);
            if !missing.is_empty() {
                return Err(Error::input(format!("missing artifacts: {}", missing.join(", "))));
            }
            let _ = writeln!(out, "# run {} (seed {}, v{})", manifest.run_id, manifest.seed, manifest.tool_version);
            let _ = write!(out, "{}", manifest.config()?.to_text());
            Ok(0)
        }
    }
}
