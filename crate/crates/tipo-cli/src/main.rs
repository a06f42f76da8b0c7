//! `tipo` — command line front end for the trajectory-preference lab.
//!
//! Subcommands mirror the library pipeline: `gen` synthesizes a dataset,
//! `align` pads preference pairs into columns, `train` fits one method,
//! `eval` scores a checkpoint on a split, and `reproduce` re-runs the whole
//! multi-seed experiment and checks the headline trends.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 reproduction finished but a trend check failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tipo_core::align::align_pair;
use tipo_core::dataset::{Dataset, Split};
use tipo_core::metrics::{evaluate, report_rows, summary_row, REPORT_HEADER, SUMMARY_HEADER};
use tipo_core::objectives::Method;
use tipo_core::pipeline::{reproduce, write_outputs, RunConfig};
use tipo_core::policy::{load_checkpoint, save_checkpoint, PolicyParams};
use tipo_core::trainer::{train_pref, train_sft, Validator};
use tipo_core::traj::task_map;

#[derive(Parser)]
#[command(name = "tipo", version, about = "Desk-scale lab for trajectory preference methods")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a persona-branching task dataset into a directory.
    Gen {
        #[command(flatten)]
        config: ConfigArgs,
        /// Generator seed (overrides the configured one).
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for tasks/trajectories/pairs/splits files.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Align every preference pair of a dataset and write the padded view.
    Align {
        /// Dataset directory written by `gen`.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Output JSONL file of aligned pairs.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Train one method on a dataset and save the checkpoint plus logs.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory written by `gen`.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// sft, dpo, step_dpo, tipo_wo_pw, tipo_wo_pg, or tipo.
        #[arg(long, default_value = "tipo")]
        method: String,
        /// Training seed (overrides the configured one).
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for checkpoint.json and the stage logs.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Roll out a checkpoint on a split and print the metric summary.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Dataset directory written by `gen`.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Checkpoint file written by `train`.
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// train, val, or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Label for the method column of the reports.
        #[arg(long, default_value = "policy")]
        method: String,
        /// Optional directory for report.csv and summary.csv.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Run the full multi-seed experiment and verify the expected trends.
    Reproduce {
        #[command(flatten)]
        config: ConfigArgs,
        /// Base seed; the three run seeds are derived from it.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Optional directory for summary.csv and report.csv.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

/// Shared configuration plumbing: an optional JSON file plus dotted-path
/// overrides, e.g. `--set train.lr_pref=0.5 --set gen.n_tasks=40`.
#[derive(Args)]
struct ConfigArgs {
    /// JSON file holding the whole-experiment configuration.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration field by dotted path.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
}

enum CliError {
    /// The request itself is unusable: bad flags, bad override expressions,
    /// unknown methods or splits, rejected configuration.
    Usage(String),
    /// The bytes on disk are missing or bad: datasets, checkpoints, io.
    Data(String),
}

impl From<tipo_core::Error> for CliError {
    fn from(e: tipo_core::Error) -> Self {
        match e.exit_code() {
            1 => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(1),
            CliError::Data(_) => ExitCode::from(2),
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

impl ConfigArgs {
    /// Builds the effective configuration: file (or `base` when absent),
    /// then the `--set` overrides, then strict deserialization so unknown
    /// keys and type mismatches are rejected, then semantic validation.
    fn resolve(&self, base: RunConfig) -> Result<RunConfig, CliError> {
        let mut value = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| {
                    CliError::Usage(format!("{} is not valid JSON: {e}", path.display()))
                })?
            }
            None => serde_json::to_value(&base)
                .map_err(|e| CliError::Usage(format!("cannot encode defaults: {e}")))?,
        };
        for expr in &self.set {
            apply_override(&mut value, expr)?;
        }
        let cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| CliError::Usage(format!("bad configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Sets `path.to.field=value` inside a JSON tree. The value is parsed as
/// JSON when possible and falls back to a plain string, so both
/// `train.lr_pref=0.5` and `train.objective.method=step_dpo` work.
fn apply_override(root: &mut serde_json::Value, expr: &str) -> Result<(), CliError> {
    let (path, raw) = expr
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set needs PATH=VALUE, got {expr:?}")))?;
    if path.is_empty() {
        return Err(CliError::Usage(format!("--set needs a non-empty path, got {expr:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let mut segments = path.split('.').peekable();
    while let Some(seg) = segments.next() {
        let map = node.as_object_mut().ok_or_else(|| {
            CliError::Usage(format!("--set path {path:?} descends into a non-object"))
        })?;
        if segments.peek().is_none() {
            map.insert(seg.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(seg.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one segment");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests arrive here too; only real parse
            // problems should exit non-zero.
            let is_usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(u8::from(is_usage));
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.cmd {
        Cmd::Gen { config, seed, out } => cmd_gen(&config, seed, &out),
        Cmd::Align { data, out } => cmd_align(&data, &out),
        Cmd::Train { config, data, method, seed, out } => {
            cmd_train(&config, &data, &method, seed, &out)
        }
        Cmd::Eval { config, data, checkpoint, split, method, out } => {
            cmd_eval(&config, &data, &checkpoint, &split, &method, out.as_deref())
        }
        Cmd::Reproduce { config, seed, out } => cmd_reproduce(&config, seed, out.as_deref()),
    }
}

fn cmd_gen(config: &ConfigArgs, seed: Option<u64>, out: &Path) -> Result<ExitCode, CliError> {
    let mut cfg = config.resolve(RunConfig::default())?;
    if let Some(seed) = seed {
        cfg.gen.seed = seed;
    }
    let dataset = Dataset::from_gen(tipo_core::synthgen::generate(&cfg.gen)?);
    dataset.check_split_hygiene()?;
    dataset.save(out)?;
    println!(
        "wrote {} tasks, {} trajectories, {} pairs to {} (train/val/test = {}/{}/{})",
        dataset.tasks.len(),
        dataset.trajectories.len(),
        dataset.pairs.len(),
        out.display(),
        dataset.split_ids(Split::Train).len(),
        dataset.split_ids(Split::Val).len(),
        dataset.split_ids(Split::Test).len(),
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_align(data: &Path, out: &Path) -> Result<ExitCode, CliError> {
    let dataset = Dataset::load(data)?;
    let aligned = dataset.pairs.iter().map(align_pair).collect::<tipo_core::Result<Vec<_>>>()?;
    tipo_core::align::write_aligned(out, &aligned)?;
    let columns: usize = aligned.iter().map(|a| a.len()).sum();
    let padded: usize = aligned.iter().map(|a| a.placeholder_columns().len()).sum();
    println!(
        "aligned {} pairs into {columns} columns ({padded} padding slots) at {}",
        aligned.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(
    config: &ConfigArgs,
    data: &Path,
    method: &str,
    seed: Option<u64>,
    out: &Path,
) -> Result<ExitCode, CliError> {
    let method: Method =
        method.parse().map_err(|e: tipo_core::Error| CliError::Usage(e.to_string()))?;
    let mut cfg = config.resolve(RunConfig::default())?;
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }
    let train_cfg = cfg.train.clone().with_method(method);

    let dataset = Dataset::load(data)?;
    dataset.check_split_hygiene()?;
    let tasks = task_map(&dataset.tasks);
    let train_trajs = dataset.split_trajectories(Split::Train);

    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
    let (sft_params, sft_log) = train_sft(&tasks, &train_trajs, &train_cfg)?;
    sft_log.write_csv(&out.join("sft_log.csv"))?;

    let params = if method == Method::Sft {
        println!(
            "sft: {} epochs, final loss {:.6}",
            train_cfg.epochs_sft,
            sft_log.last_train_loss().unwrap_or(f64::NAN)
        );
        sft_params
    } else {
        let train_pairs = dataset.split_pairs(Split::Train);
        let has_val = !dataset.split_ids(Split::Val).is_empty();
        let mut probe = |p: &PolicyParams| -> tipo_core::Result<f64> {
            Ok(evaluate(p, &dataset, Split::Val, &cfg.eval)?.summary.compliance)
        };
        let validator: Option<Validator<'_>> = if has_val { Some(&mut probe) } else { None };
        let run = train_pref(&sft_params, &tasks, &train_pairs, &train_cfg, validator)?;
        run.log.write_csv(&out.join("pref_log.csv"))?;
        println!(
            "{}: kept epoch {} of {}{}",
            method.label(),
            run.best_epoch,
            train_cfg.epochs_pref,
            if run.stopped_early { " (stopped early)" } else { "" }
        );
        run.params
    };

    let checkpoint = out.join("checkpoint.json");
    save_checkpoint(&checkpoint, &params)?;
    println!("checkpoint written to {}", checkpoint.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(
    config: &ConfigArgs,
    data: &Path,
    checkpoint: &Path,
    split: &str,
    method: &str,
    out: Option<&Path>,
) -> Result<ExitCode, CliError> {
    let split: Split =
        split.parse().map_err(|e: tipo_core::Error| CliError::Usage(e.to_string()))?;
    let cfg = config.resolve(RunConfig::default())?;
    let dataset = Dataset::load(data)?;
    let params = load_checkpoint(checkpoint)?;
    let output = evaluate(&params, &dataset, split, &cfg.eval)?;

    println!("{SUMMARY_HEADER}");
    println!("{}", summary_row(method, &output.summary));
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
        let mut report = String::from(REPORT_HEADER);
        report.push('\n');
        for row in report_rows(method, &output.rows) {
            report.push_str(&row);
            report.push('\n');
        }
        let report_path = dir.join("report.csv");
        std::fs::write(&report_path, report)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", report_path.display())))?;
        let summary_path = dir.join("summary.csv");
        let summary = format!("{SUMMARY_HEADER}\n{}\n", summary_row(method, &output.summary));
        std::fs::write(&summary_path, summary)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", summary_path.display())))?;
        println!("reports written to {}", dir.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_reproduce(config: &ConfigArgs, seed: u64, out: Option<&Path>) -> Result<ExitCode, CliError> {
    let cfg = config.resolve(RunConfig::reproduce_defaults())?;
    let outcome = reproduce(&cfg, seed)?;
    println!("{}", outcome.table());
    if let Some(dir) = out {
        write_outputs(&outcome, dir)?;
        println!("summary.csv and report.csv written to {}", dir.display());
    }
    if outcome.trends_pass() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: one or more trend checks failed");
        Ok(ExitCode::from(3))
    }
}
