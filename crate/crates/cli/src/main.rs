//! `csmr`: run, score, audit, selftest and convert.
//!
//! Exit codes: 0 success, 1 task-level error, 2 configuration error.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use csmr_core::audit::{audit_run_dir, Judge};
use csmr_core::clock::SystemClock;
use csmr_core::config::{self, FileConfig};
use csmr_core::convert::{self, SourceFormat};
use csmr_core::gateway::{HttpBackend, MockBackend, MockScript, ModelBackend};
use csmr_core::harness::{
    self, load_outcomes, render_table, run_benchmark, sample_subset, Bucket, RunMeta, RunOptions,
    RunReport,
};
use csmr_core::scheduler::Scheduler;
use csmr_core::selftest;
use csmr_core::task::{load_dataset, Mode, Task};

#[derive(Parser, Debug)]
#[command(name = "csmr", version, about = "Text-only reasoning with on-demand visual queries")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. `run.t_max=4000`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a dataset through the reasoning loop and score it.
    Run(RunArgs),
    /// Recompute metrics of a stored run without model calls.
    Score(ScoreArgs),
    /// Judge stored transcripts for hallucinated visual content.
    Audit(AuditArgs),
    /// Replay the bundled mock scripts against golden transcripts.
    Selftest(SelftestArgs),
    /// Convert a benchmark-native file to the canonical task format.
    Convert(ConvertArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Http,
    Mock,
}

#[derive(Args, Debug)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "http")]
    backend: BackendKind,
    /// Mock script (JSON keyed by task id); required with `--backend mock`.
    #[arg(long, value_name = "PATH")]
    mock_script: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long, value_name = "PATH")]
    dataset: PathBuf,
    /// Run directory; an existing one is resumed.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long = "t-max")]
    t_max: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run a seeded random subset of this many tasks.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, value_name = "URL")]
    crc_endpoint: Option<String>,
    #[arg(long, value_name = "URL")]
    pvp_endpoint: Option<String>,
    #[arg(long)]
    run_id: Option<String>,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// Run directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Dataset to score against; defaults to the one recorded in the run.
    #[arg(long, value_name = "PATH")]
    dataset: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AuditArgs {
    /// Run directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_name = "PATH")]
    dataset: Option<PathBuf>,
    /// Number of completed outcomes to judge (default from config).
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long, value_name = "URL")]
    judge_endpoint: Option<String>,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    /// Regenerate golden transcripts into this directory instead of checking.
    #[arg(long, value_name = "DIR", hide = true)]
    write_goldens: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ConvertArgs {
    /// Source format: scienceqa, m3cot or llava_wild.
    #[arg(long)]
    format: SourceFormat,
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Reference answers (llava_wild only).
    #[arg(long, value_name = "PATH")]
    answers: Option<PathBuf>,
    /// Keep only this split (scienceqa only).
    #[arg(long)]
    split: Option<String>,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

enum Failure {
    Config(String),
    Task(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Task(_) => 1,
            Failure::Config(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Task(m) => m,
        }
    }
}

type CmdResult = Result<(), Failure>;

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn task_err(e: impl std::fmt::Display) -> Failure {
    Failure::Task(e.to_string())
}

fn load_config(cli: &Cli, extra: Vec<String>) -> Result<FileConfig, Failure> {
    let mut overrides = cli.overrides.clone();
    overrides.extend(extra);
    config::load(cli.config.as_deref(), &overrides).map_err(config_err)
}

fn quoted(s: &str) -> String {
    format!("{s:?}")
}

fn backend(args: &BackendArgs, cfg: &FileConfig, dataset_path: Option<&Path>) -> Result<Arc<dyn ModelBackend>, Failure> {
    match args.backend {
        BackendKind::Mock => {
            let path = args
                .mock_script
                .as_deref()
                .ok_or_else(|| Failure::Config("--backend mock requires --mock-script".into()))?;
            let script = MockScript::load(path).map_err(config_err)?;
            Ok(Arc::new(MockBackend::new(script)))
        }
        BackendKind::Http => {
            if args.mock_script.is_some() {
                return Err(Failure::Config("--mock-script is only valid with --backend mock".into()));
            }
            let root = cfg
                .harness
                .image_root
                .clone()
                .or_else(|| dataset_path.and_then(Path::parent).map(Path::to_path_buf));
            let mut http = HttpBackend::new();
            if let Some(root) = root {
                http = http.with_image_root(root);
            }
            Ok(Arc::new(http))
        }
    }
}

fn dataset_for(run_dir: &Path, explicit: Option<&Path>) -> Result<(PathBuf, Vec<Task>), Failure> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => RunMeta::load(run_dir)
            .map_err(config_err)?
            .dataset
            .ok_or_else(|| Failure::Config("run has no recorded dataset; pass --dataset".into()))?,
    };
    let tasks = load_dataset(&path).map_err(config_err)?;
    Ok((path, tasks))
}

fn print_report(report: &RunReport) {
    print!("{}", render_table(report));
}

fn failed_tasks(report: &RunReport) -> usize {
    report.termination_histogram.get(&Bucket::Error).copied().unwrap_or(0)
}

fn cmd_run(cli: &Cli, args: &RunArgs) -> CmdResult {
    let mut extra = Vec::new();
    if let Some(m) = args.mode {
        extra.push(format!("run.mode={}", quoted(m.as_str())));
    }
    if let Some(c) = args.concurrency {
        extra.push(format!("run.concurrency={c}"));
    }
    if let Some(t) = args.t_max {
        extra.push(format!("run.t_max={t}"));
    }
    if let Some(s) = args.seed {
        extra.push(format!("harness.seed={s}"));
    }
    if let Some(u) = &args.crc_endpoint {
        extra.push(format!("endpoints.crc.base_url={}", quoted(u)));
    }
    if let Some(u) = &args.pvp_endpoint {
        extra.push(format!("endpoints.pvp.base_url={}", quoted(u)));
    }
    let cfg = load_config(cli, extra)?;

    let mut tasks = load_dataset(&args.dataset).map_err(config_err)?;
    if let Some(n) = args.sample {
        tasks = sample_subset(&tasks, n, cfg.harness.seed).map_err(config_err)?;
    }
    let backend = backend(&args.backend, &cfg, Some(&args.dataset))?;
    let scheduler = Scheduler::new(
        backend,
        cfg.endpoints.crc.clone(),
        cfg.endpoints.pvp.clone(),
        cfg.routing.clone(),
        Arc::new(SystemClock::new()),
    );
    let run_id = args
        .run_id
        .clone()
        .or_else(|| cfg.harness.run_id.clone())
        .unwrap_or_else(|| format!("{}-{}", cfg.run.mode, args.out.file_name().and_then(|s| s.to_str()).unwrap_or("run")));
    let options = RunOptions {
        run_id,
        dataset_path: Some(args.dataset.clone()),
    };
    let report = run_benchmark(&tasks, &scheduler, &cfg.run, &args.out, &options).map_err(task_err)?;
    print_report(&report);
    match failed_tasks(&report) {
        0 => Ok(()),
        n => Err(Failure::Task(format!("{n} task(s) failed; rerun the same command to retry them"))),
    }
}

fn cmd_score(args: &ScoreArgs) -> CmdResult {
    let (_, tasks) = dataset_for(&args.out, args.dataset.as_deref())?;
    let report = harness::score_run(&args.out, &tasks).map_err(task_err)?;
    print_report(&report);
    Ok(())
}

fn cmd_audit(cli: &Cli, args: &AuditArgs) -> CmdResult {
    let mut extra = Vec::new();
    if let Some(s) = args.seed {
        extra.push(format!("harness.seed={s}"));
    }
    if let Some(u) = &args.judge_endpoint {
        extra.push(format!("endpoints.judge.base_url={}", quoted(u)));
    }
    let cfg = load_config(cli, extra)?;
    let (dataset_path, tasks) = dataset_for(&args.out, args.dataset.as_deref())?;
    let mut outcomes = load_outcomes(&args.out).map_err(task_err)?;

    // Pair completed outcomes with their tasks in dataset order, then sample.
    let completed: Vec<Task> = tasks.into_iter().filter(|t| outcomes.contains_key(&t.id)).collect();
    let n = args.sample.unwrap_or(cfg.harness.audit_sample).min(completed.len());
    let chosen = sample_subset(&completed, n, cfg.harness.seed).map_err(config_err)?;
    let items: Vec<_> = chosen
        .into_iter()
        .map(|t| {
            let o = outcomes.remove(&t.id).expect("outcome present");
            (t, o)
        })
        .collect();

    let backend = backend(&args.backend, &cfg, Some(&dataset_path))?;
    let judge = Judge {
        backend: backend.as_ref(),
        endpoint: &cfg.endpoints.judge,
        params: cfg.judge_params,
        concurrency: args.concurrency.unwrap_or(cfg.run.concurrency),
    };
    let summary = audit_run_dir(&args.out, &judge, &items).map_err(task_err)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    if summary.failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Task(format!("{} judge call(s) failed", summary.failed.len())))
    }
}

fn cmd_selftest(args: &SelftestArgs) -> CmdResult {
    if let Some(dir) = &args.write_goldens {
        selftest::write_goldens(dir).map_err(task_err)?;
        println!("golden transcripts written to {}", dir.display());
        return Ok(());
    }
    let report = selftest::run().map_err(task_err)?;
    for o in &report.outcomes {
        println!(
            "{}: {:?} crc_steps={} pvp_calls={} state_tokens={}",
            o.task_id, o.termination, o.crc_steps, o.pvp_calls, o.state_tokens
        );
    }
    if report.passed() {
        println!("selftest passed ({} tasks)", report.tasks);
        Ok(())
    } else {
        Err(Failure::Task(report.mismatches.join("\n")))
    }
}

fn cmd_convert(args: &ConvertArgs) -> CmdResult {
    let open = |p: &Path| File::open(p).map(BufReader::new).map_err(|e| Failure::Config(format!("{}: {e}", p.display())));
    let tasks = match args.format {
        SourceFormat::ScienceQa => {
            let problems: serde_json::Value = serde_json::from_reader(open(&args.input)?).map_err(config_err)?;
            convert::scienceqa(&problems, args.split.as_deref())
        }
        SourceFormat::M3Cot => convert::m3cot(open(&args.input)?),
        SourceFormat::LlavaWild => {
            let answers = args
                .answers
                .as_deref()
                .ok_or_else(|| Failure::Config("llava_wild needs --answers".into()))?;
            convert::llava_wild(open(&args.input)?, open(answers)?)
        }
    }
    .map_err(task_err)?;
    let mut out = File::create(&args.out).map_err(|e| Failure::Config(format!("{}: {e}", args.out.display())))?;
    convert::write_dataset(&tasks, &mut out).map_err(task_err)?;
    out.flush().map_err(task_err)?;
    println!("wrote {} tasks to {}", tasks.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(&cli, a),
        Command::Score(a) => {
            // Validate the config even though scoring does not use it.
            load_config(&cli, Vec::new()).and_then(|_| cmd_score(a))
        }
        Command::Audit(a) => cmd_audit(&cli, a),
        Command::Selftest(a) => cmd_selftest(a),
        Command::Convert(a) => cmd_convert(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
