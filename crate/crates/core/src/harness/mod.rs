//! Batch execution over a dataset with bounded concurrency and resume.
//!
//! A run directory holds:
//!
//! * `run.json` - run id, mode and configuration
//! * `outcomes.jsonl` - one [`TaskResult`] per finished task (the resume key)
//! * `transcripts.jsonl` - every [`TranscriptRecord`](crate::audit::TranscriptRecord)
//! * `report.json` / `report.txt` - scored summary
//!
//! A task's transcript batch is written before its outcome line, so a task
//! counts as done only once both are on disk.

pub mod report;
pub mod scoring;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use report::{build_report, render_table, Bucket, PerTaskScore, RunReport};
pub use scoring::{accuracy, extract_choice, lcs_len, rouge_l, rouge_l_tokens, tokenize};

use crate::audit::{group_transcripts, read_jsonl, JsonlSink, TranscriptRecord};
use crate::error::HarnessError;
use crate::pool::map_bounded;
use crate::prompts::PROMPT_VERSION;
use crate::scheduler::{Scheduler, TaskOutcome};
use crate::task::{Mode, RunConfig, Task};

pub const META_FILE: &str = "run.json";
pub const OUTCOMES_FILE: &str = "outcomes.jsonl";
pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

/// Stored result of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TaskResult {
    /// Transcript records are stored separately and omitted here.
    Completed { outcome: TaskOutcome },
    Failed {
        task_id: String,
        error: String,
        wall_seconds: f64,
    },
}

impl TaskResult {
    pub fn task_id(&self) -> &str {
        match self {
            TaskResult::Completed { outcome } => &outcome.task_id,
            TaskResult::Failed { task_id, .. } => task_id,
        }
    }

    pub fn is_completed(&self) -> bool {
        matches!(self, TaskResult::Completed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub prompt_version: String,
    pub config: RunConfig,
}

impl RunMeta {
    pub fn load(run_dir: &Path) -> Result<Self, HarnessError> {
        let path = run_dir.join(META_FILE);
        let raw = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(path.display().to_string(), e))?;
        serde_json::from_str(&raw).map_err(|e| HarnessError::json(path.display().to_string(), e))
    }

    fn store(&self, run_dir: &Path) -> Result<(), HarnessError> {
        let path = run_dir.join(META_FILE);
        let json = serde_json::to_string_pretty(self).map_err(|e| HarnessError::json("run meta", e))?;
        std::fs::write(&path, json + "\n").map_err(|e| HarnessError::io(path.display().to_string(), e))
    }
}

/// Latest stored result per task id.
pub fn load_results(run_dir: &Path) -> Result<BTreeMap<String, TaskResult>, HarnessError> {
    let mut map = BTreeMap::new();
    for r in read_jsonl::<TaskResult>(&run_dir.join(OUTCOMES_FILE))? {
        map.insert(r.task_id().to_string(), r);
    }
    Ok(map)
}

/// Completed outcomes with their transcripts reattached.
pub fn load_outcomes(run_dir: &Path) -> Result<BTreeMap<String, TaskOutcome>, HarnessError> {
    let mut transcripts = group_transcripts(read_jsonl::<TranscriptRecord>(&run_dir.join(TRANSCRIPTS_FILE))?);
    Ok(load_results(run_dir)?
        .into_iter()
        .filter_map(|(id, r)| match r {
            TaskResult::Completed { mut outcome } => {
                outcome.transcript = transcripts.remove(&id).unwrap_or_default();
                Some((id, outcome))
            }
            TaskResult::Failed { .. } => None,
        })
        .collect())
}

pub fn write_report(run_dir: &Path, report: &RunReport) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(report).map_err(|e| HarnessError::json("report", e))?;
    let path = run_dir.join(REPORT_JSON);
    std::fs::write(&path, json + "\n").map_err(|e| HarnessError::io(path.display().to_string(), e))?;
    let path = run_dir.join(REPORT_TXT);
    std::fs::write(&path, render_table(report)).map_err(|e| HarnessError::io(path.display().to_string(), e))
}

/// Recompute the report of a stored run from its outcome file. Makes no
/// model calls.
pub fn score_run(run_dir: &Path, dataset: &[Task]) -> Result<RunReport, HarnessError> {
    let meta = RunMeta::load(run_dir)?;
    let results = load_results(run_dir)?;
    let report = build_report(&meta.run_id, meta.mode, dataset, &results);
    write_report(run_dir, &report)?;
    Ok(report)
}

/// Options for [`run_benchmark`] beyond the scheduler and config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub run_id: String,
    pub dataset_path: Option<PathBuf>,
}

/// Run every task not already completed in `out_dir`, then score the whole
/// dataset. Per-task failures are stored and reported, not propagated; only
/// I/O failures abort the run.
pub fn run_benchmark(
    dataset: &[Task],
    scheduler: &Scheduler,
    cfg: &RunConfig,
    out_dir: &Path,
    options: &RunOptions,
) -> Result<RunReport, HarnessError> {
    if dataset.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir.display().to_string(), e))?;
    if let Ok(existing) = RunMeta::load(out_dir) {
        if existing.mode != cfg.mode {
            return Err(HarnessError::RunMismatch(format!(
                "{} was run in mode {}, not {}",
                out_dir.display(),
                existing.mode,
                cfg.mode
            )));
        }
    }
    let meta = RunMeta {
        run_id: options.run_id.clone(),
        mode: cfg.mode,
        dataset: options.dataset_path.clone(),
        prompt_version: PROMPT_VERSION.to_string(),
        config: cfg.clone(),
    };
    meta.store(out_dir)?;

    let done: BTreeSet<String> = load_results(out_dir)?
        .into_values()
        .filter(TaskResult::is_completed)
        .map(|r| r.task_id().to_string())
        .collect();
    let pending: Vec<&Task> = dataset.iter().filter(|t| !done.contains(&t.id)).collect();

    let transcripts = JsonlSink::open(out_dir.join(TRANSCRIPTS_FILE))?;
    let outcomes = JsonlSink::open(out_dir.join(OUTCOMES_FILE))?;
    let writes = map_bounded(&pending, cfg.concurrency, |task| {
        let started = scheduler.clock.now();
        let result = match scheduler.run_task(task, cfg) {
            Ok(mut outcome) => {
                transcripts.append(&outcome.transcript)?;
                outcome.transcript.clear();
                TaskResult::Completed { outcome }
            }
            Err(e) => TaskResult::Failed {
                task_id: task.id.clone(),
                error: e.to_string(),
                wall_seconds: (scheduler.clock.now() - started).max(0.0),
            },
        };
        outcomes.append(&[result])
    });
    writes.into_iter().collect::<Result<(), _>>()?;

    let report = build_report(&meta.run_id, meta.mode, dataset, &load_results(out_dir)?);
    write_report(out_dir, &report)?;
    Ok(report)
}

/// Deterministic sample of `n` tasks without replacement, returned in
/// dataset order. The same dataset order, `n` and `seed` always give the
/// same subset, across processes and platforms.
pub fn sample_subset(dataset: &[Task], n: usize, seed: u64) -> Result<Vec<Task>, HarnessError> {
    if n > dataset.len() {
        return Err(HarnessError::SubsetTooLarge {
            requested: n,
            available: dataset.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, dataset.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| dataset[i].clone()).collect())
}
