//! Aggregate run metrics and their plain-text table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::scoring::{extract_choice, rouge_l};
use super::TaskResult;
use crate::scheduler::Termination;
use crate::task::{Mode, Task};

/// Histogram bucket: a termination reason, or a task that failed outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Answered,
    BudgetExhausted,
    StepCapReached,
    MalformedFallback,
    Error,
}

impl Bucket {
    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::Answered => "answered",
            Bucket::BudgetExhausted => "budget_exhausted",
            Bucket::StepCapReached => "step_cap_reached",
            Bucket::MalformedFallback => "malformed_fallback",
            Bucket::Error => "error",
        }
    }
}

impl From<Termination> for Bucket {
    fn from(t: Termination) -> Self {
        match t {
            Termination::Answered => Bucket::Answered,
            Termination::BudgetExhausted => Bucket::BudgetExhausted,
            Termination::StepCapReached => Bucket::StepCapReached,
            Termination::MalformedFallback => Bucket::MalformedFallback,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerTaskScore {
    pub task_id: String,
    /// Extracted option letter for multiple-choice tasks, raw answer text
    /// otherwise.
    pub predicted: Option<String>,
    pub gold: Option<String>,
    /// Exact-match result, multiple-choice tasks with a gold answer only.
    pub correct: Option<bool>,
    /// Open-ended tasks with a gold answer only.
    pub rouge_l: Option<f64>,
    pub seconds: f64,
    pub bucket: Bucket,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub mode: Mode,
    pub n_tasks: usize,
    pub accuracy: Option<f64>,
    pub rouge_l: Option<f64>,
    pub mean_seconds_per_sample: f64,
    /// Retry backoff, already counted in the seconds above.
    pub mean_backoff_seconds: f64,
    /// Over tasks that produced an outcome (errored tasks excluded).
    pub mean_crc_steps: f64,
    pub mean_pvp_calls: f64,
    pub termination_histogram: BTreeMap<Bucket, usize>,
    pub per_task: Vec<PerTaskScore>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Gold option letter of a multiple-choice task: either the stored letter or
/// the option whose text equals the stored answer.
fn gold_letter(task: &Task) -> Option<char> {
    task.gold_answer
        .as_deref()
        .and_then(|g| extract_choice(g, &task.options))
}

/// Score every dataset task against its stored result. Tasks without a
/// result are scored as errors.
pub fn build_report(run_id: &str, mode: Mode, dataset: &[Task], results: &BTreeMap<String, TaskResult>) -> RunReport {
    let mut histogram: BTreeMap<Bucket, usize> = [
        Bucket::Answered,
        Bucket::BudgetExhausted,
        Bucket::StepCapReached,
        Bucket::MalformedFallback,
        Bucket::Error,
    ]
    .into_iter()
    .map(|b| (b, 0))
    .collect();

    let mut per_task = Vec::with_capacity(dataset.len());
    let mut crc_steps = Vec::new();
    let mut pvp_calls = Vec::new();
    let mut backoff = Vec::new();
    for task in dataset {
        let result = results.get(&task.id);
        let (answer, seconds, bucket) = match result {
            Some(TaskResult::Completed { outcome }) => {
                crc_steps.push(outcome.crc_steps as f64);
                pvp_calls.push(outcome.pvp_calls as f64);
                backoff.push(outcome.backoff_seconds);
                (outcome.final_answer.clone(), outcome.wall_seconds, outcome.termination.into())
            }
            Some(TaskResult::Failed { wall_seconds, .. }) => (None, *wall_seconds, Bucket::Error),
            None => (None, 0.0, Bucket::Error),
        };
        *histogram.entry(bucket).or_default() += 1;

        let score = if task.is_multiple_choice() {
            let predicted = answer.as_deref().and_then(|a| extract_choice(a, &task.options));
            let gold = gold_letter(task);
            PerTaskScore {
                task_id: task.id.clone(),
                predicted: predicted.map(String::from),
                gold: gold.map(String::from),
                correct: gold.map(|g| predicted == Some(g)),
                rouge_l: None,
                seconds,
                bucket,
            }
        } else {
            let rouge = task
                .gold_answer
                .as_deref()
                .map(|gold| rouge_l(answer.as_deref().unwrap_or(""), gold));
            PerTaskScore {
                task_id: task.id.clone(),
                predicted: answer,
                gold: task.gold_answer.clone(),
                correct: None,
                rouge_l: rouge,
                seconds,
                bucket,
            }
        };
        per_task.push(score);
    }

    let accuracy = mean(per_task.iter().filter_map(|s| s.correct.map(|c| c as u8 as f64)));
    let rouge = mean(per_task.iter().filter_map(|s| s.rouge_l));
    RunReport {
        run_id: run_id.to_string(),
        mode,
        n_tasks: dataset.len(),
        accuracy,
        rouge_l: rouge,
        mean_seconds_per_sample: mean(per_task.iter().map(|s| s.seconds)).unwrap_or(0.0),
        mean_backoff_seconds: mean(backoff).unwrap_or(0.0),
        mean_crc_steps: mean(crc_steps).unwrap_or(0.0),
        mean_pvp_calls: mean(pvp_calls).unwrap_or(0.0),
        termination_histogram: histogram,
        per_task,
    }
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.1}", x * 100.0)).unwrap_or_else(|| "-".into())
}

/// Plain-text summary laid out like a results table: one row per method
/// with accuracy, ROUGE-L and time per sample.
pub fn render_table(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "run: {}  tasks: {}", report.run_id, report.n_tasks);
    let rule = format!("+{:-<14}+{:-<9}+{:-<9}+{:-<17}+", "", "", "", "");
    let _ = writeln!(out, "{rule}");
    let _ = writeln!(out, "| {:<12} | {:>7} | {:>7} | {:>15} |", "Method", "ACC.", "ROUGE-L", "Time (s/sample)");
    let _ = writeln!(out, "{rule}");
    let _ = writeln!(
        out,
        "| {:<12} | {:>7} | {:>7} | {:>15.2} |",
        report.mode.as_str(),
        pct(report.accuracy),
        pct(report.rouge_l),
        report.mean_seconds_per_sample
    );
    let _ = writeln!(out, "{rule}");
    let _ = writeln!(
        out,
        "mean CRC steps: {:.2}  mean PVP calls: {:.2}  mean backoff (s): {:.2}",
        report.mean_crc_steps, report.mean_pvp_calls, report.mean_backoff_seconds
    );
    let hist = report
        .termination_histogram
        .iter()
        .map(|(b, n)| format!("{}={n}", b.as_str()))
        .collect::<Vec<_>>()
        .join(" ");
    let _ = writeln!(out, "terminations: {hist}");
    out
}
