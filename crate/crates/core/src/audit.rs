//! Transcript persistence and the hallucination audit.
//!
//! Every model call made while running a task becomes one
//! [`TranscriptRecord`]. Stored runs can later be replayed into a judge model
//! that looks at the original image and the rendered dialogue and answers
//! YES (the dialogue describes the image inconsistently) or NO.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GatewayError, HarnessError};
use crate::gateway::{complete_vision, count_tokens, CallContext, EndpointConfig, ModelBackend};
use crate::pool::map_bounded;
use crate::prompts::{build_judge_prompt, PromptBundle, PROMPT_VERSION};
use crate::scheduler::TaskOutcome;
use crate::task::{GenerationParams, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Crc,
    Pvp,
    Judge,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Crc => "crc",
            Role::Pvp => "pvp",
            Role::Judge => "judge",
        })
    }
}

/// One model call. `step_index` is the 1-based position of the call within
/// its task, across roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub task_id: String,
    pub step_index: u32,
    pub role: Role,
    pub prompt_digest: String,
    pub raw_output: String,
    pub tokens: u64,
    pub latency: f64,
    pub prompt_version: String,
}

/// SHA-256 over the system text, user text and image flag.
pub fn digest_prompt(bundle: &PromptBundle) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bundle.system_text.as_bytes());
    hasher.update([0u8]);
    hasher.update(bundle.user_text.as_bytes());
    hasher.update([0u8, bundle.image_attached as u8]);
    hex::encode(hasher.finalize())
}

/// Append-only line-delimited JSON file. Appends from concurrent workers are
/// serialized; a batch is written under one lock so a task's records stay
/// contiguous.
#[derive(Debug)]
pub struct JsonlSink {
    path: PathBuf,
    file: Mutex<File>,
}

impl JsonlSink {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, HarnessError> {
        let path = path.into();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent.display().to_string(), e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| HarnessError::io(path.display().to_string(), e))?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append<T: Serialize>(&self, items: &[T]) -> Result<(), HarnessError> {
        let mut buf = String::new();
        for item in items {
            let line = serde_json::to_string(item).map_err(|e| HarnessError::json("serialize record", e))?;
            buf.push_str(&line);
            buf.push('\n');
        }
        let mut file = self.file.lock().expect("sink lock poisoned");
        file.write_all(buf.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| HarnessError::io(self.path.display().to_string(), e))
    }
}

/// Read every line of a JSONL file. A missing file reads as empty.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(HarnessError::io(path.display().to_string(), e)),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| HarnessError::json(format!("{}:{}", path.display(), i + 1), e))?;
        out.push(item);
    }
    Ok(out)
}

/// Group stored records by task. A record repeated under the same
/// `(task_id, step_index, role)` key (a task re-run after an interrupted
/// write) keeps its last occurrence.
pub fn group_transcripts(records: Vec<TranscriptRecord>) -> BTreeMap<String, Vec<TranscriptRecord>> {
    let mut keyed: BTreeMap<(String, u32, Role), TranscriptRecord> = BTreeMap::new();
    for r in records {
        keyed.insert((r.task_id.clone(), r.step_index, r.role), r);
    }
    let mut grouped: BTreeMap<String, Vec<TranscriptRecord>> = BTreeMap::new();
    for ((task_id, _, _), r) in keyed {
        grouped.entry(task_id).or_default().push(r);
    }
    grouped
}

/// Human-readable dialogue of a task's reasoning and perception turns, in
/// call order.
pub fn render_transcript(outcome: &TaskOutcome) -> String {
    let mut turns: Vec<&TranscriptRecord> = outcome
        .transcript
        .iter()
        .filter(|r| r.role != Role::Judge)
        .collect();
    turns.sort_by_key(|r| r.step_index);
    turns
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let label = match r.role {
                Role::Crc => "REASONING (text-only model)",
                Role::Pvp => "PERCEPTION (vision model)",
                Role::Judge => unreachable!(),
            };
            format!("Turn {} - {}:\n{}", i + 1, label, r.raw_output.trim())
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Extract a YES/NO verdict. Exactly one of the two words must appear as a
/// standalone token (any case); anything else is unparseable.
pub fn parse_verdict(raw: &str) -> Option<bool> {
    let mut yes = false;
    let mut no = false;
    for token in raw.split(|c: char| !c.is_alphanumeric()) {
        if token.eq_ignore_ascii_case("yes") {
            yes = true;
        } else if token.eq_ignore_ascii_case("no") {
            no = true;
        }
    }
    match (yes, no) {
        (true, false) => Some(true),
        (false, true) => Some(false),
        _ => None,
    }
}

/// A judge verdict for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditResult {
    pub task_id: String,
    pub judge_model: String,
    pub hallucinated: bool,
    pub judge_raw: String,
}

/// Stored line of an audit: a verdict, or a judgment that stayed
/// unparseable after one retry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JudgeEntry {
    Verdict(AuditResult),
    Unparseable {
        task_id: String,
        judge_model: String,
        judge_raw: String,
    },
}

impl JudgeEntry {
    pub fn key(&self) -> (&str, &str) {
        match self {
            JudgeEntry::Verdict(r) => (&r.task_id, &r.judge_model),
            JudgeEntry::Unparseable {
                task_id, judge_model, ..
            } => (task_id, judge_model),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub judge_model: String,
    pub n_outcomes: usize,
    pub n_judged: usize,
    pub n_hallucinated: usize,
    /// Hallucinated fraction of parseable verdicts; absent when none parsed.
    pub hallucination_rate: Option<f64>,
    pub unparseable: Vec<String>,
    /// Tasks whose judge call failed at the transport/provider level.
    pub failed: Vec<(String, String)>,
    pub results: Vec<AuditResult>,
}

pub fn summarize(judge_model: &str, n_outcomes: usize, entries: &[JudgeEntry], failed: Vec<(String, String)>) -> AuditSummary {
    let mut results = Vec::new();
    let mut unparseable = Vec::new();
    for entry in entries {
        match entry {
            JudgeEntry::Verdict(r) => results.push(r.clone()),
            JudgeEntry::Unparseable { task_id, .. } => unparseable.push(task_id.clone()),
        }
    }
    let n_hallucinated = results.iter().filter(|r| r.hallucinated).count();
    let hallucination_rate = (!results.is_empty()).then(|| n_hallucinated as f64 / results.len() as f64);
    AuditSummary {
        judge_model: judge_model.to_string(),
        n_outcomes,
        n_judged: results.len(),
        n_hallucinated,
        hallucination_rate,
        unparseable,
        failed,
        results,
    }
}

/// Judge settings: endpoint, sampling parameters and worker bound.
#[derive(Clone)]
pub struct Judge<'a> {
    pub backend: &'a dyn ModelBackend,
    pub endpoint: &'a EndpointConfig,
    pub params: GenerationParams,
    pub concurrency: usize,
}

/// Judge one outcome: at most two calls (one retry when the first reply has
/// no usable verdict).
pub fn judge_one(
    judge: &Judge<'_>,
    task: &Task,
    outcome: &TaskOutcome,
) -> Result<(JudgeEntry, Vec<TranscriptRecord>), GatewayError> {
    let bundle = build_judge_prompt(&render_transcript(outcome), task);
    let ctx = CallContext {
        task_id: &task.id,
        role: Role::Judge,
    };
    let mut records = Vec::new();
    let mut last_raw = String::new();
    for attempt in 1..=2u32 {
        let c = complete_vision(judge.backend, judge.endpoint, &bundle, &judge.params, &task.image_ref, ctx)?;
        records.push(TranscriptRecord {
            task_id: task.id.clone(),
            step_index: attempt,
            role: Role::Judge,
            prompt_digest: digest_prompt(&bundle),
            raw_output: c.text.clone(),
            tokens: count_tokens(&c, &c.text),
            latency: c.latency,
            prompt_version: PROMPT_VERSION.to_string(),
        });
        if let Some(hallucinated) = parse_verdict(&c.text) {
            return Ok((
                JudgeEntry::Verdict(AuditResult {
                    task_id: task.id.clone(),
                    judge_model: judge.endpoint.model_name.clone(),
                    hallucinated,
                    judge_raw: c.text,
                }),
                records,
            ));
        }
        last_raw = c.text;
    }
    Ok((
        JudgeEntry::Unparseable {
            task_id: task.id.clone(),
            judge_model: judge.endpoint.model_name.clone(),
            judge_raw: last_raw,
        },
        records,
    ))
}

/// Judge every outcome (in parallel up to `judge.concurrency`) and compute
/// the hallucination rate. Results are in input order.
pub fn judge_run(judge: &Judge<'_>, items: &[(Task, TaskOutcome)]) -> AuditSummary {
    let results = map_bounded(items, judge.concurrency, |(task, outcome)| judge_one(judge, task, outcome));
    let mut entries = Vec::new();
    let mut failed = Vec::new();
    for ((task, _), r) in items.iter().zip(results) {
        match r {
            Ok((entry, _)) => entries.push(entry),
            Err(e) => failed.push((task.id.clone(), e.to_string())),
        }
    }
    summarize(&judge.endpoint.model_name, items.len(), &entries, failed)
}

/// Audit a stored run directory idempotently: verdicts already stored for
/// `(task_id, judge model)` are reused, new ones are appended to
/// `audit/verdicts.jsonl`, judge calls to `audit/judge_transcripts.jsonl`,
/// and the summary is written to `audit/summary.json`.
pub fn audit_run_dir(run_dir: &Path, judge: &Judge<'_>, items: &[(Task, TaskOutcome)]) -> Result<AuditSummary, HarnessError> {
    let audit_dir = run_dir.join("audit");
    let verdict_path = audit_dir.join("verdicts.jsonl");
    let existing: Vec<JudgeEntry> = read_jsonl(&verdict_path)?;
    let model = judge.endpoint.model_name.as_str();
    let done: BTreeSet<String> = existing
        .iter()
        .filter(|e| e.key().1 == model)
        .map(|e| e.key().0.to_string())
        .collect();

    let verdicts = JsonlSink::open(&verdict_path)?;
    let judge_log = JsonlSink::open(audit_dir.join("judge_transcripts.jsonl"))?;
    let pending: Vec<&(Task, TaskOutcome)> = items.iter().filter(|(t, _)| !done.contains(&t.id)).collect();
    let fresh = map_bounded(&pending, judge.concurrency, |(task, outcome)| {
        let r = judge_one(judge, task, outcome);
        if let Ok((entry, records)) = &r {
            judge_log.append(records)?;
            verdicts.append(std::slice::from_ref(entry))?;
        }
        Ok::<_, HarnessError>(r)
    });

    let mut failed = Vec::new();
    for (item, r) in pending.iter().zip(fresh) {
        if let Err(e) = r? {
            failed.push((item.0.id.clone(), e.to_string()));
        }
    }

    let wanted: BTreeSet<&str> = items.iter().map(|(t, _)| t.id.as_str()).collect();
    let mut latest: BTreeMap<String, JudgeEntry> = BTreeMap::new();
    for entry in read_jsonl::<JudgeEntry>(&verdict_path)? {
        let (task_id, m) = entry.key();
        if m == model && wanted.contains(task_id) {
            latest.insert(task_id.to_string(), entry);
        }
    }
    let order: Vec<JudgeEntry> = items
        .iter()
        .filter_map(|(t, _)| latest.get(&t.id).cloned())
        .collect();
    let summary = summarize(model, items.len(), &order, failed);
    let json = serde_json::to_string_pretty(&summary).map_err(|e| HarnessError::json("audit summary", e))?;
    std::fs::write(audit_dir.join("summary.json"), json + "\n")
        .map_err(|e| HarnessError::io(audit_dir.display().to_string(), e))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_parsing() {
        assert_eq!(parse_verdict("YES"), Some(true));
        assert_eq!(parse_verdict("no."), Some(false));
        assert_eq!(parse_verdict("Answer: No"), Some(false));
        assert_eq!(parse_verdict("yes and no"), None);
        assert_eq!(parse_verdict("Nothing wrong"), None);
        assert_eq!(parse_verdict(""), None);
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = PromptBundle {
            system_text: "s".into(),
            user_text: "u".into(),
            image_attached: false,
        };
        let b = PromptBundle {
            image_attached: true,
            ..a.clone()
        };
        assert_eq!(digest_prompt(&a), digest_prompt(&a.clone()));
        assert_ne!(digest_prompt(&a), digest_prompt(&b));
        assert_eq!(digest_prompt(&a).len(), 64);
    }

    #[test]
    fn grouping_keeps_last_duplicate() {
        let rec = |task: &str, step, raw: &str| TranscriptRecord {
            task_id: task.into(),
            step_index: step,
            role: Role::Crc,
            prompt_digest: String::new(),
            raw_output: raw.into(),
            tokens: 0,
            latency: 0.0,
            prompt_version: PROMPT_VERSION.into(),
        };
        let grouped = group_transcripts(vec![rec("a", 1, "old"), rec("b", 1, "x"), rec("a", 1, "new"), rec("a", 2, "y")]);
        assert_eq!(grouped["a"].len(), 2);
        assert_eq!(grouped["a"][0].raw_output, "new");
        assert_eq!(grouped["b"].len(), 1);
    }

    #[test]
    fn sink_appends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x/log.jsonl");
        let sink = JsonlSink::open(&path).unwrap();
        sink.append(&[1u32, 2]).unwrap();
        drop(sink);
        let sink = JsonlSink::open(&path).unwrap();
        sink.append(&[3u32]).unwrap();
        assert_eq!(read_jsonl::<u32>(&path).unwrap(), vec![1, 2, 3]);
        assert!(read_jsonl::<u32>(&dir.path().join("missing")).unwrap().is_empty());
    }

    #[test]
    fn summary_rate() {
        let v = |id: &str, h| {
            JudgeEntry::Verdict(AuditResult {
                task_id: id.into(),
                judge_model: "j".into(),
                hallucinated: h,
                judge_raw: String::new(),
            })
        };
        let entries = vec![
            v("a", true),
            v("b", false),
            JudgeEntry::Unparseable {
                task_id: "c".into(),
                judge_model: "j".into(),
                judge_raw: "?".into(),
            },
        ];
        let s = summarize("j", 3, &entries, vec![]);
        assert_eq!(s.hallucination_rate, Some(0.5));
        assert_eq!(s.unparseable, vec!["c".to_string()]);
        assert_eq!(summarize("j", 0, &[], vec![]).hallucination_rate, None);
    }
}
