//! Offline end-to-end check against bundled mock scripts and golden files.
//!
//! The fixtures are compiled in, so the check needs nothing from the working
//! directory. The loop runs sequentially under a frozen clock so the
//! transcript bytes are reproducible.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::FrozenClock;
use crate::gateway::{EndpointConfig, MockBackend, MockScript};
use crate::router::RoutingRules;
use crate::scheduler::{Scheduler, Termination};
use crate::task::{parse_dataset, RunConfig};

pub const DATASET: &str = include_str!("../fixtures/selftest/dataset.jsonl");
pub const MOCK_SCRIPT: &str = include_str!("../fixtures/selftest/mock_script.json");
pub const GOLDEN_TRANSCRIPTS: &str = include_str!("../fixtures/selftest/transcripts.jsonl");
pub const EXPECTED_OUTCOMES: &str = include_str!("../fixtures/selftest/expected_outcomes.json");

/// Scripted shape of one task's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedOutcome {
    pub task_id: String,
    pub termination: Termination,
    pub final_answer: Option<String>,
    pub crc_steps: u32,
    pub pvp_calls: u32,
    pub state_tokens: u64,
}

#[derive(Debug, Clone)]
pub struct SelftestReport {
    pub tasks: usize,
    pub transcripts: String,
    pub outcomes: Vec<ExpectedOutcome>,
    pub mismatches: Vec<String>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Run the bundled tasks and return the transcript JSONL and outcome shapes.
pub fn replay() -> Result<(String, Vec<ExpectedOutcome>), String> {
    let tasks = parse_dataset(DATASET.as_bytes()).map_err(|e| format!("selftest dataset: {e}"))?;
    let script: MockScript = serde_json::from_str(MOCK_SCRIPT).map_err(|e| format!("selftest mock script: {e}"))?;
    let backend = Arc::new(MockBackend::new(script));
    let scheduler = Scheduler::new(
        backend,
        EndpointConfig::default(),
        EndpointConfig::default(),
        RoutingRules::default(),
        Arc::new(FrozenClock),
    );
    let cfg = RunConfig::default();

    let mut transcripts = String::new();
    let mut outcomes = Vec::new();
    for task in &tasks {
        let outcome = scheduler.run_task(task, &cfg).map_err(|e| format!("task {}: {e}", task.id))?;
        for record in &outcome.transcript {
            transcripts.push_str(&serde_json::to_string(record).expect("transcript serializes"));
            transcripts.push('\n');
        }
        outcomes.push(ExpectedOutcome {
            task_id: outcome.task_id,
            termination: outcome.termination,
            final_answer: outcome.final_answer,
            crc_steps: outcome.crc_steps,
            pvp_calls: outcome.pvp_calls,
            state_tokens: outcome.state_tokens,
        });
    }
    Ok((transcripts, outcomes))
}

fn first_difference(actual: &str, golden: &str) -> String {
    let line = actual
        .lines()
        .zip(golden.lines())
        .position(|(a, g)| a != g)
        .unwrap_or_else(|| actual.lines().count().min(golden.lines().count()));
    format!(
        "transcripts differ from golden at line {} ({} vs {} lines)",
        line + 1,
        actual.lines().count(),
        golden.lines().count()
    )
}

/// Replay twice and compare against the goldens.
pub fn run() -> Result<SelftestReport, String> {
    let (transcripts, outcomes) = replay()?;
    let expected: Vec<ExpectedOutcome> =
        serde_json::from_str(EXPECTED_OUTCOMES).map_err(|e| format!("expected outcomes: {e}"))?;

    let mut mismatches = Vec::new();
    if transcripts != GOLDEN_TRANSCRIPTS {
        mismatches.push(first_difference(&transcripts, GOLDEN_TRANSCRIPTS));
    }
    if outcomes.len() != expected.len() {
        mismatches.push(format!("{} outcomes, expected {}", outcomes.len(), expected.len()));
    }
    for (got, want) in outcomes.iter().zip(&expected) {
        if got != want {
            mismatches.push(format!("outcome {}: got {got:?}, expected {want:?}", want.task_id));
        }
    }
    let (again, _) = replay()?;
    if again != transcripts {
        mismatches.push("second replay produced different transcripts".into());
    }

    Ok(SelftestReport {
        tasks: outcomes.len(),
        transcripts,
        outcomes,
        mismatches,
    })
}

/// Regenerate the golden transcript file into `dir`. The expected outcome
/// shapes are maintained by hand and are not touched.
pub fn write_goldens(dir: &Path) -> Result<(), String> {
    let (transcripts, _) = replay()?;
    let path = dir.join("transcripts.jsonl");
    std::fs::write(&path, transcripts).map_err(|e| format!("{}: {e}", path.display()))
}
