//! Domain types shared by the scheduling loop, the harness and the audit
//! pipeline.
//!
//! A [`Task`] is one benchmark item in the canonical line-delimited format.
//! [`ReasoningState`] is the growing trace of reasoning-core thoughts and
//! textual visual evidence that is fed back into every reasoning call.

use std::collections::BTreeSet;
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::TaskError;

/// One answer option of a multiple-choice task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub letter: char,
    pub text: String,
}

/// One benchmark item.
///
/// Open-ended tasks carry no options and a free-text gold answer; scoring
/// switches between exact-match accuracy and ROUGE-L on that basis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<AnswerOption>,
    pub image_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
}

impl Task {
    pub fn is_multiple_choice(&self) -> bool {
        !self.options.is_empty()
    }

    pub fn option_letters(&self) -> impl Iterator<Item = char> + '_ {
        self.options.iter().map(|o| o.letter)
    }

    /// Serialize as one line of the canonical dataset file.
    pub fn to_record_line(&self) -> String {
        // Options are written as [letter, text] pairs, the same shape
        // `validate_task` accepts.
        let mut record = serde_json::Map::new();
        record.insert("id".into(), Value::String(self.id.clone()));
        record.insert("question".into(), Value::String(self.question.clone()));
        if !self.options.is_empty() {
            let opts = self
                .options
                .iter()
                .map(|o| {
                    Value::Array(vec![
                        Value::String(o.letter.to_string()),
                        Value::String(o.text.clone()),
                    ])
                })
                .collect();
            record.insert("options".into(), Value::Array(opts));
        }
        record.insert("image_ref".into(), Value::String(self.image_ref.clone()));
        if let Some(hint) = &self.hint {
            record.insert("hint".into(), Value::String(hint.clone()));
        }
        if let Some(gold) = &self.gold_answer {
            record.insert("gold_answer".into(), Value::String(gold.clone()));
        }
        Value::Object(record).to_string()
    }
}

fn required_str(record: &serde_json::Map<String, Value>, key: &'static str) -> Result<String, TaskError> {
    match record.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) if key == "id" => Ok(n.to_string()),
        Some(_) => Err(TaskError::InvalidField {
            field: key,
            reason: "expected a string".into(),
        }),
        None => Err(TaskError::MissingField(key)),
    }
}

fn optional_str(record: &serde_json::Map<String, Value>, key: &'static str) -> Result<Option<String>, TaskError> {
    match record.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(TaskError::InvalidField {
            field: key,
            reason: "expected a string".into(),
        }),
    }
}

fn parse_letter(raw: &str) -> Result<char, TaskError> {
    let mut chars = raw.trim().chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_uppercase() => Ok(c),
        _ => Err(TaskError::InvalidField {
            field: "options",
            reason: format!("option letter {raw:?} is not a single uppercase letter"),
        }),
    }
}

fn parse_option(value: &Value) -> Result<AnswerOption, TaskError> {
    let bad = |reason: &str| TaskError::InvalidField {
        field: "options",
        reason: reason.to_string(),
    };
    match value {
        Value::Array(pair) if pair.len() == 2 => {
            let letter = pair[0].as_str().ok_or_else(|| bad("letter must be a string"))?;
            let text = pair[1].as_str().ok_or_else(|| bad("text must be a string"))?;
            Ok(AnswerOption {
                letter: parse_letter(letter)?,
                text: text.to_string(),
            })
        }
        Value::Object(obj) => {
            let letter = obj
                .get("letter")
                .and_then(Value::as_str)
                .ok_or_else(|| bad("option object needs a string `letter`"))?;
            let text = obj
                .get("text")
                .and_then(Value::as_str)
                .ok_or_else(|| bad("option object needs a string `text`"))?;
            Ok(AnswerOption {
                letter: parse_letter(letter)?,
                text: text.to_string(),
            })
        }
        _ => Err(bad("each option is a [letter, text] pair or {letter, text} object")),
    }
}

/// Check a raw dataset record and build a [`Task`] from it.
///
/// Options may be given as `[letter, text]` pairs or `{letter, text}`
/// objects. Letters must be unique and run consecutively from `A`; a
/// single-letter gold answer on a multiple-choice task must name one of them.
pub fn validate_task(raw: &Value) -> Result<Task, TaskError> {
    let record = raw.as_object().ok_or(TaskError::NotARecord)?;
    let id = required_str(record, "id")?;
    let question = required_str(record, "question")?;
    let image_ref = required_str(record, "image_ref")?;
    let hint = optional_str(record, "hint")?;
    let gold_answer = optional_str(record, "gold_answer")?;

    let options = match record.get("options") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items.iter().map(parse_option).collect::<Result<Vec<_>, _>>()?,
        Some(_) => {
            return Err(TaskError::InvalidField {
                field: "options",
                reason: "expected a list".into(),
            })
        }
    };

    let mut seen = BTreeSet::new();
    for opt in &options {
        if !seen.insert(opt.letter) {
            return Err(TaskError::DuplicateOptionLetter(opt.letter));
        }
    }
    for (i, opt) in options.iter().enumerate() {
        let expected = (b'A' + i as u8) as char;
        if opt.letter != expected {
            return Err(TaskError::NonConsecutiveLetters {
                expected,
                found: opt.letter,
            });
        }
    }

    if let Some(gold) = &gold_answer {
        if !options.is_empty() {
            let g = gold.trim();
            let is_letter = g.len() == 1 && g.chars().all(|c| c.is_ascii_alphabetic());
            if is_letter {
                let letter = g.chars().next().unwrap().to_ascii_uppercase();
                if !seen.contains(&letter) {
                    return Err(TaskError::GoldAnswerNotInOptions(gold.clone()));
                }
            }
        }
    }

    Ok(Task {
        id,
        question,
        options,
        image_ref,
        hint,
        gold_answer,
    })
}

/// Read a canonical dataset file: one JSON record per line, blank lines ignored.
pub fn load_dataset(path: &Path) -> Result<Vec<Task>, TaskError> {
    let file = std::fs::File::open(path).map_err(|e| TaskError::Io(path.display().to_string(), e))?;
    parse_dataset(std::io::BufReader::new(file))
}

pub fn parse_dataset(reader: impl BufRead) -> Result<Vec<Task>, TaskError> {
    let mut tasks = Vec::new();
    let mut ids = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| TaskError::Io(format!("line {}", idx + 1), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| TaskError::Line {
            line: idx + 1,
            source: Box::new(TaskError::Json(e)),
        })?;
        let task = validate_task(&value).map_err(|e| TaskError::Line {
            line: idx + 1,
            source: Box::new(e),
        })?;
        if !ids.insert(task.id.clone()) {
            return Err(TaskError::DuplicateTaskId(task.id));
        }
        tasks.push(task);
    }
    Ok(tasks)
}

/// One reasoning step kept in the state: the reasoning-core output and, when
/// that output was a visual query, the perception model's answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateEntry {
    pub step_index: u32,
    pub thought: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
    pub thought_tokens: u64,
    pub evidence_tokens: u64,
}

/// Accumulated interaction history. Updates are concatenative: entries are
/// only ever appended.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningState {
    steps: Vec<StateEntry>,
    token_estimate: u64,
}

impl ReasoningState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> &[StateEntry] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn token_estimate(&self) -> u64 {
        self.token_estimate
    }

    /// Append one step and return its index (1-based).
    pub fn push(&mut self, thought: impl Into<String>, thought_tokens: u64, evidence: Option<(String, u64)>) -> u32 {
        let step_index = self.steps.len() as u32 + 1;
        let (evidence, evidence_tokens) = match evidence {
            Some((text, tokens)) => (Some(text), tokens),
            None => (None, 0),
        };
        self.token_estimate += thought_tokens + evidence_tokens;
        self.steps.push(StateEntry {
            step_index,
            thought: thought.into(),
            evidence,
            thought_tokens,
            evidence_tokens,
        });
        step_index
    }
}

/// Parsed intent of one reasoning-core emission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decision {
    VisualQuery { query: String },
    FinalAnswer { answer: String },
    Malformed { raw: String },
}

/// Scheduling mode: the full loop, or one of the ablations/baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Csmr,
    SingleQuery,
    PrePlanned,
    FixedStep,
    Caption,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Csmr,
        Mode::SingleQuery,
        Mode::PrePlanned,
        Mode::FixedStep,
        Mode::Caption,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Csmr => "csmr",
            Mode::SingleQuery => "single_query",
            Mode::PrePlanned => "pre_planned",
            Mode::FixedStep => "fixed_step",
            Mode::Caption => "caption",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s || m.as_str().replace('_', "-") == s)
            .ok_or_else(|| format!("unknown mode {s:?}"))
    }
}

/// Sampling parameters forwarded to a model endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub max_tokens: u32,
    pub repetition_penalty: f64,
}

impl GenerationParams {
    /// Defaults for the text-only reasoning backbone.
    pub const REASONING: GenerationParams = GenerationParams {
        temperature: 0.3,
        top_p: 0.9,
        top_k: 30,
        max_tokens: 2048,
        repetition_penalty: 1.0,
    };

    /// Defaults for the vision backbone.
    pub const PERCEPTION: GenerationParams = GenerationParams {
        temperature: 0.7,
        top_p: 0.9,
        top_k: 80,
        max_tokens: 512,
        repetition_penalty: 1.0,
    };

    pub fn validate(&self, which: &str) -> Result<(), String> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!("{which}.temperature must be >= 0"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("{which}.top_p must be in (0, 1]"));
        }
        if self.top_k == 0 {
            return Err(format!("{which}.top_k must be positive"));
        }
        if self.max_tokens == 0 {
            return Err(format!("{which}.max_tokens must be positive"));
        }
        if !(self.repetition_penalty > 0.0 && self.repetition_penalty.is_finite()) {
            return Err(format!("{which}.repetition_penalty must be positive"));
        }
        Ok(())
    }
}

/// Loop configuration for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Token budget over the accumulated reasoning state.
    pub t_max: u64,
    /// Forced query/evidence rounds in fixed-step mode.
    pub fixed_steps: u32,
    /// Hard limit on reasoning-core calls per task.
    pub step_cap: u32,
    pub malformed_retries: u32,
    pub crc_params: GenerationParams,
    pub pvp_params: GenerationParams,
    pub concurrency: usize,
    pub include_hint: bool,
    pub include_options: bool,
    /// Caption prompts omit the question when set.
    pub caption_question_blind: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Csmr,
            t_max: 6000,
            fixed_steps: 7,
            step_cap: 10,
            malformed_retries: 2,
            crc_params: GenerationParams::REASONING,
            pvp_params: GenerationParams::PERCEPTION,
            concurrency: 1,
            include_hint: true,
            include_options: true,
            caption_question_blind: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.t_max == 0 {
            return Err("t_max must be positive".into());
        }
        if self.fixed_steps == 0 {
            return Err("fixed_steps must be positive".into());
        }
        if self.step_cap == 0 {
            return Err("step_cap must be positive".into());
        }
        if self.fixed_steps >= self.step_cap {
            return Err(format!(
                "fixed_steps ({}) must be below step_cap ({}) to leave a step for the answer",
                self.fixed_steps, self.step_cap
            ));
        }
        if self.concurrency == 0 {
            return Err("concurrency must be positive".into());
        }
        self.crc_params.validate("crc_params")?;
        self.pvp_params.validate("pvp_params")?;
        Ok(())
    }
}
