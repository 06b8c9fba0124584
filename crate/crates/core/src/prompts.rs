//! Prompt assembly for every call the framework makes.
//!
//! Template text lives in `prompts/v1/` and is compiled in. Every transcript
//! record is stamped with [`PROMPT_VERSION`] so stored runs can be traced back
//! to the templates that produced them.

use serde::{Deserialize, Serialize};

use crate::router::RoutingRules;
use crate::task::{ReasoningState, Task};

pub const PROMPT_VERSION: &str = "csmr-prompts-v1";

mod templates {
    pub const CRC_SYSTEM: &str = include_str!("../prompts/v1/crc_system.txt");
    pub const PLAN_SYSTEM: &str = include_str!("../prompts/v1/plan_system.txt");
    pub const CAPTION_ANSWER_SYSTEM: &str = include_str!("../prompts/v1/caption_answer_system.txt");
    pub const PVP_SYSTEM: &str = include_str!("../prompts/v1/pvp_system.txt");
    pub const PVP_USER: &str = include_str!("../prompts/v1/pvp_user.txt");
    pub const CAPTION_SYSTEM: &str = include_str!("../prompts/v1/caption_system.txt");
    pub const CAPTION_USER: &str = include_str!("../prompts/v1/caption_user.txt");
    pub const CAPTION_USER_WITH_QUESTION: &str = include_str!("../prompts/v1/caption_user_with_question.txt");
    pub const JUDGE_SYSTEM: &str = include_str!("../prompts/v1/judge_system.txt");
    pub const JUDGE_USER: &str = include_str!("../prompts/v1/judge_user.txt");
    pub const NOTE_FORMAT_REMINDER: &str = include_str!("../prompts/v1/note_format_reminder.txt");
    pub const NOTE_SINGLE_QUERY: &str = include_str!("../prompts/v1/note_single_query.txt");
    pub const NOTE_FIXED_STEP: &str = include_str!("../prompts/v1/note_fixed_step.txt");
    pub const NOTE_ANSWER_ONLY: &str = include_str!("../prompts/v1/note_answer_only.txt");
}

/// Fully assembled prompt for one model call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub image_attached: bool,
}

impl PromptBundle {
    /// Append a note paragraph to the user turn.
    pub fn with_note(mut self, note: &str) -> Self {
        if !self.user_text.is_empty() {
            self.user_text.push_str("\n\n");
        }
        self.user_text.push_str(note);
        self
    }
}

/// Single-pass `{name}` substitution. Values are inserted verbatim and never
/// re-scanned, so braces inside task text are left alone.
fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let template = template.trim_end();
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match replaced {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn marker_vars(rules: &RoutingRules) -> [(&'static str, &str); 2] {
    [
        ("query_marker", rules.query_marker.as_str()),
        ("answer_marker", rules.answer_marker.as_str()),
    ]
}

/// Question, options and hint as shown to the reasoning core.
fn render_problem(task: &Task, include_hint: bool, include_options: bool) -> String {
    let mut out = format!("QUESTION: {}", task.question.trim());
    if include_options && !task.options.is_empty() {
        out.push_str("\nOPTIONS:");
        for opt in &task.options {
            out.push_str(&format!("\n({}) {}", opt.letter, opt.text));
        }
    }
    if include_hint {
        if let Some(hint) = task.hint.as_deref().map(str::trim).filter(|h| !h.is_empty()) {
            out.push_str(&format!("\nHINT: {hint}"));
        }
    }
    out
}

/// Render the reasoning state as labelled step blocks separated by blank
/// lines. The empty state renders to the empty string.
pub fn render_state(state: &ReasoningState) -> String {
    state
        .steps()
        .iter()
        .map(|entry| {
            let mut block = format!("[STEP {}]\nTHOUGHT: {}", entry.step_index, entry.thought);
            if let Some(evidence) = &entry.evidence {
                block.push_str("\nEVIDENCE: ");
                block.push_str(evidence);
            }
            block
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn build_crc_prompt(
    task: &Task,
    state: &ReasoningState,
    rules: &RoutingRules,
    include_hint: bool,
    include_options: bool,
) -> PromptBundle {
    let mut user_text = render_problem(task, include_hint, include_options);
    if !state.is_empty() {
        user_text.push_str("\n\nREASONING STATE:\n");
        user_text.push_str(&render_state(state));
    }
    PromptBundle {
        system_text: fill(templates::CRC_SYSTEM, &marker_vars(rules)),
        user_text,
        image_attached: false,
    }
}

/// First-step prompt of the pre-planned ablation: ask for every visual
/// question up front as a numbered list.
pub fn build_plan_prompt(task: &Task, include_hint: bool, include_options: bool) -> PromptBundle {
    PromptBundle {
        system_text: fill(templates::PLAN_SYSTEM, &[]),
        user_text: render_problem(task, include_hint, include_options),
        image_attached: false,
    }
}

/// Text-only answering prompt of the caption baseline.
pub fn build_caption_answer_prompt(
    task: &Task,
    caption: &str,
    rules: &RoutingRules,
    include_hint: bool,
    include_options: bool,
) -> PromptBundle {
    let mut user_text = render_problem(task, include_hint, include_options);
    user_text.push_str("\n\nIMAGE DESCRIPTION:\n");
    user_text.push_str(caption.trim());
    PromptBundle {
        system_text: fill(templates::CAPTION_ANSWER_SYSTEM, &marker_vars(rules)),
        user_text,
        image_attached: false,
    }
}

/// Perception prompt for one visual query. The reasoning trace is never
/// included; the perception model sees only the query and the image.
///
/// Callers must not pass an empty query.
pub fn build_pvp_prompt(query: &str, _task: &Task) -> PromptBundle {
    debug_assert!(!query.trim().is_empty(), "visual query must be nonempty");
    PromptBundle {
        system_text: fill(templates::PVP_SYSTEM, &[]),
        user_text: fill(templates::PVP_USER, &[("query", query)]),
        image_attached: true,
    }
}

pub fn build_caption_prompt(task: &Task, question_blind: bool) -> PromptBundle {
    let user_text = if question_blind {
        fill(templates::CAPTION_USER, &[])
    } else {
        fill(templates::CAPTION_USER_WITH_QUESTION, &[("question", task.question.trim())])
    };
    PromptBundle {
        system_text: fill(templates::CAPTION_SYSTEM, &[]),
        user_text,
        image_attached: true,
    }
}

pub fn build_judge_prompt(transcript_text: &str, task: &Task) -> PromptBundle {
    PromptBundle {
        system_text: fill(templates::JUDGE_SYSTEM, &[]),
        user_text: fill(
            templates::JUDGE_USER,
            &[("question", task.question.trim()), ("transcript", transcript_text)],
        ),
        image_attached: true,
    }
}

pub fn format_reminder(rules: &RoutingRules) -> String {
    fill(templates::NOTE_FORMAT_REMINDER, &marker_vars(rules))
}

pub fn single_query_note(rules: &RoutingRules) -> String {
    fill(templates::NOTE_SINGLE_QUERY, &marker_vars(rules))
}

pub fn fixed_step_note(rules: &RoutingRules, remaining: u32) -> String {
    let remaining = remaining.to_string();
    let [q, a] = marker_vars(rules);
    fill(templates::NOTE_FIXED_STEP, &[q, a, ("remaining", remaining.as_str())])
}

pub fn answer_only_note(rules: &RoutingRules) -> String {
    fill(templates::NOTE_ANSWER_ONLY, &marker_vars(rules))
}
