//! Routing function: turns a raw reasoning-core emission into a [`Decision`].
//!
//! Matching is line-oriented. A line counts when, after leading whitespace and
//! list bullets are stripped, it starts with one of the configured markers and
//! has a nonempty remainder. Answer lines take precedence over query lines;
//! within a category the last line wins.

use serde::{Deserialize, Serialize};

use crate::task::Decision;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingRules {
    pub query_marker: String,
    pub answer_marker: String,
    pub case_sensitive: bool,
}

impl Default for RoutingRules {
    fn default() -> Self {
        Self {
            query_marker: "VISUAL QUESTION:".into(),
            answer_marker: "FINAL ANSWER:".into(),
            case_sensitive: false,
        }
    }
}

impl RoutingRules {
    pub fn validate(&self) -> Result<(), String> {
        if self.query_marker.trim().is_empty() || self.answer_marker.trim().is_empty() {
            return Err("routing markers must be nonempty".into());
        }
        let same = if self.case_sensitive {
            self.query_marker == self.answer_marker
        } else {
            self.query_marker.to_lowercase() == self.answer_marker.to_lowercase()
        };
        if same {
            return Err("query and answer markers must differ".into());
        }
        Ok(())
    }
}

const BULLETS: &[char] = &['-', '*', '•', '>', '#'];

fn strip_bullets(line: &str) -> &str {
    line.trim_start_matches(|c: char| c.is_whitespace() || BULLETS.contains(&c))
}

/// Returns the text after `marker` if `text` starts with it.
fn strip_marker<'a>(text: &'a str, marker: &str, case_sensitive: bool) -> Option<&'a str> {
    if case_sensitive {
        return text.strip_prefix(marker);
    }
    let mut rest = text.char_indices();
    for m in marker.chars() {
        let (_, c) = rest.next()?;
        if !c.to_lowercase().eq(m.to_lowercase()) {
            return None;
        }
    }
    match rest.next() {
        Some((idx, _)) => Some(&text[idx..]),
        None => Some(""),
    }
}

/// Payload of `line` for `marker`, if the line is a nonempty marker line.
fn marker_payload<'a>(line: &'a str, marker: &str, case_sensitive: bool) -> Option<&'a str> {
    let payload = strip_marker(strip_bullets(line), marker, case_sensitive)?.trim();
    (!payload.is_empty()).then_some(payload)
}

pub fn route(raw_output: &str, rules: &RoutingRules) -> Decision {
    let mut last_query = None;
    let mut last_answer = None;
    for line in raw_output.lines() {
        if let Some(answer) = marker_payload(line, &rules.answer_marker, rules.case_sensitive) {
            last_answer = Some(answer);
        } else if let Some(query) = marker_payload(line, &rules.query_marker, rules.case_sensitive) {
            last_query = Some(query);
        }
    }
    match (last_answer, last_query) {
        (Some(answer), _) => Decision::FinalAnswer {
            answer: answer.to_string(),
        },
        (None, Some(query)) => Decision::VisualQuery {
            query: query.to_string(),
        },
        (None, None) => Decision::Malformed {
            raw: raw_output.to_string(),
        },
    }
}

/// Strip a list prefix: `1.`, `2)`, or a `-`/`*`/`•` bullet, followed by
/// whitespace.
fn strip_list_prefix(line: &str) -> Option<&str> {
    let line = line.trim_start();
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    let rest = if digits > 0 {
        let after = &line[digits..];
        after.strip_prefix('.').or_else(|| after.strip_prefix(')'))?
    } else {
        let first = line.chars().next()?;
        if !matches!(first, '-' | '*' | '•') {
            return None;
        }
        &line[first.len_utf8()..]
    };
    if !rest.starts_with(char::is_whitespace) {
        return None;
    }
    Some(rest.trim())
}

/// Extract every numbered or bulleted line of a plan-all emission, in order.
///
/// A leading query marker inside an item (`1. VISUAL QUESTION: ...`) is
/// dropped so the plan yields bare questions.
pub fn parse_query_plan(raw_output: &str) -> Vec<String> {
    let rules = RoutingRules::default();
    raw_output
        .lines()
        .filter_map(strip_list_prefix)
        .map(|item| {
            strip_marker(item, &rules.query_marker, false)
                .map(str::trim)
                .unwrap_or(item)
        })
        .filter(|item| !item.is_empty())
        .map(str::to_string)
        .collect()
}
