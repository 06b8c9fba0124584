//! Answer extraction and metrics.

use crate::error::HarnessError;
use crate::task::AnswerOption;

fn option_letter(options: &[AnswerOption], c: char) -> Option<char> {
    let upper = c.to_ascii_uppercase();
    options.iter().any(|o| o.letter == upper).then_some(upper)
}

fn normalize_text(s: &str) -> String {
    s.trim().trim_end_matches('.').trim().to_lowercase()
}

/// Map a free-form final answer to an option letter.
///
/// Tried in order: an answer that is exactly one option's text (ignoring
/// case, surrounding whitespace and a trailing period); a parenthesized letter
/// `(X)`; a standalone letter token `X` / `X.`. Letters match in either case
/// but must name an existing option.
pub fn extract_choice(final_answer: &str, options: &[AnswerOption]) -> Option<char> {
    let normalized = normalize_text(final_answer);
    // A full-text match outranks letter tokens that happen to occur inside
    // option text ("a dog").
    if let Some(o) = options
        .iter()
        .find(|o| !normalized.is_empty() && normalize_text(&o.text) == normalized)
    {
        return Some(o.letter);
    }

    let chars: Vec<char> = final_answer.chars().collect();
    for w in chars.windows(3) {
        if w[0] == '(' && w[2] == ')' {
            if let Some(letter) = option_letter(options, w[1]) {
                return Some(letter);
            }
        }
    }

    for token in final_answer.split(|c: char| !c.is_alphanumeric()) {
        let mut it = token.chars();
        if let (Some(c), None) = (it.next(), it.next()) {
            if c.is_alphabetic() {
                if let Some(letter) = option_letter(options, c) {
                    return Some(letter);
                }
            }
        }
    }

    None
}

/// Fraction of predictions equal to their gold letter; `None` counts as wrong.
pub fn accuracy(pairs: &[(Option<char>, char)]) -> Result<f64, HarnessError> {
    if pairs.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let correct = pairs
        .iter()
        .filter(|(pred, gold)| *pred == Some(*gold))
        .count();
    Ok(correct as f64 / pairs.len() as f64)
}

/// Lowercase and split on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 over token sequences.
pub fn rouge_l_tokens<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    let l = lcs_len(candidate, reference) as f64;
    let p = if candidate.is_empty() { 0.0 } else { l / candidate.len() as f64 };
    let r = if reference.is_empty() { 0.0 } else { l / reference.len() as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    rouge_l_tokens(&tokenize(candidate), &tokenize(reference))
}
