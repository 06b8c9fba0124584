//! Converters from benchmark-native files to the canonical task format.
//!
//! Every converted record goes through [`validate_task`], so the output
//! obeys the same invariants as a hand-written dataset.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde_json::{json, Map, Value};

use crate::error::TaskError;
use crate::task::{validate_task, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFormat {
    /// `problems.json`: an object keyed by problem id.
    ScienceQa,
    /// One JSON record per line with `choices` and a letter `answer`.
    M3Cot,
    /// `questions.jsonl` plus a reference-answers `.jsonl`, joined on
    /// `question_id`.
    LlavaWild,
}

impl std::str::FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "scienceqa" | "science_qa" => Ok(SourceFormat::ScienceQa),
            "m3cot" => Ok(SourceFormat::M3Cot),
            "llava_wild" | "llava_w" | "llava_bench" => Ok(SourceFormat::LlavaWild),
            other => Err(format!("unknown source format {other:?} (scienceqa, m3cot, llava_wild)")),
        }
    }
}

fn letter(i: usize) -> Result<String, TaskError> {
    if i >= 26 {
        return Err(TaskError::InvalidField {
            field: "options",
            reason: "more than 26 choices".into(),
        });
    }
    Ok(((b'A' + i as u8) as char).to_string())
}

fn options_from_choices(choices: &Value) -> Result<Vec<Value>, TaskError> {
    let items = choices.as_array().ok_or(TaskError::InvalidField {
        field: "options",
        reason: "choices must be a list".into(),
    })?;
    items
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let text = match c {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            Ok(json!([letter(i)?, text]))
        })
        .collect()
}

fn nonempty_str(v: Option<&Value>) -> Option<String> {
    v.and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
}

fn id_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) if !s.is_empty() => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn with_context(id: &str, r: Result<Task, TaskError>) -> Result<Task, TaskError> {
    r.map_err(|e| TaskError::Record {
        id: id.to_string(),
        source: Box::new(e),
    })
}

/// ScienceQA `problems.json`. Problems without an image are skipped; images
/// are referenced as `<split>/<id>/<image>`. `split` keeps only that split.
pub fn scienceqa(problems: &Value, split: Option<&str>) -> Result<Vec<Task>, TaskError> {
    let map = problems.as_object().ok_or(TaskError::NotARecord)?;
    // Numeric ids sort numerically so output order is stable and natural.
    let mut entries: Vec<(&String, &Value)> = map.iter().collect();
    entries.sort_by(|a, b| match (a.0.parse::<u64>(), b.0.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.0.cmp(b.0),
    });

    let mut tasks = Vec::new();
    for (id, p) in entries {
        let Some(image) = nonempty_str(p.get("image")) else {
            continue;
        };
        let p_split = nonempty_str(p.get("split"));
        if let Some(want) = split {
            if p_split.as_deref() != Some(want) {
                continue;
            }
        }
        let task = (|| {
            let options = options_from_choices(p.get("choices").ok_or(TaskError::MissingField("choices"))?)?;
            let answer = p
                .get("answer")
                .and_then(Value::as_u64)
                .ok_or(TaskError::MissingField("answer"))?;
            let mut rec = Map::new();
            rec.insert("id".into(), json!(id));
            rec.insert("question".into(), p.get("question").cloned().unwrap_or(Value::Null));
            rec.insert("options".into(), Value::Array(options));
            let image_ref = match &p_split {
                Some(s) => format!("{s}/{id}/{image}"),
                None => format!("{id}/{image}"),
            };
            rec.insert("image_ref".into(), json!(image_ref));
            if let Some(hint) = nonempty_str(p.get("hint")) {
                rec.insert("hint".into(), json!(hint));
            }
            rec.insert("gold_answer".into(), json!(letter(answer as usize)?));
            validate_task(&Value::Object(rec))
        })();
        tasks.push(with_context(id, task)?);
    }
    Ok(tasks)
}

/// M3CoT-style JSONL. The image is `image` when present, otherwise
/// `<image_id>.png`; `context` becomes the hint.
pub fn m3cot(reader: impl BufRead) -> Result<Vec<Task>, TaskError> {
    let mut tasks = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| TaskError::Io(format!("line {}", idx + 1), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let line_err = |e| TaskError::Line {
            line: idx + 1,
            source: Box::new(e),
        };
        let r: Value = serde_json::from_str(&line).map_err(|e| line_err(TaskError::Json(e)))?;
        let task = (|| {
            let id = r.get("id").and_then(id_string).ok_or(TaskError::MissingField("id"))?;
            let image_ref = nonempty_str(r.get("image"))
                .or_else(|| nonempty_str(r.get("image_id")).map(|i| format!("{i}.png")))
                .ok_or(TaskError::MissingField("image_ref"))?;
            let options = options_from_choices(r.get("choices").ok_or(TaskError::MissingField("choices"))?)?;
            let mut rec = Map::new();
            rec.insert("id".into(), json!(id));
            rec.insert("question".into(), r.get("question").cloned().unwrap_or(Value::Null));
            rec.insert("options".into(), Value::Array(options));
            rec.insert("image_ref".into(), json!(image_ref));
            if let Some(hint) = nonempty_str(r.get("context")) {
                rec.insert("hint".into(), json!(hint));
            }
            if let Some(answer) = nonempty_str(r.get("answer")) {
                rec.insert("gold_answer".into(), json!(answer));
            }
            validate_task(&Value::Object(rec))
        })();
        tasks.push(task.map_err(line_err)?);
    }
    Ok(tasks)
}

fn read_records(reader: impl BufRead) -> Result<Vec<Value>, TaskError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| TaskError::Io(format!("line {}", idx + 1), e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| TaskError::Line {
            line: idx + 1,
            source: Box::new(TaskError::Json(e)),
        })?);
    }
    Ok(out)
}

/// LLaVA-Bench (in-the-wild): open-ended questions joined with reference
/// answers on `question_id`. Questions without a reference keep no gold
/// answer.
pub fn llava_wild(questions: impl BufRead, answers: impl BufRead) -> Result<Vec<Task>, TaskError> {
    let mut gold = BTreeMap::new();
    for a in read_records(answers)? {
        if let (Some(qid), Some(text)) = (a.get("question_id").and_then(id_string), nonempty_str(a.get("text"))) {
            gold.insert(qid, text);
        }
    }
    let mut tasks = Vec::new();
    for q in read_records(questions)? {
        let qid = q
            .get("question_id")
            .and_then(id_string)
            .ok_or(TaskError::MissingField("question_id"))?;
        let mut rec = Map::new();
        rec.insert("id".into(), json!(qid));
        rec.insert("question".into(), q.get("text").cloned().unwrap_or(Value::Null));
        rec.insert("image_ref".into(), q.get("image").cloned().unwrap_or(Value::Null));
        if let Some(g) = gold.get(&qid) {
            rec.insert("gold_answer".into(), json!(g));
        }
        tasks.push(with_context(&qid, validate_task(&Value::Object(rec)))?);
    }
    Ok(tasks)
}

/// Write tasks as canonical JSONL.
pub fn write_dataset(tasks: &[Task], mut out: impl Write) -> std::io::Result<()> {
    for t in tasks {
        writeln!(out, "{}", t.to_record_line())?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::parse_dataset;

    #[test]
    fn scienceqa_problems() {
        let raw = json!({
            "10": {"question": "Which is a mammal?", "choices": ["frog", "whale"], "answer": 1,
                    "hint": "", "image": "image.png", "split": "test"},
            "2": {"question": "Pick one", "choices": ["x", "y", "z"], "answer": 0,
                   "hint": "Look closely.", "image": "image.png", "split": "test"},
            "3": {"question": "No image", "choices": ["a", "b"], "answer": 0, "hint": "", "image": null, "split": "test"},
            "4": {"question": "Train", "choices": ["a", "b"], "answer": 0, "hint": "", "image": "image.png", "split": "train"}
        });
        let tasks = scienceqa(&raw, Some("test")).unwrap();
        assert_eq!(tasks.iter().map(|t| t.id.as_str()).collect::<Vec<_>>(), ["2", "10"]);
        assert_eq!(tasks[1].gold_answer.as_deref(), Some("B"));
        assert_eq!(tasks[1].image_ref, "test/10/image.png");
        assert_eq!(tasks[1].hint, None);
        assert_eq!(tasks[0].hint.as_deref(), Some("Look closely."));
        assert_eq!(tasks[0].options[2].text, "z");
        assert_eq!(scienceqa(&raw, None).unwrap().len(), 3);
    }

    #[test]
    fn scienceqa_bad_answer_index() {
        let raw = json!({"1": {"question": "q", "choices": ["a"], "answer": 3, "image": "i.png"}});
        assert!(matches!(scienceqa(&raw, None), Err(TaskError::Record { .. })));
    }

    #[test]
    fn m3cot_lines() {
        let text = concat!(
            r#"{"id":"physical-1","question":"What moves?","choices":["car","tree"],"answer":"A","context":"","image_id":"physical-1"}"#,
            "\n\n",
            r#"{"id":"x-2","question":"Q","choices":["a","b","c"],"answer":"C","context":"ctx","image":"imgs/x-2.jpg"}"#,
            "\n"
        );
        let tasks = m3cot(text.as_bytes()).unwrap();
        assert_eq!(tasks.len(), 2);
        assert_eq!(tasks[0].image_ref, "physical-1.png");
        assert_eq!(tasks[0].hint, None);
        assert_eq!(tasks[1].image_ref, "imgs/x-2.jpg");
        assert_eq!(tasks[1].hint.as_deref(), Some("ctx"));

        let bad = r#"{"id":"1","question":"Q","choices":["a"],"answer":"D","image":"i"}"#;
        assert!(matches!(m3cot(bad.as_bytes()), Err(TaskError::Line { line: 1, .. })));
    }

    #[test]
    fn llava_join() {
        let q = "{\"question_id\":0,\"image\":\"001.jpg\",\"text\":\"Describe it.\",\"category\":\"detail\"}\n{\"question_id\":1,\"image\":\"002.jpg\",\"text\":\"Why?\"}\n";
        let a = "{\"question_id\":0,\"text\":\"A red bus.\"}\n";
        let tasks = llava_wild(q.as_bytes(), a.as_bytes()).unwrap();
        assert_eq!(tasks[0].id, "0");
        assert_eq!(tasks[0].gold_answer.as_deref(), Some("A red bus."));
        assert!(!tasks[0].is_multiple_choice());
        assert_eq!(tasks[1].gold_answer, None);
    }

    #[test]
    fn output_round_trips() {
        let text = r#"{"id":"a","question":"Q","choices":["p","q"],"answer":"B","image":"i.png"}"#;
        let tasks = m3cot(text.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_dataset(&tasks, &mut buf).unwrap();
        assert_eq!(parse_dataset(buf.as_slice()).unwrap(), tasks);
    }

    #[test]
    fn format_names() {
        assert_eq!("ScienceQA".parse::<SourceFormat>().unwrap(), SourceFormat::ScienceQa);
        assert_eq!("llava-wild".parse::<SourceFormat>().unwrap(), SourceFormat::LlavaWild);
        assert!("coco".parse::<SourceFormat>().is_err());
    }
}
