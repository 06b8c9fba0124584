//! Scripted backend for desk-scale runs and tests.
//!
//! Replies are looked up by task id and caller role and consumed strictly in
//! order; running past the end of a list is an error, never a wrap-around.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{resolve_image, Completion, ModelBackend, ModelRequest};
use crate::audit::Role;
use crate::error::{GatewayError, HarnessError, ProviderFailure};
use crate::prompts::PromptBundle;
use crate::task::GenerationParams;

/// One scripted reply: bare text, or text with a provider usage report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Text(String),
    WithUsage {
        text: String,
        #[serde(default)]
        completion_tokens: Option<u64>,
        #[serde(default)]
        prompt_tokens: Option<u64>,
    },
}

impl ScriptedReply {
    pub fn text(&self) -> &str {
        match self {
            ScriptedReply::Text(t) => t,
            ScriptedReply::WithUsage { text, .. } => text,
        }
    }
}

impl From<&str> for ScriptedReply {
    fn from(s: &str) -> Self {
        ScriptedReply::Text(s.to_string())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskScript {
    #[serde(default)]
    pub crc_outputs: Vec<ScriptedReply>,
    #[serde(default)]
    pub pvp_outputs: Vec<ScriptedReply>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub judge_outputs: Vec<ScriptedReply>,
}

impl TaskScript {
    pub fn new<C, P>(crc: C, pvp: P) -> Self
    where
        C: IntoIterator,
        C::Item: Into<ScriptedReply>,
        P: IntoIterator,
        P::Item: Into<ScriptedReply>,
    {
        Self {
            crc_outputs: crc.into_iter().map(Into::into).collect(),
            pvp_outputs: pvp.into_iter().map(Into::into).collect(),
            judge_outputs: Vec::new(),
        }
    }

    fn replies(&self, role: Role) -> &[ScriptedReply] {
        match role {
            Role::Crc => &self.crc_outputs,
            Role::Pvp => &self.pvp_outputs,
            Role::Judge => &self.judge_outputs,
        }
    }
}

/// Scripts keyed by task id. Stored on disk as a JSON object.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MockScript {
    pub tasks: BTreeMap<String, TaskScript>,
}

impl MockScript {
    pub fn insert(&mut self, task_id: impl Into<String>, script: TaskScript) -> &mut Self {
        self.tasks.insert(task_id.into(), script);
        self
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let raw = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path.display().to_string(), e))?;
        serde_json::from_str(&raw).map_err(|e| HarnessError::json(path.display().to_string(), e))
    }
}

/// A call the mock received, for assertions on prompts and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MockCall {
    pub task_id: String,
    pub role: Role,
    pub model_name: String,
    pub params: GenerationParams,
    pub bundle: PromptBundle,
    pub image_ref: Option<String>,
}

#[derive(Debug)]
pub struct MockBackend {
    script: MockScript,
    cursors: Mutex<HashMap<(String, Role), usize>>,
    calls: Mutex<Vec<MockCall>>,
    latency: f64,
    image_root: Option<PathBuf>,
    check_images: bool,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            cursors: Mutex::new(HashMap::new()),
            calls: Mutex::new(Vec::new()),
            latency: 0.0,
            image_root: None,
            check_images: false,
        }
    }

    /// Report a fixed latency on every reply instead of zero.
    pub fn with_latency(mut self, seconds: f64) -> Self {
        self.latency = seconds;
        self
    }

    /// Require image references to resolve the way the HTTP backend would.
    pub fn checking_images(mut self, image_root: Option<PathBuf>) -> Self {
        self.check_images = true;
        self.image_root = image_root;
        self
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.calls.lock().expect("mock call log poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().expect("mock call log poisoned").len()
    }

    pub fn calls_for(&self, task_id: &str) -> Vec<MockCall> {
        self.calls()
            .into_iter()
            .filter(|c| c.task_id == task_id)
            .collect()
    }
}

impl ModelBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn send(&self, request: &ModelRequest<'_>) -> Result<Completion, GatewayError> {
        let ctx = request.ctx;
        if self.check_images {
            if let Some(image) = request.image_ref {
                resolve_image(image, self.image_root.as_deref())?;
            }
        }
        self.calls.lock().expect("mock call log poisoned").push(MockCall {
            task_id: ctx.task_id.to_string(),
            role: ctx.role,
            model_name: request.endpoint.model_name.clone(),
            params: *request.params,
            bundle: request.bundle.clone(),
            image_ref: request.image_ref.map(str::to_string),
        });

        let script = self
            .script
            .tasks
            .get(ctx.task_id)
            .ok_or_else(|| ProviderFailure::UnknownTask(ctx.task_id.to_string()))?;
        let index = {
            let mut cursors = self.cursors.lock().expect("mock cursors poisoned");
            let cursor = cursors.entry((ctx.task_id.to_string(), ctx.role)).or_insert(0);
            let index = *cursor;
            *cursor += 1;
            index
        };
        let reply = script
            .replies(ctx.role)
            .get(index)
            .ok_or_else(|| ProviderFailure::ScriptExhausted {
                task_id: ctx.task_id.to_string(),
                role: ctx.role,
            })?;
        let (completion_tokens, prompt_tokens) = match reply {
            ScriptedReply::Text(_) => (None, None),
            ScriptedReply::WithUsage {
                completion_tokens,
                prompt_tokens,
                ..
            } => (*completion_tokens, *prompt_tokens),
        };
        Ok(Completion {
            text: reply.text().to_string(),
            prompt_tokens,
            completion_tokens,
            latency: self.latency,
            backoff_seconds: 0.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{complete_text, complete_vision, CallContext, EndpointConfig};
    use crate::prompts::{build_pvp_prompt, PromptBundle};
    use crate::task::Task;

    fn text_bundle() -> PromptBundle {
        PromptBundle {
            system_text: "s".into(),
            user_text: "u".into(),
            image_attached: false,
        }
    }

    fn task() -> Task {
        Task {
            id: "t1".into(),
            question: "q".into(),
            options: vec![],
            image_ref: "missing/nowhere.png".into(),
            hint: None,
            gold_answer: None,
        }
    }

    fn ctx(role: Role) -> CallContext<'static> {
        CallContext { task_id: "t1", role }
    }

    fn backend() -> MockBackend {
        let mut script = MockScript::default();
        script.insert(
            "t1",
            TaskScript::new(["FINAL ANSWER: (A)"], ["Bananas in crates."]),
        );
        MockBackend::new(script)
    }

    #[test]
    fn scripted_text_then_exhaustion() {
        let mock = backend();
        let ep = EndpointConfig::default();
        let params = GenerationParams::REASONING;
        let c = complete_text(&mock, &ep, &text_bundle(), &params, ctx(Role::Crc)).unwrap();
        assert_eq!(c.text, "FINAL ANSWER: (A)");
        assert_eq!(c.completion_tokens, None);
        let err = complete_text(&mock, &ep, &text_bundle(), &params, ctx(Role::Crc)).unwrap_err();
        assert!(matches!(
            err,
            GatewayError::Provider(ProviderFailure::ScriptExhausted { role: Role::Crc, .. })
        ));
        assert_eq!(mock.calls()[0].params.temperature, 0.3);
    }

    #[test]
    fn scripted_vision_records_params() {
        let mock = backend();
        let ep = EndpointConfig::default();
        let bundle = build_pvp_prompt("What is in the truck?", &task());
        let c = complete_vision(&mock, &ep, &bundle, &GenerationParams::PERCEPTION, "img.png", ctx(Role::Pvp))
            .unwrap();
        assert_eq!(c.text, "Bananas in crates.");
        let call = &mock.calls()[0];
        assert_eq!(call.params.max_tokens, 512);
        assert_eq!(call.image_ref.as_deref(), Some("img.png"));
    }

    #[test]
    fn unreadable_image_when_checking() {
        let mock = backend().checking_images(None);
        let ep = EndpointConfig::default();
        let bundle = build_pvp_prompt("q?", &task());
        let err = complete_vision(
            &mock,
            &ep,
            &bundle,
            &GenerationParams::PERCEPTION,
            "missing/nowhere.png",
            ctx(Role::Pvp),
        )
        .unwrap_err();
        assert!(matches!(err, GatewayError::Provider(ProviderFailure::ImageUnreadable(_))));
    }

    #[test]
    fn unknown_task() {
        let mock = backend();
        let err = complete_text(
            &mock,
            &EndpointConfig::default(),
            &text_bundle(),
            &GenerationParams::REASONING,
            CallContext {
                task_id: "zzz",
                role: Role::Crc,
            },
        )
        .unwrap_err();
        assert!(matches!(err, GatewayError::Provider(ProviderFailure::UnknownTask(_))));
    }

    #[test]
    fn script_file_shape() {
        let json = r#"{"a": {"crc_outputs": ["x", {"text": "y", "completion_tokens": 4}], "pvp_outputs": []}}"#;
        let script: MockScript = serde_json::from_str(json).unwrap();
        let a = &script.tasks["a"];
        assert_eq!(a.crc_outputs[0], ScriptedReply::Text("x".into()));
        assert_eq!(
            a.crc_outputs[1],
            ScriptedReply::WithUsage {
                text: "y".into(),
                completion_tokens: Some(4),
                prompt_tokens: None
            }
        );
        assert!(serde_json::from_str::<MockScript>(r#"{"a": {"bogus": []}}"#).is_err());
    }
}
