//! The reasoning loop and its ablation/baseline variants.
//!
//! A task runs as a strictly sequential chain of reasoning-core (CRC) calls.
//! Each CRC emission is routed; a visual query triggers one perception (PVP)
//! call whose text answer is appended to the reasoning state together with
//! the emission. The loop ends on a final answer, on the token budget, on the
//! step cap, or after repeated malformed output.
//!
//! Every non-terminal CRC call appends exactly one entry to the state, so
//! after `t` such calls the state holds `t` entries. Evidence is attached
//! only to entries whose emission was an accepted visual query.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::audit::{digest_prompt, Role, TranscriptRecord};
use crate::clock::Clock;
use crate::error::SchedulerError;
use crate::gateway::{complete_text, complete_vision, count_tokens, CallContext, EndpointConfig, ModelBackend};
use crate::prompts::{self, PromptBundle, PROMPT_VERSION};
use crate::router::{parse_query_plan, route, RoutingRules};
use crate::task::{Decision, Mode, ReasoningState, RunConfig, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answered,
    BudgetExhausted,
    StepCapReached,
    MalformedFallback,
}

impl Termination {
    pub fn has_answer(self) -> bool {
        matches!(self, Termination::Answered | Termination::MalformedFallback)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    pub mode: Mode,
    pub final_answer: Option<String>,
    pub termination: Termination,
    pub crc_steps: u32,
    pub pvp_calls: u32,
    /// Token estimate of the final reasoning state (what the budget is checked against).
    pub state_tokens: u64,
    pub wall_seconds: f64,
    /// Time spent in retry backoff, included in `wall_seconds`.
    #[serde(default)]
    pub backoff_seconds: f64,
    #[serde(default)]
    pub state: ReasoningState,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transcript: Vec<TranscriptRecord>,
}

/// What the loop accepts from the reasoning core at the current point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Policy {
    /// Queries and answers both accepted.
    Free,
    /// One query, then answers only.
    SingleQuery,
    /// `fixed_steps` queries forced, then answers only.
    FixedStep,
    /// Answers only.
    AnswerOnly,
}

/// Everything the loop needs besides the task and its configuration.
#[derive(Clone)]
pub struct Scheduler {
    pub backend: Arc<dyn ModelBackend>,
    pub crc_endpoint: EndpointConfig,
    pub pvp_endpoint: EndpointConfig,
    pub rules: RoutingRules,
    pub clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Scheduler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scheduler")
            .field("backend", &self.backend.name())
            .field("crc_endpoint", &self.crc_endpoint)
            .field("pvp_endpoint", &self.pvp_endpoint)
            .field("rules", &self.rules)
            .finish()
    }
}

/// Per-task mutable state of one run.
struct Session<'a> {
    sched: &'a Scheduler,
    task: &'a Task,
    cfg: &'a RunConfig,
    state: ReasoningState,
    transcript: Vec<TranscriptRecord>,
    crc_steps: u32,
    pvp_calls: u32,
    backoff_seconds: f64,
    started: f64,
}

impl<'a> Session<'a> {
    fn new(sched: &'a Scheduler, task: &'a Task, cfg: &'a RunConfig) -> Self {
        Self {
            sched,
            task,
            cfg,
            state: ReasoningState::new(),
            transcript: Vec::new(),
            crc_steps: 0,
            pvp_calls: 0,
            backoff_seconds: 0.0,
            started: sched.clock.now(),
        }
    }

    fn ctx(&self, role: Role) -> CallContext<'a> {
        CallContext {
            task_id: &self.task.id,
            role,
        }
    }

    fn record(&mut self, role: Role, bundle: &PromptBundle, raw: &str, tokens: u64, latency: f64) {
        self.transcript.push(TranscriptRecord {
            task_id: self.task.id.clone(),
            step_index: self.transcript.len() as u32 + 1,
            role,
            prompt_digest: digest_prompt(bundle),
            raw_output: raw.to_string(),
            tokens,
            latency,
            prompt_version: PROMPT_VERSION.to_string(),
        });
    }

    fn call_crc(&mut self, bundle: &PromptBundle) -> Result<(String, u64), SchedulerError> {
        self.crc_steps += 1;
        let c = complete_text(
            self.sched.backend.as_ref(),
            &self.sched.crc_endpoint,
            bundle,
            &self.cfg.crc_params,
            self.ctx(Role::Crc),
        )
        .map_err(|source| SchedulerError::Gateway {
            step: self.crc_steps,
            role: Role::Crc,
            source,
        })?;
        let tokens = count_tokens(&c, &c.text);
        self.backoff_seconds += c.backoff_seconds;
        self.record(Role::Crc, bundle, &c.text, tokens, c.latency);
        Ok((c.text, tokens))
    }

    fn call_pvp(&mut self, bundle: &PromptBundle) -> Result<(String, u64), SchedulerError> {
        self.pvp_calls += 1;
        let c = complete_vision(
            self.sched.backend.as_ref(),
            &self.sched.pvp_endpoint,
            bundle,
            &self.cfg.pvp_params,
            &self.task.image_ref,
            self.ctx(Role::Pvp),
        )
        .map_err(|source| SchedulerError::Gateway {
            step: self.crc_steps,
            role: Role::Pvp,
            source,
        })?;
        let tokens = count_tokens(&c, &c.text);
        self.backoff_seconds += c.backoff_seconds;
        self.record(Role::Pvp, bundle, &c.text, tokens, c.latency);
        Ok((c.text, tokens))
    }

    fn crc_prompt(&self) -> PromptBundle {
        prompts::build_crc_prompt(
            self.task,
            &self.state,
            &self.sched.rules,
            self.cfg.include_hint,
            self.cfg.include_options,
        )
    }

    fn finish(self, termination: Termination, final_answer: Option<String>) -> TaskOutcome {
        let wall_seconds = (self.sched.clock.now() - self.started).max(0.0);
        TaskOutcome {
            task_id: self.task.id.clone(),
            mode: self.cfg.mode,
            final_answer,
            termination,
            crc_steps: self.crc_steps,
            pvp_calls: self.pvp_calls,
            state_tokens: self.state.token_estimate(),
            wall_seconds,
            backoff_seconds: self.backoff_seconds,
            state: self.state,
            transcript: self.transcript,
        }
    }

    /// Mode note for the next CRC prompt under `policy`, if any.
    fn policy_note(&self, policy: Policy) -> Option<String> {
        let rules = &self.sched.rules;
        match policy {
            Policy::Free => None,
            Policy::SingleQuery if self.pvp_calls >= 1 => Some(prompts::single_query_note(rules)),
            Policy::SingleQuery => None,
            Policy::FixedStep if self.pvp_calls < self.cfg.fixed_steps => {
                Some(prompts::fixed_step_note(rules, self.cfg.fixed_steps - self.pvp_calls))
            }
            Policy::FixedStep | Policy::AnswerOnly => Some(prompts::answer_only_note(rules)),
        }
    }

    fn queries_allowed(&self, policy: Policy) -> bool {
        match policy {
            Policy::Free => true,
            Policy::SingleQuery => self.pvp_calls == 0,
            Policy::FixedStep => self.pvp_calls < self.cfg.fixed_steps,
            Policy::AnswerOnly => false,
        }
    }

    fn answers_allowed(&self, policy: Policy) -> bool {
        match policy {
            Policy::FixedStep => self.pvp_calls >= self.cfg.fixed_steps,
            _ => true,
        }
    }

    /// The shared step loop. Budget is checked before step cap, and both
    /// before every CRC call.
    fn run_loop(mut self, policy: Policy) -> Result<TaskOutcome, SchedulerError> {
        let mut malformed_streak = 0u32;
        loop {
            if self.state.token_estimate() >= self.cfg.t_max {
                return Ok(self.finish(Termination::BudgetExhausted, None));
            }
            if self.crc_steps >= self.cfg.step_cap {
                return Ok(self.finish(Termination::StepCapReached, None));
            }

            let mut bundle = self.crc_prompt();
            if let Some(note) = self.policy_note(policy) {
                bundle = bundle.with_note(&note);
            }
            if malformed_streak > 0 {
                bundle = bundle.with_note(&prompts::format_reminder(&self.sched.rules));
            }
            let (raw, tokens) = self.call_crc(&bundle)?;

            let decision = match route(&raw, &self.sched.rules) {
                Decision::VisualQuery { .. } if !self.queries_allowed(policy) => Decision::Malformed { raw: raw.clone() },
                d => d,
            };
            match decision {
                Decision::FinalAnswer { answer } if self.answers_allowed(policy) => {
                    return Ok(self.finish(Termination::Answered, Some(answer)));
                }
                Decision::FinalAnswer { .. } => {
                    // Early answer in fixed-step mode: keep it in the trace and
                    // re-prompt for another visual question.
                    malformed_streak = 0;
                    self.state.push(raw, tokens, None);
                }
                Decision::VisualQuery { query } => {
                    malformed_streak = 0;
                    let pvp_bundle = prompts::build_pvp_prompt(&query, self.task);
                    let (evidence, evidence_tokens) = self.call_pvp(&pvp_bundle)?;
                    self.state.push(raw, tokens, Some((evidence, evidence_tokens)));
                }
                Decision::Malformed { raw } => {
                    malformed_streak += 1;
                    if malformed_streak > self.cfg.malformed_retries {
                        let fallback = raw.trim().to_string();
                        return Ok(self.finish(Termination::MalformedFallback, Some(fallback)));
                    }
                    self.state.push(raw, tokens, None);
                }
            }
        }
    }
}

impl Scheduler {
    pub fn new(
        backend: Arc<dyn ModelBackend>,
        crc_endpoint: EndpointConfig,
        pvp_endpoint: EndpointConfig,
        rules: RoutingRules,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Self {
            backend,
            crc_endpoint,
            pvp_endpoint,
            rules,
            clock,
        }
    }

    /// Run one task under `cfg.mode`.
    pub fn run_task(&self, task: &Task, cfg: &RunConfig) -> Result<TaskOutcome, SchedulerError> {
        match cfg.mode {
            Mode::Csmr => self.run_csmr(task, cfg),
            Mode::SingleQuery => self.run_single_query(task, cfg),
            Mode::PrePlanned => self.run_pre_planned(task, cfg),
            Mode::FixedStep => self.run_fixed_step(task, cfg),
            Mode::Caption => self.run_caption(task, cfg),
        }
    }

    /// Dynamic querying: the reasoning core decides at every step whether to
    /// ask another visual question or answer.
    pub fn run_csmr(&self, task: &Task, cfg: &RunConfig) -> Result<TaskOutcome, SchedulerError> {
        Session::new(self, task, cfg).run_loop(Policy::Free)
    }

    /// At most one visual query; later queries are treated as malformed.
    pub fn run_single_query(&self, task: &Task, cfg: &RunConfig) -> Result<TaskOutcome, SchedulerError> {
        Session::new(self, task, cfg).run_loop(Policy::SingleQuery)
    }

    /// Exactly `cfg.fixed_steps` query/evidence rounds, then an answer-only
    /// prompt. Early answers are rejected by re-prompting.
    pub fn run_fixed_step(&self, task: &Task, cfg: &RunConfig) -> Result<TaskOutcome, SchedulerError> {
        Session::new(self, task, cfg).run_loop(Policy::FixedStep)
    }

    /// All visual queries are planned in the first call, executed against
    /// the image, and then one more call must answer from the full evidence.
    pub fn run_pre_planned(&self, task: &Task, cfg: &RunConfig) -> Result<TaskOutcome, SchedulerError> {
        let mut session = Session::new(self, task, cfg);
        if cfg.step_cap == 0 {
            return Ok(session.finish(Termination::StepCapReached, None));
        }
        let plan_bundle = prompts::build_plan_prompt(task, cfg.include_hint, cfg.include_options);
        let (plan_raw, plan_tokens) = session.call_crc(&plan_bundle)?;
        let queries = parse_query_plan(&plan_raw);

        if queries.is_empty() {
            if let Decision::FinalAnswer { answer } = route(&plan_raw, &self.rules) {
                return Ok(session.finish(Termination::Answered, Some(answer)));
            }
            session.state.push(plan_raw, plan_tokens, None);
            return session.run_loop(Policy::AnswerOnly);
        }

        let mut evidence_lines = Vec::with_capacity(queries.len());
        let mut evidence_tokens = 0u64;
        for (i, query) in queries.iter().enumerate() {
            let accumulated = session.state.token_estimate() + plan_tokens + evidence_tokens;
            if accumulated >= cfg.t_max {
                let evidence = (!evidence_lines.is_empty()).then(|| (evidence_lines.join("\n"), evidence_tokens));
                session.state.push(plan_raw, plan_tokens, evidence);
                return Ok(session.finish(Termination::BudgetExhausted, None));
            }
            let bundle = prompts::build_pvp_prompt(query, task);
            let (answer, tokens) = session.call_pvp(&bundle)?;
            evidence_tokens += tokens;
            evidence_lines.push(format!("Q{n}: {query}\nA{n}: {answer}", n = i + 1));
        }
        session
            .state
            .push(plan_raw, plan_tokens, Some((evidence_lines.join("\n"), evidence_tokens)));
        session.run_loop(Policy::AnswerOnly)
    }

    /// Caption baseline: one image description, then one text-only answer.
    pub fn run_caption(&self, task: &Task, cfg: &RunConfig) -> Result<TaskOutcome, SchedulerError> {
        let mut session = Session::new(self, task, cfg);
        let caption_bundle = prompts::build_caption_prompt(task, cfg.caption_question_blind);
        let (caption, _) = session.call_pvp(&caption_bundle)?;
        let bundle = prompts::build_caption_answer_prompt(task, &caption, &self.rules, cfg.include_hint, cfg.include_options);
        let (raw, _) = session.call_crc(&bundle)?;
        Ok(match route(&raw, &self.rules) {
            Decision::FinalAnswer { answer } => session.finish(Termination::Answered, Some(answer)),
            _ => {
                let fallback = raw.trim().to_string();
                session.finish(Termination::MalformedFallback, Some(fallback))
            }
        })
    }
}
