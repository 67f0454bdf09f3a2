//! The single-step interactive ReAct loop.
//!
//! A user turn asks the model for one Thought plus either an Action or a
//! Final Answer. Read-only actions run immediately and the model is asked
//! again with the observation; a mutating action is parked as a proposal
//! until the user confirms or rejects it.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;
use tracing::debug;

use super::parser::{parse_model_output, ParseError, ParsedOutput};
use super::prompt::{build_prompt, DEFAULT_PERSONA};
use super::session::{
    ActionStatus, AgentEvent, EventKind, ProposedAction, Session, SessionState,
    DEFAULT_EVENT_RETENTION,
};
use crate::llm::{ChatBackend, ChatMessage, ChatRequest, LlmError, AGENT_TEMPERATURE, DEFAULT_MAX_TOKENS};
use crate::marketplace::{MarketError, Store, Timestamp};
use crate::memory::{DialogRole, ListingsMemory, DEFAULT_OBSERVATION_CHAR_LIMIT};
use crate::tools::{KnowledgeIndex, ToolContext, ToolRegistry, ToolResult, ToolSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfirmPolicy {
    /// Only tools that change marketplace state wait for confirmation.
    #[default]
    MutatingOnly,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub confirm_policy: ConfirmPolicy,
    pub temperature: f32,
    pub max_tokens: u32,
    pub observation_char_limit: usize,
    /// Read-only executions allowed within one user turn.
    pub max_auto_executions: u32,
    pub persona: String,
    pub event_retention: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            confirm_policy: ConfirmPolicy::MutatingOnly,
            temperature: AGENT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            observation_char_limit: DEFAULT_OBSERVATION_CHAR_LIMIT,
            max_auto_executions: 4,
            persona: DEFAULT_PERSONA.to_string(),
            event_retention: DEFAULT_EVENT_RETENTION,
        }
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("session is {actual}, expected {expected}")]
    InvalidState {
        expected: &'static str,
        actual: &'static str,
    },
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error("store unavailable: {0}")]
    StoreUnavailable(#[from] MarketError),
}

pub const REPAIR_PROMPT_PREFIX: &str = "Your last output was malformed: ";
pub const REPAIR_PROMPT_SUFFIX: &str = ". Reply using the required format.";

pub fn repair_prompt(err: &ParseError) -> String {
    format!("{REPAIR_PROMPT_PREFIX}{err}{REPAIR_PROMPT_SUFFIX}")
}

/// User message that hands an observation back to the model.
pub fn continuation_message(observation: &str) -> String {
    format!("Observation: {observation}\nContinue with your next Thought.")
}

pub struct Agent {
    store: Arc<Store>,
    tools: Arc<ToolRegistry>,
    backend: Arc<dyn ChatBackend>,
    knowledge: Option<Arc<KnowledgeIndex>>,
    config: AgentConfig,
    session_counter: AtomicU64,
}

/// Book-keeping for one chain of model calls triggered by a user action.
struct Chain {
    auto_executions: u32,
    after_execution: bool,
    last_structured: Option<Value>,
}

enum Outcome {
    /// Model asked again with this user-role message.
    Continue(String),
    Stop,
}

impl Agent {
    pub fn new(
        store: Arc<Store>,
        tools: Arc<ToolRegistry>,
        backend: Arc<dyn ChatBackend>,
        config: AgentConfig,
    ) -> Self {
        Agent {
            store,
            tools,
            backend,
            knowledge: None,
            config,
            session_counter: AtomicU64::new(0),
        }
    }

    pub fn with_knowledge(mut self, index: Arc<KnowledgeIndex>) -> Self {
        self.knowledge = Some(index);
        self
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn tools(&self) -> &ToolRegistry {
        &self.tools
    }

    pub fn start_session(&self, user_id: &str, now: Timestamp) -> Result<Session, AgentError> {
        let memory = ListingsMemory::load(&self.store, user_id, now)?;
        let n = self.session_counter.fetch_add(1, Ordering::Relaxed) + 1;
        let mut session = Session::new(
            format!("S{n}"),
            user_id,
            now,
            memory,
            self.config.observation_char_limit,
            self.config.event_retention,
        );
        let listings = session.listings_memory.len();
        session.emit(
            EventKind::SessionStarted,
            json!({ "user_id": user_id, "listings": listings }),
            now,
        );
        Ok(session)
    }

    pub fn build_prompt(&self, session: &Session, user_message: Option<&str>) -> Vec<ChatMessage> {
        build_prompt(&self.config.persona, &self.tools, session, user_message)
    }

    fn require(session: &Session, expected: SessionState) -> Result<(), AgentError> {
        if session.state != expected {
            return Err(AgentError::InvalidState {
                expected: expected.as_str(),
                actual: session.state.as_str(),
            });
        }
        Ok(())
    }

    pub fn handle_user_message(
        &self,
        session: &mut Session,
        text: &str,
        now: Timestamp,
    ) -> Result<Vec<AgentEvent>, AgentError> {
        Agent::require(session, SessionState::AwaitingInput)?;
        let first = session.next_seq();
        let mut chain = Chain {
            auto_executions: 0,
            after_execution: false,
            last_structured: None,
        };
        let result = self.run_chain(session, text.to_string(), Some(text), now, &mut chain);
        finish(session, first, result)
    }

    pub fn confirm_action(&self, session: &mut Session, now: Timestamp) -> Result<Vec<AgentEvent>, AgentError> {
        Agent::require(session, SessionState::AwaitingConfirmation)?;
        let first = session.next_seq();
        let mut action = session.pending_action.take().expect("awaiting confirmation has a pending action");
        action.advance(ActionStatus::Confirmed);
        session.state = SessionState::AwaitingInput;

        if !session.step_budget_left() {
            action.advance(ActionStatus::Failed);
            step_limit_error(session, now);
            return finish(session, first, Ok(()));
        }
        let step = session.count_step();
        session.emit(
            EventKind::Thought,
            json!({ "step": step, "text": action.thought, "phase": "execute", "tool": action.tool_name, "confirmed": true }),
            now,
        );
        let result = self.execute(session, step, &action.thought, &action.tool_name, &action.arguments, now);
        action.advance(if result.ok { ActionStatus::Executed } else { ActionStatus::Failed });
        debug!(session = %session.id, tool = %action.tool_name, ok = result.ok, "confirmed action executed");

        let mut chain = Chain {
            auto_executions: 0,
            after_execution: true,
            last_structured: result.structured.clone(),
        };
        let cont = continuation_message(&result.observation_text);
        let out = self.run_chain(session, cont, None, now, &mut chain);
        finish(session, first, out)
    }

    pub fn reject_action(
        &self,
        session: &mut Session,
        reason: Option<&str>,
        now: Timestamp,
    ) -> Result<Vec<AgentEvent>, AgentError> {
        Agent::require(session, SessionState::AwaitingConfirmation)?;
        let first = session.next_seq();
        let mut action = session.pending_action.take().expect("awaiting confirmation has a pending action");
        action.advance(ActionStatus::Rejected);
        let reason = reason.map(str::trim).filter(|r| !r.is_empty()).unwrap_or("no reason given");
        let observation = format!("user rejected: {reason}");
        session
            .scratchpad
            .append(&action.thought, &action.tool_name, action.arguments.clone(), &observation);
        session.emit(
            EventKind::Observation,
            json!({
                "step": action.step_index,
                "tool_name": action.tool_name,
                "ok": false,
                "rejected": true,
                "text": observation,
            }),
            now,
        );
        session.state = SessionState::AwaitingInput;
        finish(session, first, Ok(()))
    }

    fn complete(&self, messages: Vec<ChatMessage>) -> Result<String, LlmError> {
        let mut request = ChatRequest::new(messages, self.config.temperature);
        request.max_tokens = self.config.max_tokens;
        Ok(self.backend.complete(&request)?.content)
    }

    /// One model call, with a single repair round on unparseable output.
    fn next_output(&self, session: &Session, input: &str) -> Result<Result<ParsedOutput, ParseError>, LlmError> {
        let mut messages = self.build_prompt(session, Some(input));
        let raw = self.complete(messages.clone())?;
        let err = match parse_model_output(&raw) {
            Ok(p) => return Ok(Ok(p)),
            Err(e) => e,
        };
        debug!(session = %session.id, error = %err, "malformed model output, asking for repair");
        messages.push(ChatMessage::assistant(raw));
        messages.push(ChatMessage::user(repair_prompt(&err)));
        let raw = self.complete(messages)?;
        Ok(parse_model_output(&raw))
    }

    fn run_chain(
        &self,
        session: &mut Session,
        mut input: String,
        user_text: Option<&str>,
        now: Timestamp,
        chain: &mut Chain,
    ) -> Result<(), AgentError> {
        let mut pending_user_turn = user_text;
        loop {
            let parsed = match self.next_output(session, &input) {
                Ok(p) => p,
                Err(e) => {
                    if let Some(t) = pending_user_turn.take() {
                        session.dialog.push(DialogRole::User, t, now);
                    }
                    session.emit(EventKind::Error, json!({ "kind": "backend", "message": e.to_string() }), now);
                    session.state = SessionState::AwaitingInput;
                    return Err(AgentError::Backend(e));
                }
            };
            // the user's words become history only after the prompt that carried them
            if let Some(t) = pending_user_turn.take() {
                session.dialog.push(DialogRole::User, t, now);
            }
            let parsed = match parsed {
                Ok(p) => p,
                Err(e) => {
                    session.emit(
                        EventKind::Error,
                        json!({ "kind": "parse", "parse_error": e.kind, "message": e.to_string() }),
                        now,
                    );
                    session.state = SessionState::AwaitingInput;
                    return Ok(());
                }
            };
            match self.step(session, parsed, now, chain) {
                Outcome::Continue(next) => input = next,
                Outcome::Stop => return Ok(()),
            }
        }
    }

    fn step(&self, session: &mut Session, parsed: ParsedOutput, now: Timestamp, chain: &mut Chain) -> Outcome {
        match parsed {
            ParsedOutput::FinalAnswer { thought, answer } => {
                if !chain.after_execution {
                    if !session.step_budget_left() {
                        step_limit_error(session, now);
                        return Outcome::Stop;
                    }
                    let step = session.count_step();
                    session.emit(
                        EventKind::Thought,
                        json!({ "step": step, "text": thought, "phase": "answer" }),
                        now,
                    );
                }
                session.emit(
                    EventKind::FinalAnswer,
                    json!({ "thought": thought, "answer": answer, "results": chain.last_structured }),
                    now,
                );
                session.dialog.push(DialogRole::Assistant, &answer, now);
                session.state = SessionState::AwaitingInput;
                Outcome::Stop
            }
            ParsedOutput::Action {
                thought,
                tool_name,
                arguments,
            } => {
                let spec = self.tools.lookup(&tool_name).cloned();
                let needs_confirmation = spec.as_ref().is_some_and(|s| {
                    s.mutating || self.config.confirm_policy == ConfirmPolicy::All
                });
                if !needs_confirmation && chain.auto_executions >= self.config.max_auto_executions {
                    session.emit(
                        EventKind::Error,
                        json!({
                            "kind": "execution_cap",
                            "message": format!("stopped after {} automatic steps in one turn", chain.auto_executions),
                        }),
                        now,
                    );
                    session.state = SessionState::AwaitingInput;
                    return Outcome::Stop;
                }
                if !session.step_budget_left() {
                    step_limit_error(session, now);
                    return Outcome::Stop;
                }
                let step = session.count_step();
                let phase = if needs_confirmation { "propose" } else { "auto" };
                session.emit(
                    EventKind::Thought,
                    json!({ "step": step, "text": thought, "phase": phase, "tool": tool_name }),
                    now,
                );

                let invalid = match &spec {
                    None => Some(ToolResult::error(format!("unknown tool {tool_name}"))),
                    Some(s) => self.check_listing_reference(session, s, &arguments),
                };
                if let Some(result) = invalid {
                    chain.auto_executions += 1;
                    chain.after_execution = true;
                    self.record_observation(session, step, &thought, &tool_name, &arguments, &result, false, now);
                    return Outcome::Continue(continuation_message(&result.observation_text));
                }
                let spec = spec.expect("unknown tools handled above");

                if needs_confirmation {
                    let proposal = ProposedAction {
                        step_index: step,
                        thought,
                        tool_name,
                        arguments,
                        mutating: spec.mutating,
                        status: ActionStatus::Proposed,
                    };
                    session.emit(
                        EventKind::ProposedAction,
                        serde_json::to_value(&proposal).expect("proposal serializes"),
                        now,
                    );
                    session.pending_action = Some(proposal);
                    session.state = SessionState::AwaitingConfirmation;
                    return Outcome::Stop;
                }

                session.emit(
                    EventKind::AutoExecuted,
                    json!({ "step": step, "tool_name": tool_name, "arguments": arguments }),
                    now,
                );
                let result = self.execute(session, step, &thought, &tool_name, &arguments, now);
                chain.auto_executions += 1;
                chain.after_execution = true;
                if result.structured.is_some() {
                    chain.last_structured = result.structured.clone();
                }
                Outcome::Continue(continuation_message(&result.observation_text))
            }
        }
    }

    /// An owned-listing argument must name a listing in the session's
    /// listings memory.
    fn check_listing_reference(&self, session: &Session, spec: &ToolSpec, args: &Map<String, Value>) -> Option<ToolResult> {
        if !spec.owned_listing_arg {
            return None;
        }
        let id = args.get("listing_id")?.as_str()?;
        if session.listings_memory.contains(id) {
            None
        } else {
            Some(ToolResult::error(format!(
                "listing {id} is not one of your listings; pick an id from the listings information"
            )))
        }
    }

    /// Runs a tool, records the observation and refreshes listings memory
    /// after successful mutations.
    fn execute(
        &self,
        session: &mut Session,
        step: u32,
        thought: &str,
        tool_name: &str,
        arguments: &Map<String, Value>,
        now: Timestamp,
    ) -> ToolResult {
        let ctx = ToolContext {
            store: &self.store,
            user_id: &session.user_id,
            now,
            knowledge: self.knowledge.as_deref(),
            backend: Some(self.backend.as_ref()),
        };
        let result = self.tools.dispatch(tool_name, arguments, &ctx);
        let mutating = self.tools.lookup(tool_name).is_some_and(|s| s.mutating);
        if result.ok && mutating {
            if let Ok(memory) = ListingsMemory::load(&self.store, &session.user_id, now) {
                session.listings_memory = memory;
            }
        }
        self.record_observation(session, step, thought, tool_name, arguments, &result, mutating, now);
        result
    }

    #[allow(clippy::too_many_arguments)]
    fn record_observation(
        &self,
        session: &mut Session,
        step: u32,
        thought: &str,
        tool_name: &str,
        arguments: &Map<String, Value>,
        result: &ToolResult,
        mutating: bool,
        now: Timestamp,
    ) {
        session
            .scratchpad
            .append(thought, tool_name, arguments.clone(), &result.observation_text);
        session.emit(
            EventKind::Observation,
            json!({
                "step": step,
                "tool_name": tool_name,
                "ok": result.ok,
                "mutating": mutating,
                "text": result.observation_text,
                "structured": result.structured,
            }),
            now,
        );
    }
}

fn step_limit_error(session: &mut Session, now: Timestamp) {
    session.emit(
        EventKind::Error,
        json!({
            "kind": "step_limit",
            "message": format!("step budget of {} exhausted", session.step_budget.unwrap_or_default()),
        }),
        now,
    );
    session.state = SessionState::AwaitingInput;
}

fn finish(session: &Session, first: u64, result: Result<(), AgentError>) -> Result<Vec<AgentEvent>, AgentError> {
    result.map(|()| session.events_from(first))
}
