use std::sync::Arc;

use crate::agent::{AgentEvent, EventKind, ProposedAction};
use crate::llm::{ChatBackend, ChatMessage, ChatRequest, LlmError, SIMULATOR_TEMPERATURE};

use super::task::TaskSpec;

pub const DONE_MARKER: &str = "[DONE]";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimulatorTurn {
    Say(String),
    Confirm,
    Reject(String),
    Done,
}

pub trait UserSimulator {
    fn next_turn(
        &mut self,
        task: &TaskSpec,
        events: &[AgentEvent],
        pending: Option<&ProposedAction>,
    ) -> Result<SimulatorTurn, LlmError>;
}

/// Opens with the task's canonical utterance, confirms every proposal and
/// answers anything else by restating the goal.
#[derive(Debug, Default)]
pub struct ScriptedSimulator {
    opened: bool,
}

impl ScriptedSimulator {
    pub fn new() -> Self {
        Self::default()
    }
}

impl UserSimulator for ScriptedSimulator {
    fn next_turn(
        &mut self,
        task: &TaskSpec,
        _events: &[AgentEvent],
        pending: Option<&ProposedAction>,
    ) -> Result<SimulatorTurn, LlmError> {
        if pending.is_some() {
            return Ok(SimulatorTurn::Confirm);
        }
        if !self.opened {
            self.opened = true;
            return Ok(SimulatorTurn::Say(task.utterance.clone()));
        }
        Ok(SimulatorTurn::Say(format!("As I said: {}", task.utterance)))
    }
}

/// A chat model playing the marketplace user.
pub struct ModelSimulator {
    backend: Arc<dyn ChatBackend>,
    pub temperature: f32,
    /// Own utterances, each with the number of agent events seen before it.
    said: Vec<(usize, String)>,
}

impl ModelSimulator {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        ModelSimulator {
            backend,
            temperature: SIMULATOR_TEMPERATURE,
            said: Vec::new(),
        }
    }

    pub fn request(&self, task: &TaskSpec, events: &[AgentEvent]) -> ChatRequest {
        let system = format!(
            "You are a Facebook Marketplace user chatting with an AI assistant. Your goal: {}\n\
             Never do the task yourself; insist that the assistant does it for you. Keep each message short. \
             Start by stating your goal. When the assistant has finished the task, reply with {DONE_MARKER} only.",
            task.utterance
        );
        let mut messages = vec![ChatMessage::system(system)];
        let mut said_anything = false;
        let mut own = self.said.iter().peekable();
        for (i, e) in events.iter().enumerate() {
            while let Some((_, text)) = own.next_if(|(at, _)| *at <= i) {
                messages.push(ChatMessage::assistant(text.clone()));
            }
            let text = match e.kind {
                EventKind::FinalAnswer => e.payload["answer"].as_str().map(str::to_string),
                EventKind::Observation => e.payload["text"].as_str().map(|t| format!("(tool result) {t}")),
                EventKind::Error => e.payload["message"].as_str().map(|t| format!("(error) {t}")),
                _ => None,
            };
            if let Some(t) = text {
                messages.push(ChatMessage::user(t));
                said_anything = true;
            }
        }
        for (_, text) in own {
            messages.push(ChatMessage::assistant(text.clone()));
        }
        if !said_anything {
            messages.insert(1, ChatMessage::user("Hi! How can I help you today?"));
        }
        ChatRequest::new(messages, self.temperature)
    }
}

impl UserSimulator for ModelSimulator {
    fn next_turn(
        &mut self,
        task: &TaskSpec,
        events: &[AgentEvent],
        pending: Option<&ProposedAction>,
    ) -> Result<SimulatorTurn, LlmError> {
        if pending.is_some() {
            return Ok(SimulatorTurn::Confirm);
        }
        let reply = self.backend.complete(&self.request(task, events))?.content;
        if reply.contains(DONE_MARKER) {
            return Ok(SimulatorTurn::Done);
        }
        let reply = reply.trim().to_string();
        self.said.push((events.len(), reply.clone()));
        Ok(SimulatorTurn::Say(reply))
    }
}
