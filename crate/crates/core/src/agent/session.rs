use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::marketplace::Timestamp;
use crate::memory::{DialogHistory, ListingsMemory, Scratchpad};

pub const DEFAULT_EVENT_RETENTION: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Thought,
    ProposedAction,
    AutoExecuted,
    Observation,
    FinalAnswer,
    Error,
    SessionStarted,
    SessionPurged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentEvent {
    pub session_id: String,
    pub seq: u64,
    pub kind: EventKind,
    pub payload: Value,
    pub at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionStatus {
    Proposed,
    Confirmed,
    Rejected,
    Executed,
    Failed,
}

impl ActionStatus {
    pub fn can_become(self, next: ActionStatus) -> bool {
        use ActionStatus::*;
        matches!(
            (self, next),
            (Proposed, Confirmed) | (Proposed, Rejected) | (Confirmed, Executed) | (Confirmed, Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposedAction {
    pub step_index: u32,
    pub thought: String,
    pub tool_name: String,
    pub arguments: Map<String, Value>,
    pub mutating: bool,
    pub status: ActionStatus,
}

impl ProposedAction {
    pub(crate) fn advance(&mut self, next: ActionStatus) {
        debug_assert!(
            self.status.can_become(next),
            "illegal action transition {:?} -> {next:?}",
            self.status
        );
        self.status = next;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleContext {
    Seller,
    Buyer,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    AwaitingInput,
    AwaitingConfirmation,
    Idle,
}

impl SessionState {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::AwaitingInput => "awaiting_input",
            SessionState::AwaitingConfirmation => "awaiting_confirmation",
            SessionState::Idle => "idle",
        }
    }
}

/// One conversation: its memories, pending proposal and event log.
#[derive(Debug, Clone, Serialize)]
pub struct Session {
    pub id: String,
    pub user_id: String,
    pub role_context: RoleContext,
    pub created_at: Timestamp,
    pub last_activity_at: Timestamp,
    pub state: SessionState,
    pub pending_action: Option<ProposedAction>,
    pub scratchpad: Scratchpad,
    pub dialog: DialogHistory,
    pub listings_memory: ListingsMemory,
    /// Upper bound on Thought-Action cycles; `None` means unbounded.
    pub step_budget: Option<u32>,
    steps_taken: u32,
    events: VecDeque<AgentEvent>,
    event_retention: usize,
    next_seq: u64,
}

impl Session {
    pub(crate) fn new(
        id: String,
        user_id: &str,
        now: Timestamp,
        listings_memory: ListingsMemory,
        observation_char_limit: usize,
        event_retention: usize,
    ) -> Self {
        let role_context = if listings_memory.is_empty() {
            RoleContext::Buyer
        } else {
            RoleContext::Mixed
        };
        Session {
            id,
            user_id: user_id.to_string(),
            role_context,
            created_at: now,
            last_activity_at: now,
            state: SessionState::AwaitingInput,
            pending_action: None,
            scratchpad: Scratchpad::new(observation_char_limit),
            dialog: DialogHistory::default(),
            listings_memory,
            step_budget: None,
            steps_taken: 0,
            events: VecDeque::new(),
            event_retention: event_retention.max(1),
            next_seq: 1,
        }
    }

    /// Number of Thought-Action cycles presented or executed so far.
    pub fn steps_taken(&self) -> u32 {
        self.steps_taken
    }

    pub(crate) fn count_step(&mut self) -> u32 {
        self.steps_taken += 1;
        self.steps_taken
    }

    pub(crate) fn step_budget_left(&self) -> bool {
        self.step_budget.is_none_or(|b| self.steps_taken < b)
    }

    /// Seq the next event will get.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Retained events, oldest first.
    pub fn events(&self) -> impl Iterator<Item = &AgentEvent> {
        self.events.iter()
    }

    /// Retained events with `seq >= from`.
    pub fn events_from(&self, from: u64) -> Vec<AgentEvent> {
        self.events.iter().filter(|e| e.seq >= from).cloned().collect()
    }

    pub(crate) fn emit(&mut self, kind: EventKind, payload: Value, at: Timestamp) -> AgentEvent {
        let at = at.max(self.last_activity_at);
        let event = AgentEvent {
            session_id: self.id.clone(),
            seq: self.next_seq,
            kind,
            payload,
            at,
        };
        self.next_seq += 1;
        self.last_activity_at = at;
        if self.events.len() == self.event_retention {
            self.events.pop_front();
        }
        self.events.push_back(event.clone());
        event
    }

    pub fn is_stale(&self, now: Timestamp, ttl: chrono::Duration) -> bool {
        now - self.last_activity_at > ttl
    }

    /// Erases every memory of the session and retires it.
    pub fn purge(&mut self, now: Timestamp) -> AgentEvent {
        let idle = (now - self.last_activity_at).num_seconds();
        self.scratchpad.clear();
        self.dialog.clear();
        self.listings_memory.entries.clear();
        self.pending_action = None;
        self.state = SessionState::Idle;
        self.events.clear();
        self.emit(
            EventKind::SessionPurged,
            json!({ "reason": "inactivity", "idle_secs": idle }),
            now,
        )
    }
}
