//! Live sessions, their turn locks, and the published event log that
//! stream subscribers replay from.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex, TryLockError};

use bazaar_core::agent::{Agent, AgentError, AgentEvent, Session, SessionState};
use bazaar_core::marketplace::Timestamp;
use chrono::{Duration, Utc};
use tokio::sync::broadcast;

use crate::error::ApiError;

const BROADCAST_CAPACITY: usize = 1024;

struct Entry {
    session: Arc<Mutex<Session>>,
    /// Everything published for this session, oldest first.
    log: VecDeque<AgentEvent>,
}

pub struct Hub {
    agent: Agent,
    entries: Mutex<HashMap<String, Entry>>,
    events: broadcast::Sender<AgentEvent>,
    retention: usize,
}

pub enum Decision {
    Confirm,
    Reject(Option<String>),
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TurnSummary {
    pub session_id: String,
    pub state: SessionState,
    /// Seq range of the events this turn produced; empty when none.
    pub first_seq: u64,
    pub last_seq: Option<u64>,
}

/// A consistent starting point for a stream: the retained backlog plus a
/// receiver for everything published after it.
pub struct Subscription {
    pub backlog: Vec<AgentEvent>,
    pub live: broadcast::Receiver<AgentEvent>,
    /// Highest seq published before the subscription was taken.
    pub published: u64,
}

impl Hub {
    pub fn new(agent: Agent) -> Self {
        let retention = agent.config().event_retention;
        Hub {
            agent,
            entries: Mutex::new(HashMap::new()),
            events: broadcast::channel(BROADCAST_CAPACITY).0,
            retention,
        }
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn session_count(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    fn publish(&self, session_id: &str, events: Vec<AgentEvent>) {
        if events.is_empty() {
            return;
        }
        let mut entries = self.entries.lock().unwrap();
        let Some(entry) = entries.get_mut(session_id) else { return };
        for e in events {
            if entry.log.back().is_some_and(|last| last.seq >= e.seq) {
                continue;
            }
            if entry.log.len() == self.retention {
                entry.log.pop_front();
            }
            entry.log.push_back(e.clone());
            // no receivers is fine
            let _ = self.events.send(e);
        }
    }

    pub fn create_session(&self, user_id: &str, now: Timestamp) -> Result<(String, SessionState), ApiError> {
        let session = self.agent.start_session(user_id, now).map_err(ApiError::from)?;
        let id = session.id.clone();
        let state = session.state;
        let started: Vec<AgentEvent> = session.events().cloned().collect();
        self.entries.lock().unwrap().insert(
            id.clone(),
            Entry {
                session: Arc::new(Mutex::new(session)),
                log: VecDeque::new(),
            },
        );
        self.publish(&id, started);
        Ok((id, state))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.entries
            .lock()
            .unwrap()
            .get(id)
            .map(|e| e.session.clone())
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }

    pub fn state(&self, id: &str) -> Result<(SessionState, u32, Option<serde_json::Value>), ApiError> {
        let session = self.session(id)?;
        let s = session.lock().unwrap();
        let pending = s.pending_action.as_ref().map(|p| serde_json::to_value(p).unwrap());
        Ok((s.state, s.steps_taken(), pending))
    }

    /// Runs one agent operation under the session's turn lock. A turn
    /// already in progress gives `409`.
    fn with_turn<F>(&self, id: &str, op: F) -> Result<TurnSummary, ApiError>
    where
        F: FnOnce(&Agent, &mut Session) -> Result<Vec<AgentEvent>, AgentError>,
    {
        let handle = self.session(id)?;
        let mut session = match handle.try_lock() {
            Ok(guard) => guard,
            Err(TryLockError::WouldBlock) => {
                return Err(ApiError::conflict("another turn is in progress for this session"))
            }
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        };
        let first_seq = session.next_seq();
        let result = op(&self.agent, &mut session);
        let produced = session.events_from(first_seq);
        let summary = TurnSummary {
            session_id: session.id.clone(),
            state: session.state,
            first_seq,
            last_seq: produced.last().map(|e| e.seq),
        };
        drop(session);
        self.publish(id, produced);
        result.map(|_| summary).map_err(ApiError::from)
    }

    pub fn check_accepts_message(&self, id: &str) -> Result<(), ApiError> {
        let handle = self.session(id)?;
        let state = match handle.try_lock() {
            Ok(s) => s.state,
            Err(TryLockError::WouldBlock) => {
                return Err(ApiError::conflict("another turn is in progress for this session"))
            }
            Err(TryLockError::Poisoned(p)) => p.into_inner().state,
        };
        if state == SessionState::AwaitingConfirmation {
            return Err(ApiError::conflict("confirm or reject the pending action first"));
        }
        Ok(())
    }

    pub fn post_message(&self, id: &str, text: &str) -> Result<TurnSummary, ApiError> {
        self.with_turn(id, |agent, s| {
            if s.state == SessionState::AwaitingConfirmation {
                return Err(AgentError::InvalidState {
                    expected: SessionState::AwaitingInput.as_str(),
                    actual: s.state.as_str(),
                });
            }
            agent.handle_user_message(s, text, Utc::now())
        })
    }

    pub fn decide(&self, id: &str, decision: Decision) -> Result<TurnSummary, ApiError> {
        self.with_turn(id, |agent, s| match decision {
            Decision::Confirm => agent.confirm_action(s, Utc::now()),
            Decision::Reject(reason) => agent.reject_action(s, reason.as_deref(), Utc::now()),
        })
    }

    /// Backlog from `from_seq` (inclusive) and a live receiver, taken under
    /// one lock so nothing falls between them.
    pub fn subscribe(&self, id: &str, from_seq: Option<u64>) -> Result<Subscription, ApiError> {
        let entries = self.entries.lock().unwrap();
        let entry = entries
            .get(id)
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))?;
        let live = self.events.subscribe();
        let backlog = match from_seq {
            Some(from) => entry.log.iter().filter(|e| e.seq >= from).cloned().collect(),
            None => Vec::new(),
        };
        let published = entry.log.back().map_or(0, |e| e.seq);
        Ok(Subscription {
            backlog,
            live,
            published,
        })
    }

    /// Published events of `id` with `seq > after`; used to refill a
    /// subscriber that fell behind the broadcast buffer.
    pub fn published_after(&self, id: &str, after: u64) -> Vec<AgentEvent> {
        self.entries
            .lock()
            .unwrap()
            .get(id)
            .map(|e| e.log.iter().filter(|ev| ev.seq > after).cloned().collect())
            .unwrap_or_default()
    }

    /// Purges sessions idle for longer than `ttl`. Sessions in the middle
    /// of a turn are skipped.
    pub fn purge_idle(&self, now: Timestamp, ttl: Duration) -> Vec<String> {
        let candidates: Vec<(String, Arc<Mutex<Session>>)> = self
            .entries
            .lock()
            .unwrap()
            .iter()
            .map(|(id, e)| (id.clone(), e.session.clone()))
            .collect();
        let mut purged = Vec::new();
        for (id, handle) in candidates {
            let Ok(mut session) = handle.try_lock() else { continue };
            if !session.is_stale(now, ttl) {
                continue;
            }
            let event = session.purge(now);
            drop(session);
            self.publish(&id, vec![event]);
            self.entries.lock().unwrap().remove(&id);
            tracing::info!(session = %id, "purged idle session");
            purged.push(id);
        }
        purged
    }
}
