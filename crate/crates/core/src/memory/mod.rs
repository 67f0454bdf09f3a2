//! Short-term memory of a session: the scratchpad of executed steps, the
//! ephemeral dialog history, and the listings information snapshot.

mod dialog;
mod listings;
mod scratchpad;

use std::collections::BTreeMap;

use chrono::Duration;
use thiserror::Error;

use crate::agent::{AgentEvent, Session};
use crate::marketplace::Timestamp;

pub use dialog::{DialogHistory, DialogRole, DialogTurn};
pub use listings::{ListingMemoryEntry, ListingsMemory, Resolution, EXCERPT_CHARS};
pub use scratchpad::{
    canonical_args, render_entries, Scratchpad, ScratchpadEntry, DEFAULT_OBSERVATION_CHAR_LIMIT,
};

pub const DEFAULT_SESSION_TTL_SECS: i64 = 30 * 60;

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("session ttl must be positive")]
    NonPositiveTtl,
}

/// Purges every session idle for longer than `ttl` and removes it from
/// `sessions`. Returns the `session_purged` event of each retired session.
pub fn purge_inactive_sessions(
    sessions: &mut BTreeMap<String, Session>,
    now: Timestamp,
    ttl: Duration,
) -> Result<Vec<AgentEvent>, MemoryError> {
    if ttl <= Duration::zero() {
        return Err(MemoryError::NonPositiveTtl);
    }
    let stale: Vec<String> = sessions
        .values()
        .filter(|s| s.is_stale(now, ttl))
        .map(|s| s.id.clone())
        .collect();
    Ok(stale
        .into_iter()
        .filter_map(|id| sessions.remove(&id))
        .map(|mut s| s.purge(now))
        .collect())
}
