//! The simulated consumer-to-consumer marketplace the agent's tools act on:
//! listings, buyer/seller message threads, filtered search and renewal.

mod persist;
pub mod search;
mod store;
mod types;

use thiserror::Error;

pub use store::{MarketState, Store, StoreConfig, DEFAULT_RENEWAL_DAYS};
pub use types::{
    Category, Condition, Listing, ListingPatch, ListingStatus, Message, MessageThread, NewListing,
    SearchQuery, Timestamp,
};

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: String },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("{user} is not a participant in thread {thread}")]
    NotParticipant { user: String, thread: String },
    #[error("store unavailable: {0}")]
    Unavailable(String),
}

impl MarketError {
    pub(crate) fn not_found(kind: &'static str, id: &str) -> Self {
        MarketError::NotFound {
            kind,
            id: id.to_string(),
        }
    }
}
