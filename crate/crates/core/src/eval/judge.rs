use std::collections::BTreeSet;

use crate::agent::{AgentEvent, EventKind};
use crate::marketplace::{ListingStatus, MarketState};

use super::task::{TaskParameters, TaskSpec};

/// State-based success check comparing the store before and after a run.
pub fn judge_success(task: &TaskSpec, before: &MarketState, after: &MarketState, transcript: &[AgentEvent]) -> bool {
    match &task.parameters {
        TaskParameters::RenewListing { .. } => {
            let Some(id) = &task.target_listing_id else { return false };
            match (before.listings.get(id), after.listings.get(id)) {
                (Some(b), Some(a)) => a.renewed_at > b.renewed_at && a.status == ListingStatus::Active,
                _ => false,
            }
        }
        TaskParameters::BulkReply { body, .. } => {
            let Some(id) = &task.target_listing_id else { return false };
            let unread: BTreeSet<&str> = before
                .threads_for_listing(id)
                .filter(|t| t.unread_for_seller())
                .map(|t| t.id.as_str())
                .collect();
            let replied = unread.iter().all(|tid| {
                after.threads.get(*tid).is_some_and(|t| {
                    t.messages
                        .last()
                        .is_some_and(|m| m.sender_id == t.seller_id && m.body == *body)
                })
            });
            let untouched = before
                .threads
                .values()
                .filter(|t| !unread.contains(t.id.as_str()))
                .all(|t| after.threads.get(&t.id).is_some_and(|a| a.messages.len() == t.messages.len()));
            !unread.is_empty() && replied && untouched
        }
        TaskParameters::InventorySearch { expected_ids, .. } => {
            let found = final_result_ids(transcript);
            expected_ids.iter().all(|id| found.contains(id.as_str()))
        }
    }
}

/// Listing ids in the structured results of the last final answer.
pub fn final_result_ids(transcript: &[AgentEvent]) -> BTreeSet<&str> {
    transcript
        .iter()
        .rev()
        .find(|e| e.kind == EventKind::FinalAnswer)
        .and_then(|e| e.payload.pointer("/results/listings"))
        .and_then(|v| v.as_array())
        .map(|cards| cards.iter().filter_map(|c| c.get("id")?.as_str()).collect())
        .unwrap_or_default()
}
