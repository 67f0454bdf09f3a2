//! Filtered, scored inventory search.
//!
//! Only active listings are candidates. A listing must satisfy every filter
//! present in the query; when the query has text, it must also share at least
//! one token with the listing. Results are ordered by score (descending), then
//! by most recent renewal, then by id.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use super::types::{Listing, ListingStatus, SearchQuery};
use crate::text;

pub fn matches_filters(listing: &Listing, query: &SearchQuery) -> bool {
    if listing.status != ListingStatus::Active {
        return false;
    }
    if query.min_price.is_some_and(|lo| listing.price < lo) {
        return false;
    }
    if query.max_price.is_some_and(|hi| listing.price > hi) {
        return false;
    }
    if query.condition.is_some_and(|c| listing.condition != c) {
        return false;
    }
    if query.category.is_some_and(|c| listing.category != c) {
        return false;
    }
    if let Some(loc) = query.location.as_deref().map(str::trim) {
        if !loc.is_empty() && !listing.location.to_lowercase().contains(&loc.to_lowercase()) {
            return false;
        }
    }
    true
}

pub fn text_score(listing: &Listing, query_tokens: &BTreeSet<String>) -> u32 {
    text::overlap_score(query_tokens, &listing.title, &listing.description)
}

fn ranking(a: &(u32, &Listing), b: &(u32, &Listing)) -> Ordering {
    b.0.cmp(&a.0)
        .then_with(|| b.1.renewed_at.cmp(&a.1.renewed_at))
        .then_with(|| a.1.id.cmp(&b.1.id))
}

/// Runs `query` over `listings`. The query is assumed to be validated.
pub fn run<'a>(listings: impl IntoIterator<Item = &'a Listing>, query: &SearchQuery) -> Vec<Listing> {
    let query_tokens = text::token_set(&query.text);
    let mut hits: Vec<(u32, &Listing)> = listings
        .into_iter()
        .filter(|l| matches_filters(l, query))
        .filter_map(|l| {
            let score = text_score(l, &query_tokens);
            (query_tokens.is_empty() || score > 0).then_some((score, l))
        })
        .collect();
    hits.sort_by(ranking);
    hits.into_iter()
        .take(query.limit)
        .map(|(_, l)| l.clone())
        .collect()
}
