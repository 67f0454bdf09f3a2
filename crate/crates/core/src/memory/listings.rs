//! Listings information memory: a per-session snapshot of the seller's
//! listings, rendered into the system prompt so the model can map a spoken
//! reference ("my Meta Quest 2") to a listing id.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::marketplace::{Listing, ListingStatus, MarketError, Store, Timestamp};
use crate::text;

pub const EXCERPT_CHARS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListingMemoryEntry {
    pub listing_id: String,
    pub title: String,
    pub description_excerpt: String,
    pub price: f64,
    pub status: ListingStatus,
}

impl From<&Listing> for ListingMemoryEntry {
    fn from(l: &Listing) -> Self {
        ListingMemoryEntry {
            listing_id: l.id.clone(),
            title: l.title.clone(),
            description_excerpt: text::excerpt(&l.description, EXCERPT_CHARS),
            price: l.price,
            status: l.status,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListingsMemory {
    pub seller_id: String,
    pub loaded_at: Timestamp,
    /// Newest listing first, as returned by the store.
    pub entries: Vec<ListingMemoryEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Resolution {
    Match { listing_id: String, score: u32 },
    NoMatch,
}

impl ListingsMemory {
    pub fn empty(seller_id: &str, loaded_at: Timestamp) -> Self {
        ListingsMemory {
            seller_id: seller_id.to_string(),
            loaded_at,
            entries: Vec::new(),
        }
    }

    pub fn load(store: &Store, seller_id: &str, now: Timestamp) -> Result<Self, MarketError> {
        let entries = store
            .list_seller_listings(seller_id)
            .iter()
            .map(ListingMemoryEntry::from)
            .collect();
        Ok(ListingsMemory {
            seller_id: seller_id.to_string(),
            loaded_at: now,
            entries,
        })
    }

    pub fn contains(&self, listing_id: &str) -> bool {
        self.entries.iter().any(|e| e.listing_id == listing_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn render(&self) -> String {
        if self.entries.is_empty() {
            return "The user has no listings.".to_string();
        }
        let mut out = String::from("The user's listings (id | title | price | status | description):\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "- {} | {} | ${:.2} | {} | {}",
                e.listing_id,
                e.title,
                e.price,
                e.status,
                e.description_excerpt.replace('\n', " ")
            );
        }
        out
    }

    /// Finds the entry best matching a free-text reference.
    ///
    /// Uses the same token-overlap score as inventory search, over title and
    /// description excerpt. Ties prefer active listings, then the more recent
    /// listing, then the smaller id.
    pub fn resolve(&self, reference: &str) -> Resolution {
        let query = text::token_set(reference);
        let best = self
            .entries
            .iter()
            .enumerate()
            .map(|(pos, e)| (text::overlap_score(&query, &e.title, &e.description_excerpt), pos, e))
            .filter(|(score, _, _)| *score > 0)
            .min_by(|a, b| {
                b.0.cmp(&a.0)
                    .then_with(|| {
                        let a_active = a.2.status == ListingStatus::Active;
                        let b_active = b.2.status == ListingStatus::Active;
                        b_active.cmp(&a_active)
                    })
                    .then_with(|| a.1.cmp(&b.1))
                    .then_with(|| a.2.listing_id.cmp(&b.2.listing_id))
            });
        match best {
            Some((score, _, e)) => Resolution::Match {
                listing_id: e.listing_id.clone(),
                score,
            },
            None => Resolution::NoMatch,
        }
    }
}
