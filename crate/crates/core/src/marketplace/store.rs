use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{RwLock, RwLockReadGuard};

use chrono::Duration;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::types::{
    Listing, ListingPatch, ListingStatus, Message, MessageThread, NewListing, SearchQuery,
    Timestamp,
};
use super::{persist, search, MarketError};

pub const DEFAULT_RENEWAL_DAYS: i64 = 7;

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub renewal_period: Duration,
    /// Directory holding `listings.jsonl`, `threads.jsonl`, `messages.jsonl`.
    pub persist_dir: Option<PathBuf>,
    /// Flush to `persist_dir` before every mutating call returns.
    pub snapshot_on_write: bool,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            renewal_period: Duration::days(DEFAULT_RENEWAL_DAYS),
            persist_dir: None,
            snapshot_on_write: true,
        }
    }
}

/// Plain marketplace state. Cloning it gives a fully isolated copy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub listings: BTreeMap<String, Listing>,
    pub threads: BTreeMap<String, MessageThread>,
    next_listing: u64,
    next_thread: u64,
    next_message: u64,
}

fn next_id(counter: &mut u64, prefix: char) -> String {
    *counter += 1;
    format!("{prefix}{counter}")
}

fn id_number(id: &str, prefix: char) -> u64 {
    id.strip_prefix(prefix)
        .and_then(|n| n.parse().ok())
        .unwrap_or(0)
}

fn check_text(field: &str, value: &str) -> Result<(), MarketError> {
    if value.trim().is_empty() {
        return Err(MarketError::Validation(format!("{field} must not be empty")));
    }
    Ok(())
}

fn check_price(price: f64) -> Result<(), MarketError> {
    if !price.is_finite() || price < 0.0 {
        return Err(MarketError::Validation(format!(
            "price must be a non-negative number, got {price}"
        )));
    }
    Ok(())
}

impl MarketState {
    /// Rebuilds a state from raw records, deriving id counters so fresh ids
    /// never collide with loaded ones.
    pub fn from_records(listings: Vec<Listing>, threads: Vec<MessageThread>) -> Self {
        let mut state = MarketState::default();
        for l in listings {
            state.next_listing = state.next_listing.max(id_number(&l.id, 'L'));
            state.listings.insert(l.id.clone(), l);
        }
        for t in threads {
            state.next_thread = state.next_thread.max(id_number(&t.id, 'T'));
            for m in &t.messages {
                state.next_message = state.next_message.max(id_number(&m.id, 'M'));
            }
            state.threads.insert(t.id.clone(), t);
        }
        state
    }

    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("market state serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn listing(&self, id: &str) -> Result<&Listing, MarketError> {
        self.listings
            .get(id)
            .ok_or_else(|| MarketError::not_found("listing", id))
    }

    pub fn threads_for_listing<'a>(
        &'a self,
        listing_id: &'a str,
    ) -> impl Iterator<Item = &'a MessageThread> + 'a {
        self.threads
            .values()
            .filter(move |t| t.listing_id == listing_id)
    }

    fn create_listing(
        &mut self,
        new: NewListing,
        now: Timestamp,
        period: Duration,
    ) -> Result<Listing, MarketError> {
        check_text("seller_id", &new.seller_id)?;
        check_text("title", &new.title)?;
        check_price(new.price)?;
        let listing = Listing {
            id: next_id(&mut self.next_listing, 'L'),
            seller_id: new.seller_id,
            title: new.title.trim().to_string(),
            description: new.description,
            price: new.price,
            category: new.category,
            condition: new.condition,
            location: new.location,
            status: ListingStatus::Active,
            created_at: now,
            renewed_at: now,
            expires_at: now + period,
            image_refs: new.image_refs,
        };
        self.listings.insert(listing.id.clone(), listing.clone());
        Ok(listing)
    }

    fn update_listing(&mut self, id: &str, patch: &ListingPatch) -> Result<Listing, MarketError> {
        if let Some(t) = &patch.title {
            check_text("title", t)?;
        }
        if let Some(p) = patch.price {
            check_price(p)?;
        }
        let listing = self
            .listings
            .get_mut(id)
            .ok_or_else(|| MarketError::not_found("listing", id))?;
        if let Some(t) = &patch.title {
            listing.title = t.trim().to_string();
        }
        if let Some(d) = &patch.description {
            listing.description = d.clone();
        }
        if let Some(p) = patch.price {
            listing.price = p;
        }
        if let Some(c) = patch.condition {
            listing.condition = c;
        }
        if let Some(l) = &patch.location {
            listing.location = l.clone();
        }
        if let Some(s) = patch.status {
            listing.status = s;
        }
        Ok(listing.clone())
    }

    fn renew_listing(
        &mut self,
        id: &str,
        now: Timestamp,
        period: Duration,
    ) -> Result<Listing, MarketError> {
        let listing = self
            .listings
            .get_mut(id)
            .ok_or_else(|| MarketError::not_found("listing", id))?;
        match listing.status {
            ListingStatus::Active | ListingStatus::Expired => {}
            other => {
                return Err(MarketError::InvalidState(format!(
                    "listing {id} is {other} and cannot be renewed"
                )))
            }
        }
        // renewed_at never moves before created_at
        let at = now.max(listing.created_at);
        listing.renewed_at = at;
        listing.expires_at = at + period;
        listing.status = ListingStatus::Active;
        Ok(listing.clone())
    }

    fn append_message(
        &mut self,
        thread_id: &str,
        sender_id: &str,
        body: &str,
        now: Timestamp,
    ) -> Result<Message, MarketError> {
        check_text("message body", body)?;
        let thread = self
            .threads
            .get(thread_id)
            .ok_or_else(|| MarketError::not_found("thread", thread_id))?;
        if !thread.is_participant(sender_id) {
            return Err(MarketError::NotParticipant {
                user: sender_id.to_string(),
                thread: thread_id.to_string(),
            });
        }
        let id = next_id(&mut self.next_message, 'M');
        let thread = self.threads.get_mut(thread_id).expect("checked above");
        // keep messages ordered even if the caller's clock runs behind
        let sent_at = thread.last_sent_at().map_or(now, |last| now.max(last));
        if sender_id == thread.seller_id {
            let buyer = thread.buyer_id.clone();
            for m in thread.messages.iter_mut().filter(|m| m.sender_id == buyer) {
                m.read = true;
            }
        }
        let message = Message {
            id,
            thread_id: thread_id.to_string(),
            sender_id: sender_id.to_string(),
            body: body.to_string(),
            sent_at,
            read: false,
        };
        thread.messages.push(message.clone());
        Ok(message)
    }

    fn message_listing(
        &mut self,
        listing_id: &str,
        buyer_id: &str,
        body: &str,
        now: Timestamp,
    ) -> Result<(String, Message), MarketError> {
        check_text("buyer_id", buyer_id)?;
        check_text("message body", body)?;
        let listing = self.listing(listing_id)?;
        if listing.seller_id == buyer_id {
            return Err(MarketError::Validation(
                "sellers cannot open a buyer thread on their own listing".into(),
            ));
        }
        let seller_id = listing.seller_id.clone();
        let existing = self
            .threads
            .values()
            .find(|t| t.listing_id == listing_id && t.buyer_id == buyer_id)
            .map(|t| t.id.clone());
        let thread_id = match existing {
            Some(id) => id,
            None => {
                let id = next_id(&mut self.next_thread, 'T');
                self.threads.insert(
                    id.clone(),
                    MessageThread {
                        id: id.clone(),
                        listing_id: listing_id.to_string(),
                        buyer_id: buyer_id.to_string(),
                        seller_id,
                        messages: Vec::new(),
                    },
                );
                id
            }
        };
        let message = self.append_message(&thread_id, buyer_id, body, now)?;
        Ok((thread_id, message))
    }

    fn bulk_reply(&mut self, listing_id: &str, body: &str, now: Timestamp) -> Result<usize, MarketError> {
        check_text("message body", body)?;
        let seller = self.listing(listing_id)?.seller_id.clone();
        let targets: Vec<String> = self
            .threads_for_listing(listing_id)
            .filter(|t| t.unread_for_seller())
            .map(|t| t.id.clone())
            .collect();
        for thread_id in &targets {
            self.append_message(thread_id, &seller, body, now)?;
        }
        Ok(targets.len())
    }
}

/// Shareable marketplace store: concurrent readers, one writer at a time.
///
/// Every mutation is applied to a copy of the state and swapped in only once
/// it (and the optional flush) succeeded, so readers never see half of an
/// operation.
#[derive(Debug)]
pub struct Store {
    state: RwLock<MarketState>,
    config: StoreConfig,
}

impl Store {
    pub fn new(config: StoreConfig) -> Self {
        Store::from_state(MarketState::default(), config)
    }

    pub fn in_memory() -> Self {
        Store::new(StoreConfig::default())
    }

    pub fn from_state(state: MarketState, config: StoreConfig) -> Self {
        Store {
            state: RwLock::new(state),
            config,
        }
    }

    /// Loads the record files under `dir`; missing files count as empty.
    /// The loaded store persists back to the same directory.
    pub fn open(dir: impl AsRef<Path>, mut config: StoreConfig) -> Result<Self, MarketError> {
        let dir = dir.as_ref();
        let state = persist::load(dir)?;
        config.persist_dir = Some(dir.to_path_buf());
        Ok(Store::from_state(state, config))
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    fn read(&self) -> RwLockReadGuard<'_, MarketState> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn mutate<T>(
        &self,
        op: impl FnOnce(&mut MarketState) -> Result<T, MarketError>,
    ) -> Result<T, MarketError> {
        let mut guard = self.state.write().unwrap_or_else(|e| e.into_inner());
        let mut next = guard.clone();
        let out = op(&mut next)?;
        if self.config.snapshot_on_write {
            if let Some(dir) = &self.config.persist_dir {
                persist::save(dir, &next)?;
            }
        }
        *guard = next;
        Ok(out)
    }

    pub fn snapshot(&self) -> MarketState {
        self.read().clone()
    }

    pub fn digest(&self) -> String {
        self.read().digest()
    }

    /// Writes the current state to `persist_dir` (or `dir` when given).
    pub fn flush_to(&self, dir: Option<&Path>) -> Result<(), MarketError> {
        let target = dir
            .map(Path::to_path_buf)
            .or_else(|| self.config.persist_dir.clone())
            .ok_or_else(|| MarketError::Unavailable("no persistence directory configured".into()))?;
        persist::save(&target, &self.read())
    }

    pub fn create_listing(&self, new: NewListing, now: Timestamp) -> Result<Listing, MarketError> {
        let period = self.config.renewal_period;
        self.mutate(|s| s.create_listing(new, now, period))
    }

    pub fn update_listing(&self, id: &str, patch: &ListingPatch) -> Result<Listing, MarketError> {
        if patch.is_empty() {
            return self.get_listing(id);
        }
        self.mutate(|s| s.update_listing(id, patch))
    }

    pub fn renew_listing(&self, id: &str, now: Timestamp) -> Result<Listing, MarketError> {
        let period = self.config.renewal_period;
        self.mutate(|s| s.renew_listing(id, now, period))
    }

    pub fn get_listing(&self, id: &str) -> Result<Listing, MarketError> {
        self.read().listing(id).cloned()
    }

    pub fn search_listings(&self, query: &SearchQuery) -> Result<Vec<Listing>, MarketError> {
        query.validate()?;
        Ok(search::run(self.read().listings.values(), query))
    }

    /// All listings of `seller_id`, newest first.
    pub fn list_seller_listings(&self, seller_id: &str) -> Vec<Listing> {
        let state = self.read();
        let mut out: Vec<Listing> = state
            .listings
            .values()
            .filter(|l| l.seller_id == seller_id)
            .cloned()
            .collect();
        out.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| a.id.cmp(&b.id)));
        out
    }

    pub fn get_thread(&self, id: &str) -> Result<MessageThread, MarketError> {
        self.read()
            .threads
            .get(id)
            .cloned()
            .ok_or_else(|| MarketError::not_found("thread", id))
    }

    pub fn threads_for_listing(&self, listing_id: &str) -> Vec<MessageThread> {
        self.read().threads_for_listing(listing_id).cloned().collect()
    }

    /// Threads on `listing_id` awaiting a seller reply, most recent first.
    pub fn list_unread_threads(&self, listing_id: &str) -> Result<Vec<MessageThread>, MarketError> {
        let state = self.read();
        state.listing(listing_id)?;
        let mut out: Vec<MessageThread> = state
            .threads_for_listing(listing_id)
            .filter(|t| t.unread_for_seller())
            .cloned()
            .collect();
        out.sort_by(|a, b| {
            b.last_sent_at()
                .cmp(&a.last_sent_at())
                .then_with(|| a.id.cmp(&b.id))
        });
        Ok(out)
    }

    pub fn send_message(
        &self,
        thread_id: &str,
        sender_id: &str,
        body: &str,
        now: Timestamp,
    ) -> Result<Message, MarketError> {
        self.mutate(|s| s.append_message(thread_id, sender_id, body, now))
    }

    /// A buyer writes about a listing, opening the thread on first contact.
    /// Returns the thread id and the stored message.
    pub fn message_listing(
        &self,
        listing_id: &str,
        buyer_id: &str,
        body: &str,
        now: Timestamp,
    ) -> Result<(String, Message), MarketError> {
        self.mutate(|s| s.message_listing(listing_id, buyer_id, body, now))
    }

    /// Sends `body` as the seller on every unread thread of the listing.
    /// Either every thread gets the reply or none does.
    pub fn bulk_reply(&self, listing_id: &str, body: &str, now: Timestamp) -> Result<usize, MarketError> {
        self.mutate(|s| s.bulk_reply(listing_id, body, now))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marketplace::{Category, Condition};
    use chrono::TimeZone;

    fn t0() -> Timestamp {
        chrono::Utc.with_ymd_and_hms(2025, 3, 1, 12, 0, 0).unwrap()
    }

    fn quest() -> NewListing {
        NewListing {
            seller_id: "s1".into(),
            title: "Meta Quest 2".into(),
            description: "VR headset, barely used".into(),
            price: 250.0,
            category: Category::Electronics,
            condition: Condition::UsedLikeNew,
            location: "Austin".into(),
            image_refs: vec![],
        }
    }

    #[test]
    fn create_sets_lifecycle_fields() {
        let store = Store::in_memory();
        let l = store.create_listing(quest(), t0()).unwrap();
        assert_eq!(l.status, ListingStatus::Active);
        assert_eq!(l.created_at, l.renewed_at);
        assert_eq!(l.expires_at - l.created_at, Duration::days(7));
    }

    #[test]
    fn negative_price_and_empty_title_are_rejected() {
        let store = Store::in_memory();
        let mut bad = quest();
        bad.price = -5.0;
        assert!(matches!(store.create_listing(bad, t0()), Err(MarketError::Validation(_))));
        let mut untitled = quest();
        untitled.title = "  ".into();
        assert!(matches!(store.create_listing(untitled, t0()), Err(MarketError::Validation(_))));
        assert!(store.snapshot().listings.is_empty());
    }

    #[test]
    fn availability_patch_reactivates_pending_listing() {
        let store = Store::in_memory();
        let l = store.create_listing(quest(), t0()).unwrap();
        let pending = ListingPatch {
            status: Some(ListingStatus::Pending),
            ..Default::default()
        };
        store.update_listing(&l.id, &pending).unwrap();
        let available = ListingPatch {
            status: ListingStatus::from_availability("available"),
            ..Default::default()
        };
        assert_eq!(store.update_listing(&l.id, &available).unwrap().status, ListingStatus::Active);
    }

    #[test]
    fn empty_patch_is_identity() {
        let store = Store::in_memory();
        let l = store.create_listing(quest(), t0()).unwrap();
        let before = serde_json::to_string(&l).unwrap();
        let after = store.update_listing(&l.id, &ListingPatch::default()).unwrap();
        assert_eq!(serde_json::to_string(&after).unwrap(), before);
    }

    #[test]
    fn price_patch_changes_only_price() {
        let store = Store::in_memory();
        let l = store.create_listing(quest(), t0()).unwrap();
        let patch = ListingPatch {
            price: Some(200.0),
            ..Default::default()
        };
        store.update_listing(&l.id, &patch).unwrap();
        let back = store.get_listing(&l.id).unwrap();
        assert_eq!(back, Listing { price: 200.0, ..l });
    }

    #[test]
    fn update_unknown_listing_is_not_found() {
        let store = Store::in_memory();
        let patch = ListingPatch {
            price: Some(1.0),
            ..Default::default()
        };
        assert!(matches!(
            store.update_listing("L404", &patch),
            Err(MarketError::NotFound { .. })
        ));
    }

    #[test]
    fn renew_expired_and_overwrite_on_second_call() {
        let store = Store::in_memory();
        let l = store.create_listing(quest(), t0()).unwrap();
        let expired = ListingPatch {
            status: Some(ListingStatus::Expired),
            ..Default::default()
        };
        store.update_listing(&l.id, &expired).unwrap();
        let t = t0() + Duration::days(10);
        let r = store.renew_listing(&l.id, t).unwrap();
        assert_eq!(r.renewed_at, t);
        assert_eq!(r.expires_at, t + Duration::days(7));
        assert_eq!(r.status, ListingStatus::Active);
        let later = t + Duration::hours(1);
        let r2 = store.renew_listing(&l.id, later).unwrap();
        assert_eq!(r2.expires_at, later + Duration::days(7));
    }

    #[test]
    fn sold_listing_cannot_be_renewed() {
        let store = Store::in_memory();
        let l = store.create_listing(quest(), t0()).unwrap();
        let sold = ListingPatch {
            status: Some(ListingStatus::Sold),
            ..Default::default()
        };
        store.update_listing(&l.id, &sold).unwrap();
        assert!(matches!(
            store.renew_listing(&l.id, t0()),
            Err(MarketError::InvalidState(_))
        ));
    }

    #[test]
    fn seller_listings_newest_first_and_unknown_seller_empty() {
        let store = Store::in_memory();
        for i in 0..3 {
            let mut n = quest();
            n.title = format!("Item {i}");
            store.create_listing(n, t0() + Duration::minutes(i)).unwrap();
        }
        let titles: Vec<String> = store.list_seller_listings("s1").into_iter().map(|l| l.title).collect();
        assert_eq!(titles, ["Item 2", "Item 1", "Item 0"]);
        assert!(store.list_seller_listings("nobody").is_empty());
    }

    #[test]
    fn buyer_first_contact_opens_thread_and_seller_reply_clears_unread() {
        let store = Store::in_memory();
        let l = store.create_listing(quest(), t0()).unwrap();
        assert_eq!(store.snapshot().threads.len(), 0);
        let (thread_id, _) = store
            .message_listing(&l.id, "b1", "Is this still available?", t0())
            .unwrap();
        let thread = store.get_thread(&thread_id).unwrap();
        assert_eq!(thread.messages.len(), 1);
        assert_eq!(store.snapshot().threads.len(), 1);
        assert_eq!(store.list_unread_threads(&l.id).unwrap().len(), 1);

        // second buyer message reuses the thread
        let (again, _) = store.message_listing(&l.id, "b1", "Hello?", t0()).unwrap();
        assert_eq!(again, thread_id);

        store.send_message(&thread_id, "s1", "Yes", t0()).unwrap();
        assert!(store.list_unread_threads(&l.id).unwrap().is_empty());
        let thread = store.get_thread(&thread_id).unwrap();
        assert!(thread.messages[..2].iter().all(|m| m.read));
    }

    #[test]
    fn outsiders_cannot_post_and_empty_bodies_fail() {
        let store = Store::in_memory();
        let l = store.create_listing(quest(), t0()).unwrap();
        let (thread_id, _) = store.message_listing(&l.id, "b1", "hi", t0()).unwrap();
        assert!(matches!(
            store.send_message(&thread_id, "b2", "me too", t0()),
            Err(MarketError::NotParticipant { .. })
        ));
        assert!(matches!(
            store.send_message(&thread_id, "s1", "  ", t0()),
            Err(MarketError::Validation(_))
        ));
        assert!(matches!(
            store.send_message("T99", "s1", "x", t0()),
            Err(MarketError::NotFound { .. })
        ));
    }

    #[test]
    fn bulk_reply_with_no_unread_leaves_store_unchanged() {
        let store = Store::in_memory();
        let l = store.create_listing(quest(), t0()).unwrap();
        let before = store.digest();
        assert_eq!(store.bulk_reply(&l.id, "Yes, it's still available", t0()).unwrap(), 0);
        assert_eq!(store.digest(), before);
        assert!(matches!(
            store.bulk_reply("L404", "x", t0()),
            Err(MarketError::NotFound { .. })
        ));
        assert!(matches!(
            store.list_unread_threads("L404"),
            Err(MarketError::NotFound { .. })
        ));
    }
}
