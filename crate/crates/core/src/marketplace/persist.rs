//! Newline-delimited JSON record files, one per entity kind.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::store::MarketState;
use super::types::{Listing, Message, MessageThread};
use super::MarketError;

pub const LISTINGS_FILE: &str = "listings.jsonl";
pub const THREADS_FILE: &str = "threads.jsonl";
pub const MESSAGES_FILE: &str = "messages.jsonl";

#[derive(Serialize, Deserialize)]
struct ThreadRecord {
    id: String,
    listing_id: String,
    buyer_id: String,
    seller_id: String,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> MarketError {
    MarketError::Unavailable(format!("{}: {e}", path.display()))
}

fn write_jsonl<T: Serialize>(dir: &Path, name: &str, records: impl Iterator<Item = T>) -> Result<(), MarketError> {
    let path = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, &r).map_err(|e| io_err(&path, e))?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    file.write_all(&out).map_err(|e| io_err(&tmp, e))?;
    file.sync_all().map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))
}

fn read_jsonl<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<Vec<T>, MarketError> {
    let path = dir.join(name);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(&path, e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| io_err(&path, format!("line {}: {e}", n + 1))))
        .collect()
}

pub fn save(dir: &Path, state: &MarketState) -> Result<(), MarketError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_jsonl(dir, LISTINGS_FILE, state.listings.values())?;
    write_jsonl(
        dir,
        THREADS_FILE,
        state.threads.values().map(|t| ThreadRecord {
            id: t.id.clone(),
            listing_id: t.listing_id.clone(),
            buyer_id: t.buyer_id.clone(),
            seller_id: t.seller_id.clone(),
        }),
    )?;
    write_jsonl(
        dir,
        MESSAGES_FILE,
        state.threads.values().flat_map(|t| t.messages.iter()),
    )
}

pub fn load(dir: &Path) -> Result<MarketState, MarketError> {
    if !dir.is_dir() {
        return Err(MarketError::Unavailable(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let listings: Vec<Listing> = read_jsonl(dir, LISTINGS_FILE)?;
    let records: Vec<ThreadRecord> = read_jsonl(dir, THREADS_FILE)?;
    let messages: Vec<Message> = read_jsonl(dir, MESSAGES_FILE)?;

    let mut threads: BTreeMap<String, MessageThread> = records
        .into_iter()
        .map(|r| {
            (
                r.id.clone(),
                MessageThread {
                    id: r.id,
                    listing_id: r.listing_id,
                    buyer_id: r.buyer_id,
                    seller_id: r.seller_id,
                    messages: Vec::new(),
                },
            )
        })
        .collect();
    for m in messages {
        let thread = threads
            .get_mut(&m.thread_id)
            .ok_or_else(|| io_err(&dir.join(MESSAGES_FILE), format!("message {} has unknown thread {}", m.id, m.thread_id)))?;
        thread.messages.push(m);
    }
    for t in threads.values_mut() {
        t.messages.sort_by_key(|m| m.sent_at);
    }
    Ok(MarketState::from_records(listings, threads.into_values().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marketplace::{Category, Condition, NewListing, Store, StoreConfig};
    use chrono::{TimeZone, Utc};

    #[test]
    fn reload_is_observationally_equal() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path(), StoreConfig::default()).unwrap();
        let now = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
        let l = store
            .create_listing(
                NewListing {
                    seller_id: "s1".into(),
                    title: "Oak table".into(),
                    description: "Solid oak".into(),
                    price: 120.5,
                    category: Category::Furniture,
                    condition: Condition::UsedGood,
                    location: "Denver".into(),
                    image_refs: vec!["img://1".into()],
                },
                now,
            )
            .unwrap();
        store.message_listing(&l.id, "b1", "still there?", now).unwrap();
        assert!(dir.path().join(LISTINGS_FILE).exists());

        let reloaded = Store::open(dir.path(), StoreConfig::default()).unwrap();
        assert_eq!(reloaded.snapshot(), store.snapshot());
        assert_eq!(reloaded.list_unread_threads(&l.id).unwrap(), store.list_unread_threads(&l.id).unwrap());

        // fresh ids continue after the loaded ones
        let (_, m) = reloaded.message_listing(&l.id, "b2", "hi", now).unwrap();
        assert_eq!(m.id, "M2");
    }

    #[test]
    fn snapshot_off_does_not_touch_disk() {
        let dir = tempfile::tempdir().unwrap();
        let config = StoreConfig {
            snapshot_on_write: false,
            ..StoreConfig::default()
        };
        let store = Store::open(dir.path(), config).unwrap();
        let now = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
        store
            .create_listing(
                NewListing {
                    seller_id: "s1".into(),
                    title: "Bike".into(),
                    description: String::new(),
                    price: 0.0,
                    category: Category::Vehicles,
                    condition: Condition::UsedFair,
                    location: "Boston".into(),
                    image_refs: vec![],
                },
                now,
            )
            .unwrap();
        assert!(!dir.path().join(LISTINGS_FILE).exists());
        store.flush_to(None).unwrap();
        assert_eq!(Store::open(dir.path(), StoreConfig::default()).unwrap().snapshot(), store.snapshot());
    }
}
