use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use chrono::{Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::task::{TaskKind, TaskParameters, TaskSpec};
use super::EvalError;
use crate::llm::{ChatBackend, ChatMessage, ChatRequest};
use crate::marketplace::{
    Category, Condition, Listing, MarketState, NewListing, SearchQuery, Store, StoreConfig, Timestamp,
};
use crate::text;

pub const DEFAULT_SELLER: &str = "seller-1";
pub const SEEDED_UNREAD: usize = 5;
pub const BULK_REPLY_BODY: &str = "Yes, it's still available";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const GENERATION_ATTEMPTS: u32 = 3;

/// Categories the generated listings are spread over.
pub const DATASET_CATEGORIES: [Category; 4] = [
    Category::Electronics,
    Category::Vehicles,
    Category::Toys,
    Category::Furniture,
];

const LOCATIONS: [&str; 8] = [
    "Seattle", "Portland", "Austin", "Denver", "Boston", "Chicago", "Phoenix", "Atlanta",
];

const QUALIFIERS: [&str; 16] = [
    "Vintage", "Compact", "Deluxe", "Classic", "Refurbished", "Portable", "Premium", "Sturdy",
    "Modern", "Rustic", "Lightweight", "Oversized", "Handmade", "Wireless", "Restored", "Folding",
];

fn items(category: Category) -> &'static [&'static str] {
    match category {
        Category::Electronics => &[
            "Meta Quest 2", "Laptop", "Bluetooth Speaker", "Tablet", "Camera", "Monitor",
            "Game Console", "Headphones", "Smartwatch", "Projector",
        ],
        Category::Vehicles => &[
            "Mountain Bike", "Road Bike", "Scooter", "Kayak", "Motorcycle", "Sedan",
            "Pickup Truck", "Trailer", "Moped", "Electric Bike",
        ],
        Category::Toys => &[
            "Lego Set", "Dollhouse", "Train Set", "Puzzle", "Action Figure", "Board Game",
            "Rocking Horse", "Teddy Bear", "Race Track", "Play Kitchen",
        ],
        Category::Furniture | Category::Other => &[
            "Dresser", "Sofa", "Bookshelf", "Dining Table", "Office Chair", "Nightstand",
            "Coffee Table", "Wardrobe", "Bar Stool", "Bed Frame",
        ],
    }
}

fn price_range(category: Category) -> (u32, u32) {
    match category {
        Category::Electronics => (4, 120),
        Category::Vehicles => (10, 900),
        Category::Toys => (1, 30),
        Category::Furniture | Category::Other => (3, 80),
    }
}

const DESCRIPTION_OPENERS: [&str; 4] = [
    "Selling my",
    "Moving sale:",
    "Barely used",
    "Up for grabs,",
];

const DESCRIPTION_CLOSERS: [&str; 4] = [
    "Pickup only, cash or app payment.",
    "Smoke-free home. Can meet halfway.",
    "Comes with everything shown in the photos.",
    "First come first served.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetMode {
    Template,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n: usize,
    pub seed: u64,
    pub mode: DatasetMode,
    /// Tasks generated for each of search, renew and bulk reply.
    pub tasks_per_kind: usize,
}

impl DatasetConfig {
    pub fn template(n: usize, seed: u64) -> Self {
        DatasetConfig {
            n,
            seed,
            mode: DatasetMode::Template,
            tasks_per_kind: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub mode: DatasetMode,
    pub seed: u64,
    pub n: usize,
    pub seller_id: String,
    pub base_time: Timestamp,
    pub listing_ids: Vec<String>,
    pub categories: BTreeMap<String, Category>,
    pub tasks: Vec<TaskSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub state: MarketState,
    pub manifest: Manifest,
}

pub fn base_time() -> Timestamp {
    Utc.with_ymd_and_hms(2025, 1, 1, 9, 0, 0).unwrap()
}

/// Eval runs start a day after the dataset's base time.
pub fn eval_start(manifest: &Manifest) -> Timestamp {
    manifest.base_time + Duration::days(1)
}

pub fn generate_dataset(
    config: &DatasetConfig,
    backend: Option<&dyn ChatBackend>,
) -> Result<Dataset, EvalError> {
    if config.n == 0 {
        return Err(EvalError::InvalidConfig("n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let drafts = match config.mode {
        DatasetMode::Template => template_drafts(config.n, &mut rng),
        DatasetMode::Model => {
            let backend = backend.ok_or_else(|| {
                EvalError::InvalidConfig("model mode needs a chat backend".into())
            })?;
            model_drafts(config.n, backend)?
        }
    };
    build(config, drafts, &mut rng)
}

fn template_drafts(n: usize, rng: &mut ChaCha8Rng) -> Vec<NewListing> {
    let mut taken: Vec<BTreeSet<String>> = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let category = DATASET_CATEGORIES[i % DATASET_CATEGORIES.len()];
        // No title's token set may contain another's, so an exact title
        // always singles out its own listing.
        let (item, title) = loop {
            let item = *items(category).choose(rng).unwrap();
            let qualifier = *QUALIFIERS.choose(rng).unwrap();
            let title = format!("{qualifier} {item}");
            let set = text::token_set(&title);
            if !taken.iter().any(|t| t.is_subset(&set) || set.is_subset(t)) {
                taken.push(set);
                break (item, title);
            }
        };
        let condition = *Condition::ALL.choose(rng).unwrap();
        let (lo, hi) = price_range(category);
        let price = f64::from(rng.gen_range(lo..=hi) * 5);
        let location = LOCATIONS.choose(rng).unwrap().to_string();
        let description = format!(
            "{} {}. Condition is {}. {}",
            DESCRIPTION_OPENERS.choose(rng).unwrap(),
            item.to_lowercase(),
            condition.phrase(),
            DESCRIPTION_CLOSERS.choose(rng).unwrap(),
        );
        out.push(NewListing {
            seller_id: DEFAULT_SELLER.to_string(),
            title,
            description,
            price,
            category,
            condition,
            location,
            image_refs: Vec::new(),
        });
    }
    out
}

fn generation_request(n: usize) -> ChatRequest {
    let categories: Vec<&str> = DATASET_CATEGORIES.iter().map(|c| c.as_str()).collect();
    let prompt = format!(
        "Generate {n} diverse second-hand marketplace listings as a JSON array. Each element is an object with keys \
         title, description, price (number), category (one of {}), condition (one of new, used_like_new, used_good, used_fair) \
         and location (a city name). Use every category at least once when there are enough listings. Reply with the JSON array only.",
        categories.join(", ")
    );
    ChatRequest::new(
        vec![
            ChatMessage::system("You write realistic test data for a second-hand marketplace."),
            ChatMessage::user(prompt),
        ],
        1.0,
    )
}

#[derive(Deserialize)]
struct DraftRecord {
    title: String,
    description: String,
    price: f64,
    category: Category,
    condition: Condition,
    location: String,
}

fn parse_drafts(raw: &str, n: usize) -> Result<Vec<NewListing>, String> {
    let start = raw.find('[').ok_or("no JSON array in output")?;
    let end = raw.rfind(']').ok_or("no JSON array in output")?;
    let values: Vec<Value> = serde_json::from_str(&raw[start..=end]).map_err(|e| e.to_string())?;
    if values.len() != n {
        return Err(format!("expected {n} listings, got {}", values.len()));
    }
    let mut out = Vec::with_capacity(n);
    for (i, v) in values.into_iter().enumerate() {
        let r: DraftRecord = serde_json::from_value(v).map_err(|e| format!("listing {i}: {e}"))?;
        if r.title.trim().is_empty() || r.description.trim().is_empty() || r.location.trim().is_empty() {
            return Err(format!("listing {i}: empty text field"));
        }
        if !r.price.is_finite() || r.price <= 0.0 {
            return Err(format!("listing {i}: price must be positive"));
        }
        if !DATASET_CATEGORIES.contains(&r.category) {
            return Err(format!("listing {i}: category {} not allowed", r.category));
        }
        out.push(NewListing {
            seller_id: DEFAULT_SELLER.to_string(),
            title: r.title,
            description: r.description,
            price: r.price,
            category: r.category,
            condition: r.condition,
            location: r.location,
            image_refs: Vec::new(),
        });
    }
    let wanted = n.min(DATASET_CATEGORIES.len());
    let present: BTreeSet<Category> = out.iter().map(|l| l.category).collect();
    if present.len() < wanted {
        return Err(format!("only {} categories covered", present.len()));
    }
    Ok(out)
}

fn model_drafts(n: usize, backend: &dyn ChatBackend) -> Result<Vec<NewListing>, EvalError> {
    let request = generation_request(n);
    let mut last = String::new();
    for attempt in 1..=GENERATION_ATTEMPTS {
        let raw = backend.complete(&request)?.content;
        match parse_drafts(&raw, n) {
            Ok(drafts) => return Ok(drafts),
            Err(reason) => {
                tracing::warn!(attempt, %reason, "generated dataset rejected");
                last = reason;
            }
        }
    }
    Err(EvalError::GenerationInvalid {
        attempts: GENERATION_ATTEMPTS,
        reason: last,
    })
}

fn build(config: &DatasetConfig, drafts: Vec<NewListing>, rng: &mut ChaCha8Rng) -> Result<Dataset, EvalError> {
    let base = base_time();
    let store = Store::new(StoreConfig {
        snapshot_on_write: false,
        ..StoreConfig::default()
    });
    let n = drafts.len();
    let mut listings: Vec<Listing> = Vec::with_capacity(n);
    for (i, draft) in drafts.into_iter().enumerate() {
        // oldest first, one hour apart, the last one created at `base`
        let created = base - Duration::hours((n - 1 - i) as i64);
        listings.push(store.create_listing(draft, created)?);
    }

    let k = config.tasks_per_kind;
    let mut tasks = Vec::with_capacity(3 * k);
    let pick = |j: usize, offset: usize| &listings[(3 * j + offset) % n];
    for j in 0..k {
        let target = pick(j, 0);
        let max_price = (target.price / 50.0).ceil() * 50.0;
        let query = SearchQuery {
            text: target.title.clone(),
            max_price: Some(max_price.max(target.price)),
            condition: Some(target.condition),
            location: Some(target.location.clone()),
            ..SearchQuery::default()
        };
        let expected_ids = store.search_listings(&query)?.into_iter().map(|l| l.id).collect();
        let utterance = format!(
            "I'm looking for a {} in {} condition for at most ${} in {}. Can you find one for me?",
            target.title,
            target.condition.phrase(),
            query.max_price.unwrap_or_default(),
            target.location
        );
        tasks.push(TaskSpec::new(
            format!("search-{}", j + 1),
            TaskKind::InventorySearch,
            Some(target.id.clone()),
            utterance,
            TaskParameters::InventorySearch { query, expected_ids },
        ));
    }
    for j in 0..k {
        let target = pick(j, 1);
        tasks.push(TaskSpec::new(
            format!("renew-{}", j + 1),
            TaskKind::RenewListing,
            Some(target.id.clone()),
            format!("Please renew my {} listing", target.title),
            TaskParameters::RenewListing {
                phrase: target.title.clone(),
            },
        ));
    }
    let mut buyer = 0usize;
    let mut next_buyer = || {
        buyer += 1;
        format!("buyer-{buyer}")
    };
    let mut bulk_targets = BTreeSet::new();
    for j in 0..k {
        let target = pick(j, 2);
        if bulk_targets.insert(target.id.clone()) {
            for m in 0..SEEDED_UNREAD {
                let at = base + Duration::minutes((m + 1) as i64);
                store.message_listing(&target.id, &next_buyer(), inquiry(rng), at)?;
            }
            // an inquiry the seller already answered
            let at = base + Duration::minutes(10);
            let (thread, _) = store.message_listing(&target.id, &next_buyer(), "Would you take less?", at)?;
            store.send_message(&thread, DEFAULT_SELLER, "Sorry, the price is firm.", at + Duration::minutes(1))?;
        }
        tasks.push(TaskSpec::new(
            format!("bulk-{}", j + 1),
            TaskKind::BulkReply,
            Some(target.id.clone()),
            format!(
                "Reply to all unread messages on my {} listing with '{BULK_REPLY_BODY}'",
                target.title
            ),
            TaskParameters::BulkReply {
                body: BULK_REPLY_BODY.to_string(),
                seeded_unread: SEEDED_UNREAD,
            },
        ));
    }
    // unrelated traffic on another listing that a bulk reply must not touch
    if n > 1 {
        let other = &listings[(3 * k + 4) % n];
        if !bulk_targets.contains(&other.id) {
            store.message_listing(&other.id, &next_buyer(), "Is this still for sale?", base)?;
        }
    }

    let manifest = Manifest {
        mode: config.mode,
        seed: config.seed,
        n,
        seller_id: DEFAULT_SELLER.to_string(),
        base_time: base,
        listing_ids: listings.iter().map(|l| l.id.clone()).collect(),
        categories: listings.iter().map(|l| (l.id.clone(), l.category)).collect(),
        tasks,
    };
    Ok(Dataset {
        state: store.snapshot(),
        manifest,
    })
}

fn inquiry(rng: &mut ChaCha8Rng) -> &'static str {
    const LINES: [&str; 5] = [
        "Hi, is this still available?",
        "Is this available? I can pick up today.",
        "Hello! Still for sale?",
        "Is the item still available?",
        "Hey, is this still up for grabs?",
    ];
    LINES.choose(rng).unwrap()
}

impl Dataset {
    /// Writes the store files and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), EvalError> {
        fs::create_dir_all(dir)?;
        Store::from_state(self.state.clone(), StoreConfig::default()).flush_to(Some(dir))?;
        let manifest = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(dir.join(MANIFEST_FILE), manifest + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset, EvalError> {
        let store = Store::open(
            dir,
            StoreConfig {
                snapshot_on_write: false,
                ..StoreConfig::default()
            },
        )?;
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        Ok(Dataset {
            state: store.snapshot(),
            manifest,
        })
    }

    pub fn tasks_of(&self, kinds: &[TaskKind]) -> Vec<TaskSpec> {
        self.manifest
            .tasks
            .iter()
            .filter(|t| kinds.contains(&t.kind))
            .cloned()
            .collect()
    }
}
