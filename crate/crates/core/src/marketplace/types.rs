use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::MarketError;

pub type Timestamp = DateTime<Utc>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Electronics,
    Vehicles,
    Toys,
    Furniture,
    Other,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Electronics,
        Category::Vehicles,
        Category::Toys,
        Category::Furniture,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Electronics => "electronics",
            Category::Vehicles => "vehicles",
            Category::Toys => "toys",
            Category::Furniture => "furniture",
            Category::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    New,
    UsedLikeNew,
    UsedGood,
    UsedFair,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::New,
        Condition::UsedLikeNew,
        Condition::UsedGood,
        Condition::UsedFair,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::New => "new",
            Condition::UsedLikeNew => "used_like_new",
            Condition::UsedGood => "used_good",
            Condition::UsedFair => "used_fair",
        }
    }

    /// Phrase used in natural-language text ("used - good").
    pub fn phrase(self) -> &'static str {
        match self {
            Condition::New => "new",
            Condition::UsedLikeNew => "used - like new",
            Condition::UsedGood => "used - good",
            Condition::UsedFair => "used - fair",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ListingStatus {
    Active,
    Pending,
    Sold,
    Expired,
}

impl ListingStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ListingStatus::Active => "active",
            ListingStatus::Pending => "pending",
            ListingStatus::Sold => "sold",
            ListingStatus::Expired => "expired",
        }
    }

    /// Maps a conversational availability word onto a status.
    /// "available" means active.
    pub fn from_availability(word: &str) -> Option<ListingStatus> {
        match word.trim().to_ascii_lowercase().as_str() {
            "available" | "active" => Some(ListingStatus::Active),
            "pending" => Some(ListingStatus::Pending),
            "sold" => Some(ListingStatus::Sold),
            "expired" => Some(ListingStatus::Expired),
            _ => None,
        }
    }
}

macro_rules! display_and_parse {
    ($ty:ty, $what:literal, [$($variant:expr),+]) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = MarketError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let s = s.trim();
                [$($variant),+]
                    .into_iter()
                    .find(|v: &$ty| v.as_str().eq_ignore_ascii_case(s))
                    .ok_or_else(|| MarketError::Validation(format!("unknown {} {s:?}", $what)))
            }
        }
    };
}

display_and_parse!(
    Category,
    "category",
    [
        Category::Electronics,
        Category::Vehicles,
        Category::Toys,
        Category::Furniture,
        Category::Other
    ]
);
display_and_parse!(
    Condition,
    "condition",
    [
        Condition::New,
        Condition::UsedLikeNew,
        Condition::UsedGood,
        Condition::UsedFair
    ]
);
display_and_parse!(
    ListingStatus,
    "status",
    [
        ListingStatus::Active,
        ListingStatus::Pending,
        ListingStatus::Sold,
        ListingStatus::Expired
    ]
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Listing {
    pub id: String,
    pub seller_id: String,
    pub title: String,
    pub description: String,
    pub price: f64,
    pub category: Category,
    pub condition: Condition,
    pub location: String,
    pub status: ListingStatus,
    pub created_at: Timestamp,
    pub renewed_at: Timestamp,
    pub expires_at: Timestamp,
    #[serde(default)]
    pub image_refs: Vec<String>,
}

/// Seller-supplied fields for a new listing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewListing {
    pub seller_id: String,
    pub title: String,
    pub description: String,
    pub price: f64,
    pub category: Category,
    pub condition: Condition,
    pub location: String,
    #[serde(default)]
    pub image_refs: Vec<String>,
}

/// Partial update; `None` fields are left untouched.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ListingPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<ListingStatus>,
}

impl ListingPatch {
    pub fn is_empty(&self) -> bool {
        self == &ListingPatch::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: String,
    pub thread_id: String,
    pub sender_id: String,
    pub body: String,
    pub sent_at: Timestamp,
    pub read: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageThread {
    pub id: String,
    pub listing_id: String,
    pub buyer_id: String,
    pub seller_id: String,
    #[serde(default)]
    pub messages: Vec<Message>,
}

impl MessageThread {
    /// True iff the last message came from the buyer and is still unread.
    pub fn unread_for_seller(&self) -> bool {
        self.messages
            .last()
            .is_some_and(|m| m.sender_id == self.buyer_id && !m.read)
    }

    pub fn last_sent_at(&self) -> Option<Timestamp> {
        self.messages.last().map(|m| m.sent_at)
    }

    pub fn is_participant(&self, user_id: &str) -> bool {
        user_id == self.buyer_id || user_id == self.seller_id
    }
}

fn default_limit() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchQuery {
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_price: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_price: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(default = "default_limit")]
    pub limit: usize,
}

impl Default for SearchQuery {
    fn default() -> Self {
        SearchQuery {
            text: String::new(),
            min_price: None,
            max_price: None,
            condition: None,
            location: None,
            category: None,
            limit: default_limit(),
        }
    }
}

impl SearchQuery {
    pub fn text(text: impl Into<String>) -> Self {
        SearchQuery {
            text: text.into(),
            ..SearchQuery::default()
        }
    }

    fn has_filter(&self) -> bool {
        self.min_price.is_some()
            || self.max_price.is_some()
            || self.condition.is_some()
            || self.category.is_some()
            || self.location.as_deref().is_some_and(|l| !l.trim().is_empty())
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        for (name, bound) in [("min_price", self.min_price), ("max_price", self.max_price)] {
            if let Some(v) = bound {
                if !v.is_finite() || v < 0.0 {
                    return Err(MarketError::Validation(format!(
                        "{name} must be a non-negative number"
                    )));
                }
            }
        }
        if let (Some(lo), Some(hi)) = (self.min_price, self.max_price) {
            if lo > hi {
                return Err(MarketError::Validation(
                    "min_price must not exceed max_price".into(),
                ));
            }
        }
        if self.limit == 0 {
            return Err(MarketError::Validation("limit must be positive".into()));
        }
        if crate::text::tokens(&self.text).is_empty() && !self.has_filter() {
            return Err(MarketError::Validation(
                "query needs search text or at least one filter".into(),
            ));
        }
        Ok(())
    }
}
