//! The marketplace tool suite: thin, schema-checked adapters over
//! [`Store`](crate::marketplace::Store), plus the knowledge-base lookup.

use std::fmt::Write as _;
use std::sync::Arc;

use serde_json::{json, Value};

use super::knowledge::DEFAULT_TOP_K;
use super::registry::{
    ArgSpec, ArgType, Args, ToolContext, ToolError, ToolHandler, ToolRegistry, ToolResult, ToolSpec,
};
use crate::llm::{ChatMessage, ChatRequest, AGENT_TEMPERATURE};
use crate::marketplace::{
    Category, Condition, Listing, ListingPatch, ListingStatus, MessageThread, NewListing,
    SearchQuery,
};

pub const KNOWLEDGE_LOOKUP: &str = "knowledge_lookup";
pub const DONT_KNOW: &str = "I don't know.";

fn str_arg<'a>(args: &'a Args, name: &str) -> Option<&'a str> {
    args.get(name).and_then(Value::as_str)
}

fn req_str<'a>(args: &'a Args, name: &str) -> Result<&'a str, ToolError> {
    str_arg(args, name).ok_or_else(|| ToolError::Invalid(format!("missing required argument {name}")))
}

fn num_arg(args: &Args, name: &str) -> Option<f64> {
    args.get(name).and_then(Value::as_f64)
}

fn parse_enum<T: std::str::FromStr<Err = crate::marketplace::MarketError>>(
    args: &Args,
    name: &str,
) -> Result<Option<T>, ToolError> {
    str_arg(args, name)
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .transpose()
        .map_err(ToolError::from)
}

fn parse_status(args: &Args, name: &str) -> Result<Option<ListingStatus>, ToolError> {
    match str_arg(args, name) {
        None => Ok(None),
        Some(word) => ListingStatus::from_availability(word)
            .map(Some)
            .ok_or_else(|| ToolError::Invalid(format!("unknown {name} {word:?}"))),
    }
}

fn money(v: f64) -> String {
    format!("${v:.2}")
}

fn card(l: &Listing) -> Value {
    json!({
        "id": l.id,
        "title": l.title,
        "price": l.price,
        "category": l.category,
        "condition": l.condition,
        "location": l.location,
        "status": l.status,
        "expires_at": l.expires_at,
    })
}

fn listing_lines(listings: &[Listing]) -> String {
    let mut out = String::new();
    for (i, l) in listings.iter().enumerate() {
        let _ = write!(
            out,
            "\n{}. {} | {} | {} | {} | {} | {}",
            i + 1,
            l.id,
            l.title,
            money(l.price),
            l.condition,
            l.location,
            l.status
        );
    }
    out
}

/// The acting user must own the listing.
fn owned_listing(ctx: &ToolContext<'_>, id: &str) -> Result<Listing, ToolError> {
    let listing = ctx.store.get_listing(id)?;
    if listing.seller_id != ctx.user_id {
        return Err(ToolError::Invalid(format!("listing {id} does not belong to you")));
    }
    Ok(listing)
}

fn handler<F>(f: F) -> ToolHandler
where
    F: Fn(&ToolContext<'_>, &Args) -> Result<ToolResult, ToolError> + Send + Sync + 'static,
{
    Arc::new(f)
}

fn spec(name: &str, description: &str, args: Vec<ArgSpec>, mutating: bool, owned: bool) -> ToolSpec {
    ToolSpec {
        name: name.into(),
        description: description.into(),
        args,
        mutating,
        owned_listing_arg: owned,
    }
}

fn listing_id_arg() -> ArgSpec {
    ArgSpec::required("listing_id", ArgType::String, "id of one of the user's listings")
}

fn create_listing() -> (ToolSpec, ToolHandler) {
    let s = spec(
        "create_listing",
        "Publish a new listing for the user. category is one of electronics, vehicles, toys, furniture, other; condition is one of new, used_like_new, used_good, used_fair.",
        vec![
            ArgSpec::required("title", ArgType::String, "listing title"),
            ArgSpec::required("description", ArgType::String, "item description"),
            ArgSpec::required("price", ArgType::Number, "asking price"),
            ArgSpec::required("category", ArgType::String, "category"),
            ArgSpec::required("condition", ArgType::String, "item condition"),
            ArgSpec::required("location", ArgType::String, "pickup location"),
            ArgSpec::optional("image_refs", ArgType::StringList, "uploaded image references"),
        ],
        true,
        false,
    );
    let h = handler(|ctx, args| {
        let new = NewListing {
            seller_id: ctx.user_id.to_string(),
            title: req_str(args, "title")?.to_string(),
            description: req_str(args, "description")?.to_string(),
            price: num_arg(args, "price").unwrap_or(-1.0),
            category: parse_enum::<Category>(args, "category")?.unwrap_or(Category::Other),
            condition: parse_enum::<Condition>(args, "condition")?.unwrap_or(Condition::UsedGood),
            location: req_str(args, "location")?.to_string(),
            image_refs: args
                .get("image_refs")
                .and_then(Value::as_array)
                .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
                .unwrap_or_default(),
        };
        let l = ctx.store.create_listing(new, ctx.now)?;
        Ok(ToolResult::success(
            format!(
                "Created listing {} \"{}\" at {}, active until {}.",
                l.id,
                l.title,
                money(l.price),
                l.expires_at.to_rfc3339()
            ),
            Some(json!({ "listing": card(&l) })),
        ))
    });
    (s, h)
}

fn update_listing() -> (ToolSpec, ToolHandler) {
    let s = spec(
        "update_listing",
        "Change fields of one of the user's listings. Only the fields given are changed. status is one of available, pending, sold.",
        vec![
            listing_id_arg(),
            ArgSpec::optional("title", ArgType::String, "new title"),
            ArgSpec::optional("description", ArgType::String, "new description"),
            ArgSpec::optional("price", ArgType::Number, "new price"),
            ArgSpec::optional("condition", ArgType::String, "new condition"),
            ArgSpec::optional("location", ArgType::String, "new location"),
            ArgSpec::optional("status", ArgType::String, "new status"),
        ],
        true,
        true,
    );
    let h = handler(|ctx, args| {
        let id = req_str(args, "listing_id")?;
        owned_listing(ctx, id)?;
        let patch = ListingPatch {
            title: str_arg(args, "title").map(String::from),
            description: str_arg(args, "description").map(String::from),
            price: num_arg(args, "price"),
            condition: parse_enum::<Condition>(args, "condition")?,
            location: str_arg(args, "location").map(String::from),
            status: parse_status(args, "status")?,
        };
        let changed: Vec<String> = serde_json::to_value(&patch)
            .ok()
            .and_then(|v| v.as_object().cloned())
            .map(|m| m.iter().map(|(k, v)| format!("{k}={v}")).collect())
            .unwrap_or_default();
        let l = ctx.store.update_listing(id, &patch)?;
        let summary = if changed.is_empty() {
            "no changes".to_string()
        } else {
            changed.join(", ")
        };
        Ok(ToolResult::success(
            format!("Updated listing {}: {summary}.", l.id),
            Some(json!({ "listing": card(&l) })),
        ))
    });
    (s, h)
}

fn renew_listing() -> (ToolSpec, ToolHandler) {
    let s = spec(
        "renew_listing",
        "Renew one of the user's listings so it is active and more visible again.",
        vec![listing_id_arg()],
        true,
        true,
    );
    let h = handler(|ctx, args| {
        let id = req_str(args, "listing_id")?;
        owned_listing(ctx, id)?;
        let l = ctx.store.renew_listing(id, ctx.now)?;
        Ok(ToolResult::success(
            format!("Listing {} renewed until {}.", l.id, l.expires_at.to_rfc3339()),
            Some(json!({ "listing": card(&l) })),
        ))
    });
    (s, h)
}

fn set_availability() -> (ToolSpec, ToolHandler) {
    let s = spec(
        "set_availability",
        "Mark one of the user's listings as available, pending or sold.",
        vec![
            listing_id_arg(),
            ArgSpec::required("availability", ArgType::String, "available, pending or sold"),
        ],
        true,
        true,
    );
    let h = handler(|ctx, args| {
        let id = req_str(args, "listing_id")?;
        owned_listing(ctx, id)?;
        let word = req_str(args, "availability")?;
        let status = match ListingStatus::from_availability(word) {
            Some(s @ (ListingStatus::Active | ListingStatus::Pending | ListingStatus::Sold)) => s,
            _ => {
                return Err(ToolError::Invalid(format!(
                    "availability must be available, pending or sold, got {word:?}"
                )))
            }
        };
        let patch = ListingPatch {
            status: Some(status),
            ..ListingPatch::default()
        };
        let l = ctx.store.update_listing(id, &patch)?;
        Ok(ToolResult::success(
            format!("Listing {} marked as {} (status {}).", l.id, word.trim().to_lowercase(), l.status),
            Some(json!({ "listing": card(&l) })),
        ))
    });
    (s, h)
}

fn search_inventory() -> (ToolSpec, ToolHandler) {
    let s = spec(
        "search_inventory",
        "Search active marketplace listings by keywords and optional filters. condition is one of new, used_like_new, used_good, used_fair.",
        vec![
            ArgSpec::optional("text", ArgType::String, "keywords"),
            ArgSpec::optional("min_price", ArgType::Number, "lowest price"),
            ArgSpec::optional("max_price", ArgType::Number, "highest price"),
            ArgSpec::optional("condition", ArgType::String, "item condition"),
            ArgSpec::optional("location", ArgType::String, "location substring"),
            ArgSpec::optional("category", ArgType::String, "category"),
            ArgSpec::optional("limit", ArgType::Number, "maximum results, default 10"),
        ],
        false,
        false,
    );
    let h = handler(|ctx, args| {
        let limit = match num_arg(args, "limit") {
            None => 10,
            Some(n) if n >= 1.0 && n.fract() == 0.0 => n as usize,
            Some(n) => return Err(ToolError::Invalid(format!("limit must be a positive integer, got {n}"))),
        };
        let query = SearchQuery {
            text: str_arg(args, "text").unwrap_or_default().to_string(),
            min_price: num_arg(args, "min_price"),
            max_price: num_arg(args, "max_price"),
            condition: parse_enum::<Condition>(args, "condition")?,
            location: str_arg(args, "location").map(String::from),
            category: parse_enum::<Category>(args, "category")?,
            limit,
        };
        let hits = ctx.store.search_listings(&query)?;
        let text = if hits.is_empty() {
            "No listings matched.".to_string()
        } else {
            format!("Found {} listing(s):{}", hits.len(), listing_lines(&hits))
        };
        let cards: Vec<Value> = hits.iter().map(card).collect();
        Ok(ToolResult::success(text, Some(json!({ "listings": cards }))))
    });
    (s, h)
}

fn list_my_listings() -> (ToolSpec, ToolHandler) {
    let s = spec(
        "list_my_listings",
        "List all of the user's own listings, newest first.",
        vec![],
        false,
        false,
    );
    let h = handler(|ctx, _| {
        let mine = ctx.store.list_seller_listings(ctx.user_id);
        let text = if mine.is_empty() {
            "You have no listings.".to_string()
        } else {
            format!("You have {} listing(s):{}", mine.len(), listing_lines(&mine))
        };
        let cards: Vec<Value> = mine.iter().map(card).collect();
        Ok(ToolResult::success(text, Some(json!({ "listings": cards }))))
    });
    (s, h)
}

fn thread_summary(t: &MessageThread) -> Value {
    json!({
        "thread_id": t.id,
        "buyer_id": t.buyer_id,
        "last_message": t.messages.last().map(|m| m.body.as_str()),
    })
}

fn list_unread_threads() -> (ToolSpec, ToolHandler) {
    let s = spec(
        "list_unread_threads",
        "Fetch the buyer conversations on one of the user's listings that are waiting for a reply.",
        vec![listing_id_arg()],
        false,
        true,
    );
    let h = handler(|ctx, args| {
        let id = req_str(args, "listing_id")?;
        owned_listing(ctx, id)?;
        let threads = ctx.store.list_unread_threads(id)?;
        let mut text = format!("{} unread thread(s) on listing {id}", threads.len());
        if threads.is_empty() {
            text.push('.');
        } else {
            text.push(':');
            for t in &threads {
                let last = t.messages.last().map(|m| m.body.as_str()).unwrap_or_default();
                let _ = write!(text, "\n- {} from {}: \"{}\"", t.id, t.buyer_id, last);
            }
        }
        let summaries: Vec<Value> = threads.iter().map(thread_summary).collect();
        Ok(ToolResult::success(text, Some(json!({ "threads": summaries }))))
    });
    (s, h)
}

fn send_message() -> (ToolSpec, ToolHandler) {
    let s = spec(
        "send_message",
        "Send a message. Give thread_id to reply in an existing conversation, or listing_id to contact the seller of a listing.",
        vec![
            ArgSpec::required("body", ArgType::String, "message text"),
            ArgSpec::optional("thread_id", ArgType::String, "existing conversation"),
            ArgSpec::optional("listing_id", ArgType::String, "listing whose seller to contact"),
        ],
        true,
        false,
    );
    let h = handler(|ctx, args| {
        let body = req_str(args, "body")?;
        let (thread_id, message) = match (str_arg(args, "thread_id"), str_arg(args, "listing_id")) {
            (Some(thread), _) => {
                let m = ctx.store.send_message(thread, ctx.user_id, body, ctx.now)?;
                (thread.to_string(), m)
            }
            (None, Some(listing)) => ctx.store.message_listing(listing, ctx.user_id, body, ctx.now)?,
            (None, None) => {
                return Err(ToolError::Invalid("either thread_id or listing_id is required".into()))
            }
        };
        Ok(ToolResult::success(
            format!("Message {} sent in thread {thread_id}.", message.id),
            Some(json!({ "thread_id": thread_id, "message_id": message.id })),
        ))
    });
    (s, h)
}

fn bulk_reply() -> (ToolSpec, ToolHandler) {
    let s = spec(
        "bulk_reply",
        "Send the same reply to every unread buyer conversation on one of the user's listings.",
        vec![
            listing_id_arg(),
            ArgSpec::required("body", ArgType::String, "reply text"),
        ],
        true,
        true,
    );
    let h = handler(|ctx, args| {
        let id = req_str(args, "listing_id")?;
        owned_listing(ctx, id)?;
        let body = req_str(args, "body")?;
        let count = ctx.store.bulk_reply(id, body, ctx.now)?;
        Ok(ToolResult::success(
            format!("Replied to {count} thread(s) on listing {id} (count={count})."),
            Some(json!({ "listing_id": id, "count": count })),
        ))
    });
    (s, h)
}

pub fn synthesis_request(question: &str, passages: &[(String, u32, String)]) -> ChatRequest {
    let mut context = String::new();
    for (doc, chunk, text) in passages {
        let _ = write!(context, "[{doc}#{chunk}]\n{text}\n\n");
    }
    ChatRequest::new(
        vec![
            ChatMessage::system(format!(
                "You answer questions about marketplace policies and how-to topics. Use ONLY the help-center excerpts provided. If they do not contain the answer, reply exactly \"{DONT_KNOW}\""
            )),
            ChatMessage::user(format!("Help-center excerpts:\n\n{context}Question: {question}")),
        ],
        AGENT_TEMPERATURE,
    )
}

fn knowledge_lookup() -> (ToolSpec, ToolHandler) {
    let s = spec(
        KNOWLEDGE_LOOKUP,
        "Answer a question about marketplace policies or how-to topics from the help center. Use only when the question needs platform-specific knowledge.",
        vec![ArgSpec::required("question", ArgType::String, "the user's question")],
        false,
        false,
    );
    let h = handler(|ctx, args| {
        let question = req_str(args, "question")?;
        let index = ctx
            .knowledge
            .ok_or_else(|| ToolError::Unavailable("knowledge base is not loaded".into()))?;
        let hits: Vec<_> = index
            .retrieve(question, DEFAULT_TOP_K)
            .into_iter()
            .filter(|r| r.score > 0.0)
            .collect();
        let citations: Vec<Value> = hits
            .iter()
            .map(|r| json!({ "doc_id": r.doc_id, "chunk_id": r.chunk_id, "score": r.score }))
            .collect();
        if hits.is_empty() {
            return Ok(ToolResult::success(
                format!("{DONT_KNOW} The help center has nothing on that."),
                Some(json!({ "citations": citations })),
            ));
        }
        let backend = ctx
            .backend
            .ok_or_else(|| ToolError::Unavailable("no chat backend for answer synthesis".into()))?;
        let passages: Vec<(String, u32, String)> = hits
            .iter()
            .map(|r| (r.doc_id.to_string(), r.chunk_id, r.text.to_string()))
            .collect();
        let answer = backend
            .complete(&synthesis_request(question, &passages))
            .map_err(|e| ToolError::Unavailable(e.to_string()))?;
        Ok(ToolResult::success(
            answer.content.trim().to_string(),
            Some(json!({ "citations": citations })),
        ))
    });
    (s, h)
}

/// The nine marketplace tools, in prompt order.
pub fn marketplace_tools() -> Vec<(ToolSpec, ToolHandler)> {
    vec![
        create_listing(),
        update_listing(),
        renew_listing(),
        set_availability(),
        search_inventory(),
        list_my_listings(),
        list_unread_threads(),
        send_message(),
        bulk_reply(),
    ]
}

/// Registry with the marketplace tools, plus `knowledge_lookup` when
/// `with_knowledge` is set.
pub fn builtin_registry(with_knowledge: bool) -> ToolRegistry {
    let mut reg = ToolRegistry::new();
    let extra = with_knowledge.then(knowledge_lookup);
    for (s, h) in marketplace_tools().into_iter().chain(extra) {
        reg.register(s, h).expect("builtin tool names are unique");
    }
    reg
}
