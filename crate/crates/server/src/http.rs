use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bazaar_core::agent::AgentEvent;
use bazaar_core::marketplace::{Category, Condition, SearchQuery};
use chrono::Utc;
use futures::Stream;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::broadcast::error::RecvError;

use crate::error::ApiError;
use crate::hub::{Decision, Hub, TurnSummary};

pub const USER_HEADER: &str = "x-user-id";
pub const KEEPALIVE: Duration = Duration::from_secs(15);

#[derive(Clone)]
pub struct AppState {
    pub hub: Arc<Hub>,
    pub async_turns: bool,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(session_info))
        .route("/v1/sessions/{id}/messages", post(post_message))
        .route("/v1/sessions/{id}/decision", post(post_decision))
        .route("/v1/sessions/{id}/events", get(stream_events))
        .route("/v1/listings", get(search_listings))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(state)
}

fn parse_body(body: &Bytes) -> Result<Value, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(json!({}));
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

fn text_field<'a>(body: &'a Value, key: &str) -> Option<&'a str> {
    body.get(key).and_then(Value::as_str).map(str::trim).filter(|s| !s.is_empty())
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::backend_unavailable(format!("worker failed: {e}")))?
}

async fn create_session(State(app): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let body = parse_body(&body)?;
    let user_id = text_field(&body, "user_id")
        .map(str::to_string)
        .or_else(|| {
            headers
                .get(USER_HEADER)
                .and_then(|v| v.to_str().ok())
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
        })
        .ok_or_else(|| ApiError::bad_request("user_id is required"))?;
    let hub = app.hub.clone();
    let (id, state) = blocking(move || hub.create_session(&user_id, Utc::now())).await?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id, "state": state }))).into_response())
}

async fn session_info(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let (state, steps, pending) = app.hub.state(&id)?;
    Ok(Json(json!({
        "session_id": id,
        "state": state,
        "steps_taken": steps,
        "pending_action": pending,
    })))
}

fn accepted(summary: TurnSummary) -> Response {
    Json(json!({
        "accepted": true,
        "session_id": summary.session_id,
        "state": summary.state,
        "first_seq": summary.first_seq,
        "last_seq": summary.last_seq,
    }))
    .into_response()
}

async fn run_turn<F>(app: AppState, id: String, turn: F) -> Result<Response, ApiError>
where
    F: FnOnce(&Hub) -> Result<TurnSummary, ApiError> + Send + 'static,
{
    let hub = app.hub.clone();
    if app.async_turns {
        hub.state(&id)?;
        tokio::task::spawn_blocking(move || {
            if let Err(e) = turn(&hub) {
                tracing::warn!(session = %id, error = %e, "background turn failed");
            }
        });
        return Ok((StatusCode::ACCEPTED, Json(json!({ "accepted": true }))).into_response());
    }
    Ok(accepted(blocking(move || turn(&hub)).await?))
}

async fn post_message(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let body = parse_body(&body)?;
    let text = text_field(&body, "text")
        .ok_or_else(|| ApiError::bad_request("text is required"))?
        .to_string();
    if app.async_turns {
        app.hub.check_accepts_message(&id)?;
    }
    let session = id.clone();
    run_turn(app, id, move |hub| hub.post_message(&session, &text)).await
}

async fn post_decision(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let body = parse_body(&body)?;
    let decision = match text_field(&body, "decision") {
        Some("confirm") => Decision::Confirm,
        Some("reject") => Decision::Reject(text_field(&body, "reason").map(String::from)),
        _ => return Err(ApiError::bad_request("decision must be \"confirm\" or \"reject\"")),
    };
    if app.async_turns {
        let (state, _, _) = app.hub.state(&id)?;
        if state != bazaar_core::agent::SessionState::AwaitingConfirmation {
            return Err(ApiError::conflict("no action is waiting for a decision"));
        }
    }
    let session = id.clone();
    run_turn(app, id, move |hub| hub.decide(&session, decision)).await
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    from_seq: Option<u64>,
}

fn sse_event(e: &AgentEvent) -> Event {
    let data = serde_json::to_string(e).expect("events serialize");
    let kind = serde_json::to_value(e.kind)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default();
    Event::default().id(e.seq.to_string()).event(kind).data(data)
}

struct Cursor {
    hub: Arc<Hub>,
    session_id: String,
    pending: VecDeque<AgentEvent>,
    live: tokio::sync::broadcast::Receiver<AgentEvent>,
    last: u64,
}

async fn stream_events(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(|last| last + 1);
    let from = q.from_seq.or(resume);
    let sub = app.hub.subscribe(&id, from)?;
    let cursor = Cursor {
        hub: app.hub.clone(),
        session_id: id,
        last: from.map_or(sub.published, |f| f.saturating_sub(1)),
        pending: sub.backlog.into(),
        live: sub.live,
    };
    let stream = futures::stream::unfold(cursor, |mut c| async move {
        loop {
            if let Some(e) = c.pending.pop_front() {
                if e.seq > c.last {
                    c.last = e.seq;
                    return Some((Ok(sse_event(&e)), c));
                }
                continue;
            }
            match c.live.recv().await {
                Ok(e) if e.session_id == c.session_id => c.pending.push_back(e),
                Ok(_) => {}
                Err(RecvError::Lagged(_)) => {
                    let missed = c.hub.published_after(&c.session_id, c.last);
                    c.pending.extend(missed);
                }
                Err(RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::new().interval(KEEPALIVE)))
}

#[derive(Debug, Deserialize)]
struct ListingsQuery {
    query: Option<String>,
    min_price: Option<f64>,
    max_price: Option<f64>,
    condition: Option<String>,
    location: Option<String>,
    category: Option<String>,
    limit: Option<usize>,
}

fn parse_opt<T: std::str::FromStr>(value: Option<&str>, name: &str) -> Result<Option<T>, ApiError> {
    match value.map(str::trim).filter(|v| !v.is_empty()) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| ApiError::bad_request(format!("invalid {name} {v:?}"))),
    }
}

async fn search_listings(
    State(app): State<AppState>,
    Query(q): Query<ListingsQuery>,
) -> Result<Json<Value>, ApiError> {
    let query = SearchQuery {
        text: q.query.unwrap_or_default(),
        min_price: q.min_price,
        max_price: q.max_price,
        condition: parse_opt::<Condition>(q.condition.as_deref(), "condition")?,
        location: q.location,
        category: parse_opt::<Category>(q.category.as_deref(), "category")?,
        limit: q.limit.unwrap_or(10),
    };
    let listings = app.hub.agent().store().search_listings(&query)?;
    Ok(Json(json!({ "listings": listings })))
}
