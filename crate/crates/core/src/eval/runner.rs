use std::sync::Arc;

use chrono::Duration;
use serde_json::{json, Value};

use super::judge::judge_success;
use super::simulator::{SimulatorTurn, UserSimulator};
use super::task::{EvalOutcome, FailureReason, TaskParameters, TaskSpec};
use crate::agent::{Agent, AgentConfig, AgentError, EventKind, SessionState};
use crate::llm::{ChatBackend, LlmError, ScriptRule, ScriptedBackend};
use crate::marketplace::{MarketState, Store, StoreConfig, Timestamp};
use crate::tools::builtin_registry;

pub const MAX_EXCHANGES: u32 = 12;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub seller_id: String,
    pub start: Timestamp,
    pub max_exchanges: u32,
    pub agent: AgentConfig,
}

impl RunOptions {
    pub fn new(seller_id: impl Into<String>, start: Timestamp) -> Self {
        RunOptions {
            seller_id: seller_id.into(),
            start,
            max_exchanges: MAX_EXCHANGES,
            agent: AgentConfig::default(),
        }
    }
}

/// Runs one task against a private copy of `base`.
pub fn run_task(
    task: &TaskSpec,
    base: &MarketState,
    backend: Arc<dyn ChatBackend>,
    simulator: &mut dyn UserSimulator,
    options: &RunOptions,
) -> EvalOutcome {
    let store = Arc::new(Store::from_state(
        base.clone(),
        StoreConfig {
            persist_dir: None,
            snapshot_on_write: false,
            ..StoreConfig::default()
        },
    ));
    let agent = Agent::new(
        store.clone(),
        Arc::new(builtin_registry(false)),
        backend,
        options.agent.clone(),
    );
    let mut outcome = EvalOutcome {
        task_id: task.task_id.clone(),
        kind: task.kind,
        success: false,
        steps_used: 0,
        optimal: false,
        failure_reason: None,
        user_turns: Vec::new(),
        transcript: Vec::new(),
    };
    let mut session = match agent.start_session(&options.seller_id, options.start) {
        Ok(s) => s,
        Err(_) => {
            outcome.failure_reason = Some(FailureReason::AgentError);
            return outcome;
        }
    };
    session.step_budget = Some(task.step_limit);

    let mut failure = None;
    let mut success = false;
    for exchange in 0..options.max_exchanges {
        let now = options.start + Duration::seconds(i64::from(exchange) + 1);
        let events: Vec<_> = session.events().cloned().collect();
        let turn = match simulator.next_turn(task, &events, session.pending_action.as_ref()) {
            Ok(t) => t,
            Err(_) => {
                failure = Some(FailureReason::AgentError);
                break;
            }
        };
        let result = match turn {
            SimulatorTurn::Done => break,
            SimulatorTurn::Say(text) => {
                outcome.user_turns.push(text.clone());
                if session.state == SessionState::AwaitingConfirmation {
                    agent.reject_action(&mut session, Some(&text), now)
                } else {
                    agent.handle_user_message(&mut session, &text, now)
                }
            }
            SimulatorTurn::Confirm => {
                outcome.user_turns.push("confirm".into());
                agent.confirm_action(&mut session, now)
            }
            SimulatorTurn::Reject(reason) => {
                outcome.user_turns.push(format!("reject: {reason}"));
                agent.reject_action(&mut session, Some(&reason), now)
            }
        };
        let new_events = match result {
            Ok(e) => e,
            Err(AgentError::InvalidState { .. }) => continue,
            Err(_) => {
                failure = Some(FailureReason::AgentError);
                break;
            }
        };
        if new_events
            .iter()
            .any(|e| e.kind == EventKind::Error && e.payload["kind"] == "step_limit")
        {
            failure = Some(FailureReason::StepLimitExceeded);
            break;
        }
        if new_events.iter().any(|e| e.kind == EventKind::FinalAnswer) {
            let transcript: Vec<_> = session.events().cloned().collect();
            if judge_success(task, base, &store.snapshot(), &transcript) {
                success = true;
                break;
            }
        }
    }

    outcome.transcript = session.events().cloned().collect();
    if !success && failure.is_none() {
        success = judge_success(task, base, &store.snapshot(), &outcome.transcript);
    }
    outcome.steps_used = session.steps_taken();
    outcome.success = success && outcome.steps_used <= task.step_limit;
    outcome.optimal = outcome.success && outcome.steps_used == task.optimal_steps;
    outcome.failure_reason = if outcome.success {
        None
    } else {
        Some(failure.unwrap_or(FailureReason::JudgeFailed))
    };
    outcome
}

fn action(thought: &str, tool: &str, args: Value) -> String {
    format!("Thought: {thought}\nAction: {tool}\nAction Input: {args}")
}

fn answer(thought: &str, text: &str) -> String {
    format!("Thought: {thought}\nFinal Answer: {text}")
}

/// Rules that drive the agent through the optimal path of `task`.
pub fn scripted_agent_rules(task: &TaskSpec) -> Vec<ScriptRule> {
    let opening = format!("^(As I said: )?{}$", regex::escape(&task.utterance));
    let target = task.target_listing_id.clone().unwrap_or_default();
    match &task.parameters {
        TaskParameters::InventorySearch { query, .. } => {
            let mut args = json!({ "text": query.text });
            if let Some(p) = query.max_price {
                args["max_price"] = json!(p);
            }
            if let Some(c) = query.condition {
                args["condition"] = json!(c);
            }
            if let Some(l) = &query.location {
                args["location"] = json!(l);
            }
            vec![
                ScriptRule::new(
                    "^Observation: Found",
                    answer("The search returned matching listings.", "Here is what I found for you."),
                ),
                ScriptRule::new(
                    "^Observation: No listings",
                    answer("Nothing matched.", "I could not find a matching listing."),
                ),
                ScriptRule::new(
                    opening,
                    action("The user wants to find an item; I will search the inventory.", "search_inventory", args),
                ),
            ]
        }
        TaskParameters::RenewListing { .. } => vec![
            ScriptRule::new(
                r"^Observation: Listing \S+ renewed",
                answer("The listing was renewed.", "Done, your listing has been renewed."),
            ),
            ScriptRule::new(
                opening,
                action(
                    &format!("The user refers to listing {target}; I will renew it."),
                    "renew_listing",
                    json!({ "listing_id": target }),
                ),
            ),
        ],
        TaskParameters::BulkReply { body, .. } => vec![
            ScriptRule::new(
                r"^Observation: Replied to",
                answer("All unread threads got the reply.", "All unread messages have been answered."),
            ),
            ScriptRule::new(
                r"^Observation: \d+ unread",
                action(
                    "I have the unread threads; now I send the reply to all of them.",
                    "bulk_reply",
                    json!({ "listing_id": target, "body": body }),
                ),
            ),
            ScriptRule::new(
                opening,
                action(
                    &format!("The user refers to listing {target}; first I check its unread threads."),
                    "list_unread_threads",
                    json!({ "listing_id": target }),
                ),
            ),
        ],
    }
}

pub fn scripted_agent_backend(task: &TaskSpec) -> Result<ScriptedBackend, LlmError> {
    ScriptedBackend::new(scripted_agent_rules(task))
}

/// A script that reads the seller's listings forever.
pub fn looping_backend() -> ScriptedBackend {
    ScriptedBackend::new(vec![ScriptRule::new(
        "(?s).*",
        action("Let me look at the listings again.", "list_my_listings", json!({})),
    )])
    .expect("static pattern")
}
