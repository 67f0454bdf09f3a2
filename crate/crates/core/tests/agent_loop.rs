use std::sync::{Arc, Mutex};

use bazaar_core::agent::{Agent, AgentConfig, AgentError, ConfirmPolicy, EventKind, Session, SessionState, DEFAULT_PERSONA};
use bazaar_core::llm::{ChatBackend, ChatRequest, ChatResponse, LlmError, Role, ScriptRule, ScriptedBackend};
use bazaar_core::marketplace::{Category, Condition, NewListing, Store, Timestamp};
use bazaar_core::tools::{builtin_registry, KnowledgeIndex, TermFrequencyEmbedder};
use chrono::{Duration, TimeZone, Utc};

fn t0() -> Timestamp {
    Utc.with_ymd_and_hms(2025, 4, 1, 10, 0, 0).unwrap()
}

/// Wraps a backend and keeps every request it saw.
struct Recording<B> {
    inner: B,
    seen: Mutex<Vec<ChatRequest>>,
}

impl<B: ChatBackend> ChatBackend for Recording<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.seen.lock().unwrap().push(request.clone());
        self.inner.complete(request)
    }
}

fn rules(pairs: &[(&str, &str)]) -> ScriptedBackend {
    ScriptedBackend::new(pairs.iter().map(|(p, r)| ScriptRule::new(*p, *r)).collect()).unwrap()
}

struct Fixture {
    store: Arc<Store>,
    backend: Arc<Recording<ScriptedBackend>>,
    agent: Agent,
    session: Session,
}

fn fixture(script: &[(&str, &str)], config: AgentConfig) -> Fixture {
    let store = Arc::new(Store::in_memory());
    for (title, price) in [("Meta Quest 2", 200.0), ("Oak Dresser", 120.0)] {
        store
            .create_listing(
                NewListing {
                    seller_id: "ana".into(),
                    title: title.into(),
                    description: format!("{title} in good shape"),
                    price,
                    category: Category::Electronics,
                    condition: Condition::UsedGood,
                    location: "Seattle".into(),
                    image_refs: vec![],
                },
                t0() - Duration::days(10),
            )
            .unwrap();
    }
    let backend = Arc::new(Recording {
        inner: rules(script),
        seen: Mutex::new(vec![]),
    });
    let agent = Agent::new(store.clone(), Arc::new(builtin_registry(false)), backend.clone(), config);
    let session = agent.start_session("ana", t0()).unwrap();
    Fixture {
        store,
        backend,
        agent,
        session,
    }
}

const RENEW: &str = "Thought: The user means L1.\nAction: renew_listing\nAction Input: {\"listing_id\": \"L1\"}";
const DONE: &str = "Thought: Renewed.\nFinal Answer: Your Meta Quest 2 listing is renewed.";

fn kinds(events: &[bazaar_core::agent::AgentEvent]) -> Vec<EventKind> {
    events.iter().map(|e| e.kind).collect()
}

#[test]
fn renew_waits_for_confirmation() {
    let mut f = fixture(&[("^Observation: Listing L1 renewed", DONE), ("renew", RENEW)], AgentConfig::default());
    let before = f.store.digest();
    let events = f.agent.handle_user_message(&mut f.session, "renew my quest 2", t0()).unwrap();
    assert_eq!(kinds(&events), [EventKind::Thought, EventKind::ProposedAction]);
    assert_eq!(f.session.state, SessionState::AwaitingConfirmation);
    assert_eq!(f.store.digest(), before, "nothing runs before confirmation");
    assert_eq!(events[1].payload["tool_name"], "renew_listing");
    assert_eq!(events[1].payload["status"], "proposed");

    let err = f.agent.handle_user_message(&mut f.session, "hello?", t0()).unwrap_err();
    assert!(matches!(err, AgentError::InvalidState { .. }));

    let later = t0() + Duration::minutes(1);
    let events = f.agent.confirm_action(&mut f.session, later).unwrap();
    assert_eq!(kinds(&events), [EventKind::Thought, EventKind::Observation, EventKind::FinalAnswer]);
    assert_eq!(events[0].payload["phase"], "execute");
    assert_eq!(events[1].payload["ok"], true);
    assert_eq!(f.store.get_listing("L1").unwrap().renewed_at, later);
    assert_eq!(f.session.steps_taken(), 2);
    assert_eq!(f.session.state, SessionState::AwaitingInput);
    assert_eq!(f.session.scratchpad.len(), 1);
    assert_eq!(f.session.dialog.len(), 2);

    // seq numbers are contiguous from the session_started event
    let seqs: Vec<u64> = f.session.events().map(|e| e.seq).collect();
    assert_eq!(seqs, (1..=6).collect::<Vec<_>>());
}

#[test]
fn rejection_leaves_store_untouched() {
    let mut f = fixture(&[("renew", RENEW)], AgentConfig::default());
    let before = f.store.digest();
    f.agent.handle_user_message(&mut f.session, "renew my quest 2", t0()).unwrap();
    let events = f.agent.reject_action(&mut f.session, Some("not now"), t0()).unwrap();
    assert_eq!(kinds(&events), [EventKind::Observation]);
    assert_eq!(f.store.digest(), before);
    assert_eq!(f.session.state, SessionState::AwaitingInput);
    let entry = &f.session.scratchpad.entries()[0];
    assert_eq!(entry.observation, "user rejected: not now");

    assert!(matches!(
        f.agent.confirm_action(&mut f.session, t0()),
        Err(AgentError::InvalidState { .. })
    ));
}

#[test]
fn read_only_tools_run_without_confirmation() {
    let mut f = fixture(
        &[
            ("^Observation: Found", "Thought: Got it.\nFinal Answer: Found your dresser."),
            ("dresser", "Thought: Search.\nAction: search_inventory\nAction Input: {\"text\": \"oak dresser\"}"),
        ],
        AgentConfig::default(),
    );
    let events = f.agent.handle_user_message(&mut f.session, "find an oak dresser", t0()).unwrap();
    assert_eq!(
        kinds(&events),
        [EventKind::Thought, EventKind::AutoExecuted, EventKind::Observation, EventKind::FinalAnswer]
    );
    assert_eq!(f.session.steps_taken(), 1);
    let results = &events[3].payload["results"]["listings"];
    assert_eq!(results[0]["id"], "L2");
}

#[test]
fn confirm_all_policy_gates_reads_too() {
    let config = AgentConfig {
        confirm_policy: ConfirmPolicy::All,
        ..AgentConfig::default()
    };
    let mut f = fixture(&[(".*", "Thought: Look.\nAction: list_my_listings\nAction Input: {}")], config);
    let events = f.agent.handle_user_message(&mut f.session, "what do I sell?", t0()).unwrap();
    assert_eq!(kinds(&events), [EventKind::Thought, EventKind::ProposedAction]);
}

#[test]
fn malformed_output_is_repaired_once() {
    let mut f = fixture(
        &[
            ("^Your last output was malformed", "Thought: Fixed.\nFinal Answer: Hello!"),
            (".*", "Thought: oops\nAction: renew_listing\nAction Input: {broken"),
        ],
        AgentConfig::default(),
    );
    let events = f.agent.handle_user_message(&mut f.session, "hi", t0()).unwrap();
    assert_eq!(kinds(&events), [EventKind::Thought, EventKind::FinalAnswer]);
    let seen = f.backend.seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    let repair = seen[1].messages.last().unwrap();
    assert!(repair.content.contains("malformed_arguments"));
    assert_eq!(seen[1].messages[seen[1].messages.len() - 2].role, Role::Assistant);
}

#[test]
fn second_malformed_output_surfaces_parse_error() {
    let mut f = fixture(&[(".*", "Action: renew_listing")], AgentConfig::default());
    let events = f.agent.handle_user_message(&mut f.session, "hi", t0()).unwrap();
    assert_eq!(kinds(&events), [EventKind::Error]);
    assert_eq!(events[0].payload["kind"], "parse");
    assert_eq!(f.session.state, SessionState::AwaitingInput);
    assert_eq!(f.session.steps_taken(), 0);
}

#[test]
fn unknown_tool_and_foreign_listing_become_observations() {
    let mut f = fixture(
        &[
            ("^Observation: ERROR: unknown tool", "Thought: Try again.\nAction: renew_listing\nAction Input: {\"listing_id\": \"L99\"}"),
            ("^Observation: ERROR: listing L99", "Thought: Give up.\nFinal Answer: I could not find that listing."),
            (".*", "Thought: Teleport.\nAction: teleport\nAction Input: {}"),
        ],
        AgentConfig::default(),
    );
    let events = f.agent.handle_user_message(&mut f.session, "do it", t0()).unwrap();
    let obs: Vec<_> = events.iter().filter(|e| e.kind == EventKind::Observation).collect();
    assert_eq!(obs.len(), 2);
    assert_eq!(obs[0].payload["ok"], false);
    assert_eq!(obs[1].payload["ok"], false);
    assert_eq!(events.last().unwrap().kind, EventKind::FinalAnswer);
    assert_eq!(f.session.state, SessionState::AwaitingInput);
    assert!(f.session.pending_action.is_none());
}

#[test]
fn automatic_steps_are_capped_per_turn() {
    let mut f = fixture(&[(".*", "Thought: Again.\nAction: list_my_listings\nAction Input: {}")], AgentConfig::default());
    let events = f.agent.handle_user_message(&mut f.session, "loop", t0()).unwrap();
    let thoughts = events.iter().filter(|e| e.kind == EventKind::Thought).count();
    assert_eq!(thoughts, 4);
    let last = events.last().unwrap();
    assert_eq!(last.kind, EventKind::Error);
    assert_eq!(last.payload["kind"], "execution_cap");
}

#[test]
fn step_budget_is_never_exceeded() {
    let mut f = fixture(&[(".*", "Thought: Again.\nAction: list_my_listings\nAction Input: {}")], AgentConfig::default());
    f.session.step_budget = Some(5);
    f.agent.handle_user_message(&mut f.session, "loop", t0()).unwrap();
    let events = f.agent.handle_user_message(&mut f.session, "loop", t0()).unwrap();
    assert_eq!(f.session.steps_taken(), 5);
    assert_eq!(events.last().unwrap().payload["kind"], "step_limit");
}

struct Broken;

impl ChatBackend for Broken {
    fn complete(&self, _: &ChatRequest) -> Result<ChatResponse, LlmError> {
        Err(LlmError::Backend("503 from upstream".into()))
    }
}

#[test]
fn backend_failure_returns_error_and_event() {
    let store = Arc::new(Store::in_memory());
    let agent = Agent::new(store, Arc::new(builtin_registry(false)), Arc::new(Broken), AgentConfig::default());
    let mut s = agent.start_session("u", t0()).unwrap();
    let err = agent.handle_user_message(&mut s, "hi", t0()).unwrap_err();
    assert!(matches!(err, AgentError::Backend(_)));
    let last = s.events().last().unwrap();
    assert_eq!(last.kind, EventKind::Error);
    assert_eq!(last.payload["kind"], "backend");
    assert_eq!(s.state, SessionState::AwaitingInput);
}

#[test]
fn prompt_layout() {
    let mut f = fixture(&[("renew", RENEW), ("^Observation", DONE)], AgentConfig::default());
    f.agent.handle_user_message(&mut f.session, "renew my quest 2", t0()).unwrap();
    f.agent.confirm_action(&mut f.session, t0()).unwrap();
    let seen = f.backend.seen.lock().unwrap();
    let first = &seen[0];
    assert_eq!(first.temperature, 0.0);
    assert_eq!(first.messages[0].role, Role::System);
    assert!(first.messages[0].content.starts_with(DEFAULT_PERSONA));
    assert!(first.messages[0].content.contains("renew_listing"));
    assert!(first.messages[0].content.contains("L1"));
    assert_eq!(first.messages.len(), 2, "no scratchpad or history yet");

    // after execution the scratchpad rides along as a second system message
    let second = &seen[1];
    assert_eq!(second.messages[1].role, Role::System);
    assert!(second.messages[1].content.contains("Action: renew_listing"));
    assert_eq!(second.messages[2].content, "renew my quest 2");
    assert!(second.messages.last().unwrap().content.starts_with("Observation: Listing L1 renewed"));

    // pure: the same session state builds the same prompt
    assert_eq!(f.agent.build_prompt(&f.session, Some("x")), f.agent.build_prompt(&f.session, Some("x")));
}

#[test]
fn knowledge_lookup_without_hits_says_so_without_calling_the_model() {
    let kb = KnowledgeIndex::from_sources(
        vec![("refunds".into(), "# Refunds\n\nRefunds are handled between buyer and seller.".into())],
        Box::new(TermFrequencyEmbedder),
    )
    .unwrap();
    let store = Arc::new(Store::in_memory());
    let backend = Arc::new(Recording {
        inner: rules(&[
            ("^Observation", "Thought: Relay.\nFinal Answer: I don't know."),
            (".*", "Thought: Ask the help center.\nAction: knowledge_lookup\nAction Input: {\"question\": \"zebra xylophone\"}"),
        ]),
        seen: Mutex::new(vec![]),
    });
    let agent = Agent::new(store, Arc::new(builtin_registry(true)), backend.clone(), AgentConfig::default())
        .with_knowledge(Arc::new(kb));
    let mut s = agent.start_session("u", t0()).unwrap();
    let events = agent.handle_user_message(&mut s, "zebra xylophone?", t0()).unwrap();
    let obs = events.iter().find(|e| e.kind == EventKind::Observation).unwrap();
    assert!(obs.payload["text"].as_str().unwrap().starts_with("I don't know."));
    // two agent calls, no synthesis call
    assert_eq!(backend.seen.lock().unwrap().len(), 2);
}
