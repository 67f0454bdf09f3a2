use std::sync::Arc;
use std::time::Instant;

use bazaar_core::agent::EventKind;
use bazaar_core::eval::{
    compute_report, config_digest, eval_start, generate_dataset, looping_backend, run_suite, run_task, scripted_agent_backend,
    AgentBackend,
    Dataset, DatasetConfig, EvalOutcome, FailureReason, RunOptions, ScriptedSimulator, SimulatorChoice, TaskKind,
};
use bazaar_core::llm::{ChatBackend, ChatRequest, ChatResponse, LlmError, ReplayBackend};
use chrono::{TimeZone, Utc};

fn dataset(n: usize) -> Dataset {
    generate_dataset(&DatasetConfig::template(n, 42), None).unwrap()
}

fn options(d: &Dataset) -> RunOptions {
    RunOptions::new(d.manifest.seller_id.clone(), eval_start(&d.manifest))
}

fn thought_count(o: &EvalOutcome) -> u32 {
    o.transcript.iter().filter(|e| e.kind == EventKind::Thought).count() as u32
}

pub fn canonical_tasks_run_optimally() {
    let started = Instant::now();
    let d = dataset(10);
    let tasks = d.tasks_of(&TaskKind::ALL);
    let outcomes = run_suite(&d, &tasks, &AgentBackend::Scripted, &SimulatorChoice::Scripted, &options(&d)).unwrap();
    assert_eq!(outcomes.len(), 3);
    for o in &outcomes {
        assert!(o.success, "{} failed: {:?}", o.task_id, o.failure_reason);
        assert_eq!(o.steps_used, o.kind.optimal_steps(), "{}", o.task_id);
        assert!(o.optimal);
        assert_eq!(thought_count(o), o.steps_used, "two step counters disagree on {}", o.task_id);
    }
    let report = compute_report(&outcomes, "x", Utc::now()).unwrap();
    assert_eq!(report.overall.success_rate, 1.0);
    assert!(started.elapsed().as_secs_f64() < 5.0);
}

pub fn looping_agent_stops_at_five_steps() {
    let d = dataset(10);
    let task = d.tasks_of(&[TaskKind::RenewListing]).remove(0);
    let outcome = run_task(
        &task,
        &d.state,
        Arc::new(looping_backend()),
        &mut ScriptedSimulator::new(),
        &options(&d),
    );
    assert!(!outcome.success);
    assert_eq!(outcome.failure_reason, Some(FailureReason::StepLimitExceeded));
    assert_eq!(outcome.steps_used, 5);
    assert_eq!(thought_count(&outcome), 5);
}

struct Down;

impl ChatBackend for Down {
    fn complete(&self, _: &ChatRequest) -> Result<ChatResponse, LlmError> {
        Err(LlmError::Backend("connection refused".into()))
    }
}

#[test]
fn backend_failure_is_agent_error() {
    let d = dataset(10);
    let task = d.tasks_of(&[TaskKind::InventorySearch]).remove(0);
    let outcome = run_task(&task, &d.state, Arc::new(Down), &mut ScriptedSimulator::new(), &options(&d));
    assert_eq!(outcome.failure_reason, Some(FailureReason::AgentError));
    assert_eq!(outcome.steps_used, 0);
}

#[test]
fn report_is_independent_of_task_order_and_repeatable() {
    let d = generate_dataset(
        &DatasetConfig {
            tasks_per_kind: 4,
            ..DatasetConfig::template(40, 9)
        },
        None,
    )
    .unwrap();
    let tasks = d.tasks_of(&TaskKind::ALL);
    let opts = options(&d);
    let at = Utc.with_ymd_and_hms(2025, 6, 1, 0, 0, 0).unwrap();
    let digest = config_digest(&d, &tasks, &AgentBackend::Scripted, &SimulatorChoice::Scripted, &opts);

    let forward = run_suite(&d, &tasks, &AgentBackend::Scripted, &SimulatorChoice::Scripted, &opts).unwrap();
    let mut reversed_tasks = tasks.clone();
    reversed_tasks.reverse();
    let mut reversed = run_suite(&d, &reversed_tasks, &AgentBackend::Scripted, &SimulatorChoice::Scripted, &opts).unwrap();
    reversed.reverse();
    assert_eq!(forward, reversed);

    let a = compute_report(&forward, &digest, at).unwrap();
    let again = run_suite(&d, &tasks, &AgentBackend::Scripted, &SimulatorChoice::Scripted, &opts).unwrap();
    let b = compute_report(&again, &digest, at).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.overall.n, 12);
    assert_eq!(a.overall.success_rate, 1.0);
}

#[test]
fn canonical_tasks_run_optimally_test() {
    canonical_tasks_run_optimally();
}

#[test]
fn looping_agent_stops_at_five_steps_test() {
    looping_agent_stops_at_five_steps();
}

#[test]
fn replayed_backend_yields_identical_transcripts() {
    let d = dataset(10);
    let cache = tempfile::tempdir().unwrap();
    for task in d.tasks_of(&TaskKind::ALL) {
        let scripted: Arc<dyn ChatBackend> = Arc::new(scripted_agent_backend(&task).unwrap());
        let direct = run_task(&task, &d.state, scripted.clone(), &mut ScriptedSimulator::new(), &options(&d));
        let recording = Arc::new(ReplayBackend::new(cache.path(), Some(scripted)));
        let recorded = run_task(&task, &d.state, recording, &mut ScriptedSimulator::new(), &options(&d));
        let offline = Arc::new(ReplayBackend::new(cache.path(), None));
        let replayed = run_task(&task, &d.state, offline, &mut ScriptedSimulator::new(), &options(&d));
        assert!(direct.success);
        assert_eq!(direct, recorded);
        assert_eq!(direct, replayed, "{}", task.task_id);
    }
}
