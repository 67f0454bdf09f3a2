//! Automated evaluation: synthetic datasets, a simulated user, step-limited
//! task runs with state-based judging, and success/optimality reports.

mod dataset;
mod judge;
mod report;
mod runner;
mod simulator;
mod task;

use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::AgentConfig;
use crate::llm::{ChatBackend, LlmError};
use crate::marketplace::MarketError;

pub use dataset::{
    base_time, eval_start, generate_dataset, Dataset, DatasetConfig, DatasetMode, Manifest, BULK_REPLY_BODY,
    DATASET_CATEGORIES, DEFAULT_SELLER, GENERATION_ATTEMPTS, MANIFEST_FILE, SEEDED_UNREAD,
};
pub use judge::{final_result_ids, judge_success};
pub use report::{compute_report, EvalReport, Rates};
pub use runner::{looping_backend, run_task, scripted_agent_backend, scripted_agent_rules, RunOptions, MAX_EXCHANGES};
pub use simulator::{ModelSimulator, ScriptedSimulator, SimulatorTurn, UserSimulator, DONE_MARKER};
pub use task::{EvalOutcome, FailureReason, TaskKind, TaskParameters, TaskSpec, DEFAULT_STEP_LIMIT};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("generated dataset invalid after {attempts} attempts: {reason}")]
    GenerationInvalid { attempts: u32, reason: String },
    #[error("no outcomes to report")]
    NoOutcomes,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Which agent model drives the runs.
#[derive(Clone)]
pub enum AgentBackend {
    /// A fresh script per task that follows the optimal path.
    Scripted,
    Shared(Arc<dyn ChatBackend>),
}

/// Which simulated user drives the runs.
#[derive(Clone)]
pub enum SimulatorChoice {
    Scripted,
    /// A model playing the user, sampled at the given temperature.
    Model(Arc<dyn ChatBackend>, f32),
}

#[derive(Debug, Clone, Serialize)]
struct DigestInput<'a> {
    dataset_seed: u64,
    dataset_mode: DatasetMode,
    dataset_digest: String,
    tasks: Vec<&'a str>,
    agent_backend: &'static str,
    simulator: &'static str,
    simulator_temperature: Option<f32>,
    agent: &'a AgentConfig,
    max_exchanges: u32,
}

pub fn config_digest(
    dataset: &Dataset,
    tasks: &[TaskSpec],
    backend: &AgentBackend,
    simulator: &SimulatorChoice,
    options: &RunOptions,
) -> String {
    let input = DigestInput {
        dataset_seed: dataset.manifest.seed,
        dataset_mode: dataset.manifest.mode,
        dataset_digest: dataset.state.digest(),
        tasks: tasks.iter().map(|t| t.task_id.as_str()).collect(),
        agent_backend: match backend {
            AgentBackend::Scripted => "scripted",
            AgentBackend::Shared(_) => "shared",
        },
        simulator: match simulator {
            SimulatorChoice::Scripted => "scripted",
            SimulatorChoice::Model(..) => "model",
        },
        simulator_temperature: match simulator {
            SimulatorChoice::Scripted => None,
            SimulatorChoice::Model(_, t) => Some(*t),
        },
        agent: &options.agent,
        max_exchanges: options.max_exchanges,
    };
    let bytes = serde_json::to_vec(&input).expect("digest input serializes");
    hex::encode(Sha256::digest(bytes))
}

/// Runs every task in order, each on its own copy of the dataset store.
pub fn run_suite(
    dataset: &Dataset,
    tasks: &[TaskSpec],
    backend: &AgentBackend,
    simulator: &SimulatorChoice,
    options: &RunOptions,
) -> Result<Vec<EvalOutcome>, EvalError> {
    let mut outcomes = Vec::with_capacity(tasks.len());
    for task in tasks {
        let agent_backend: Arc<dyn ChatBackend> = match backend {
            AgentBackend::Scripted => Arc::new(scripted_agent_backend(task)?),
            AgentBackend::Shared(b) => b.clone(),
        };
        let outcome = match simulator {
            SimulatorChoice::Scripted => {
                run_task(task, &dataset.state, agent_backend, &mut ScriptedSimulator::new(), options)
            }
            SimulatorChoice::Model(b, temperature) => {
                let mut sim = ModelSimulator::new(b.clone());
                sim.temperature = *temperature;
                run_task(task, &dataset.state, agent_backend, &mut sim, options)
            }
        };
        tracing::info!(task = %outcome.task_id, success = outcome.success, steps = outcome.steps_used, "task finished");
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

/// Writes one JSON transcript per task into `dir`.
pub fn write_transcripts(dir: &Path, outcomes: &[EvalOutcome]) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    for o in outcomes {
        let body = serde_json::to_string_pretty(o)?;
        std::fs::write(dir.join(format!("{}.json", o.task_id)), body + "\n")?;
    }
    Ok(())
}
