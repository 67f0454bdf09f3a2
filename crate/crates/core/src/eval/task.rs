use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::AgentEvent;
use crate::marketplace::SearchQuery;

pub const DEFAULT_STEP_LIMIT: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    InventorySearch,
    RenewListing,
    BulkReply,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::InventorySearch, TaskKind::RenewListing, TaskKind::BulkReply];

    /// Fewest Thought-Action cycles that can complete the task.
    pub fn optimal_steps(self) -> u32 {
        match self {
            TaskKind::InventorySearch => 1,
            TaskKind::RenewListing => 2,
            TaskKind::BulkReply => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::InventorySearch => "inventory_search",
            TaskKind::RenewListing => "renew_listing",
            TaskKind::BulkReply => "bulk_reply",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    /// Accepts the full names and the short forms `search`, `renew`, `bulk`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "inventory_search" | "search" => Ok(TaskKind::InventorySearch),
            "renew_listing" | "renew" => Ok(TaskKind::RenewListing),
            "bulk_reply" | "bulk" => Ok(TaskKind::BulkReply),
            other => Err(format!("unknown task kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskParameters {
    InventorySearch {
        query: SearchQuery,
        expected_ids: Vec<String>,
    },
    RenewListing {
        phrase: String,
    },
    BulkReply {
        body: String,
        seeded_unread: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub kind: TaskKind,
    pub target_listing_id: Option<String>,
    /// Canonical opening request of the simulated user.
    pub utterance: String,
    pub parameters: TaskParameters,
    pub optimal_steps: u32,
    pub step_limit: u32,
}

impl TaskSpec {
    pub fn new(
        task_id: String,
        kind: TaskKind,
        target_listing_id: Option<String>,
        utterance: String,
        parameters: TaskParameters,
    ) -> Self {
        TaskSpec {
            task_id,
            kind,
            target_listing_id,
            utterance,
            parameters,
            optimal_steps: kind.optimal_steps(),
            step_limit: DEFAULT_STEP_LIMIT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    StepLimitExceeded,
    JudgeFailed,
    AgentError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub task_id: String,
    pub kind: TaskKind,
    pub success: bool,
    pub steps_used: u32,
    pub optimal: bool,
    pub failure_reason: Option<FailureReason>,
    /// Simulator turns, in order.
    pub user_turns: Vec<String>,
    pub transcript: Vec<AgentEvent>,
}
