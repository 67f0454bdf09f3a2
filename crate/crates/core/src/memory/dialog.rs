use serde::{Deserialize, Serialize};

use crate::marketplace::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DialogRole {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogTurn {
    pub role: DialogRole,
    pub text: String,
    pub at: Timestamp,
}

/// Ephemeral conversation log. Never persisted; erased on purge.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DialogHistory {
    turns: Vec<DialogTurn>,
}

impl DialogHistory {
    /// Appends a turn, clamping `at` so turns stay in time order.
    pub fn push(&mut self, role: DialogRole, text: &str, at: Timestamp) {
        let at = self.turns.last().map_or(at, |t| at.max(t.at));
        self.turns.push(DialogTurn {
            role,
            text: text.to_string(),
            at,
        });
    }

    pub fn turns(&self) -> &[DialogTurn] {
        &self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub(crate) fn clear(&mut self) {
        self.turns.clear();
    }
}
