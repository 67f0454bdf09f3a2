use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::text::truncate_chars;

pub const DEFAULT_OBSERVATION_CHAR_LIMIT: usize = 2000;

/// One Thought-Action-Observation triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScratchpadEntry {
    pub index: usize,
    pub thought: String,
    pub tool_name: String,
    pub arguments: Map<String, Value>,
    pub observation: String,
}

/// Append-only log of the agent's executed steps within a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scratchpad {
    entries: Vec<ScratchpadEntry>,
    observation_char_limit: usize,
}

impl Default for Scratchpad {
    fn default() -> Self {
        Scratchpad::new(DEFAULT_OBSERVATION_CHAR_LIMIT)
    }
}

impl Scratchpad {
    pub fn new(observation_char_limit: usize) -> Self {
        Scratchpad {
            entries: Vec::new(),
            observation_char_limit,
        }
    }

    pub fn append(
        &mut self,
        thought: &str,
        tool_name: &str,
        arguments: Map<String, Value>,
        observation: &str,
    ) -> &ScratchpadEntry {
        let index = self.entries.last().map_or(1, |e| e.index + 1);
        self.entries.push(ScratchpadEntry {
            index,
            thought: thought.to_string(),
            tool_name: tool_name.to_string(),
            arguments,
            observation: truncate_chars(observation, self.observation_char_limit),
        });
        self.entries.last().expect("just pushed")
    }

    pub fn entries(&self) -> &[ScratchpadEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub(crate) fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn render(&self) -> String {
        render_entries(&self.entries)
    }
}

/// Canonical single-line JSON (keys sorted).
pub fn canonical_args(arguments: &Map<String, Value>) -> String {
    serde_json::to_string(arguments).expect("JSON map serializes")
}

/// Renders entries as `Step <k>:` blocks separated by blank lines.
pub fn render_entries(entries: &[ScratchpadEntry]) -> String {
    let mut out = String::new();
    for (i, e) in entries.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = write!(
            out,
            "Step {}:\nThought: {}\nAction: {}({})\nObservation: {}\n",
            e.index,
            e.thought,
            e.tool_name,
            canonical_args(&e.arguments),
            e.observation
        );
    }
    out
}
