//! Parsing of the model's marker-based output.
//!
//! ```text
//! Thought: <text, possibly several lines>
//! Action: <tool_name>
//! Action Input: <JSON object on one line, or a ``` fenced block>
//! ```
//! or
//! ```text
//! Thought: <text>
//! Final Answer: <text to end of output>
//! ```
//! Markers are case-sensitive and must start a line. Text before the first
//! marker is ignored, as is anything after the first complete block. Output
//! without any marker is taken as a final answer in its entirety.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

const THOUGHT: &str = "Thought:";
const ACTION: &str = "Action:";
const ACTION_INPUT: &str = "Action Input:";
const FINAL_ANSWER: &str = "Final Answer:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParsedOutput {
    Action {
        thought: String,
        tool_name: String,
        arguments: Map<String, Value>,
    },
    FinalAnswer {
        thought: String,
        answer: String,
    },
}

impl ParsedOutput {
    pub fn thought(&self) -> &str {
        match self {
            ParsedOutput::Action { thought, .. } | ParsedOutput::FinalAnswer { thought, .. } => thought,
        }
    }

    /// Canonical text form; parsing it gives back `self`.
    pub fn render(&self) -> String {
        match self {
            ParsedOutput::Action {
                thought,
                tool_name,
                arguments,
            } => format!(
                "{THOUGHT} {thought}\n{ACTION} {tool_name}\n{ACTION_INPUT} {}",
                serde_json::to_string(arguments).expect("JSON map serializes")
            ),
            ParsedOutput::FinalAnswer { thought, answer } if thought.is_empty() => {
                format!("{FINAL_ANSWER} {answer}")
            }
            ParsedOutput::FinalAnswer { thought, answer } => {
                format!("{THOUGHT} {thought}\n{FINAL_ANSWER} {answer}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseErrorKind {
    MissingMarker,
    MalformedArguments,
    UnknownShape,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParseErrorKind::MissingMarker => "missing_marker",
            ParseErrorKind::MalformedArguments => "malformed_arguments",
            ParseErrorKind::UnknownShape => "unknown_shape",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind}: {detail}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub detail: String,
}

impl ParseError {
    fn new(kind: ParseErrorKind, detail: impl Into<String>) -> Self {
        ParseError {
            kind,
            detail: detail.into(),
        }
    }

    fn missing(marker: &str) -> Self {
        ParseError::new(ParseErrorKind::MissingMarker, format!("expected \"{marker}\""))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Marker {
    Thought,
    Action,
    ActionInput,
    FinalAnswer,
}

/// Splits a line into its marker and the remainder, if it starts with one.
fn marker(line: &str) -> Option<(Marker, &str)> {
    // "Action Input:" must be tried before "Action:"
    [
        (ACTION_INPUT, Marker::ActionInput),
        (THOUGHT, Marker::Thought),
        (ACTION, Marker::Action),
        (FINAL_ANSWER, Marker::FinalAnswer),
    ]
    .into_iter()
    .find_map(|(prefix, m)| line.strip_prefix(prefix).map(|rest| (m, rest)))
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

fn parse_arguments(text: &str) -> Result<Map<String, Value>, ParseError> {
    match serde_json::from_str::<Value>(text.trim()) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(other) => Err(ParseError::new(
            ParseErrorKind::MalformedArguments,
            format!("Action Input must be a JSON object, got {}", json_kind(&other)),
        )),
        Err(e) => Err(ParseError::new(
            ParseErrorKind::MalformedArguments,
            format!("Action Input is not valid JSON: {e}"),
        )),
    }
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

fn is_tool_token(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
}

pub fn parse_model_output(raw: &str) -> Result<ParsedOutput, ParseError> {
    let text = raw.trim_end();
    let lines: Vec<&str> = text.lines().collect();

    let Some(first) = lines.iter().position(|l| marker(l).is_some()) else {
        let answer = text.trim();
        if answer.is_empty() {
            return Err(ParseError::new(ParseErrorKind::UnknownShape, "empty output"));
        }
        return Ok(ParsedOutput::FinalAnswer {
            thought: String::new(),
            answer: answer.to_string(),
        });
    };

    let (m, rest) = marker(lines[first]).expect("position found a marker");
    let mut i = first + 1;
    let thought = match m {
        Marker::Thought => {
            let mut buf = vec![rest];
            while i < lines.len() && marker(lines[i]).is_none() {
                buf.push(lines[i]);
                i += 1;
            }
            buf.join("\n").trim().to_string()
        }
        Marker::FinalAnswer => {
            return Ok(ParsedOutput::FinalAnswer {
                thought: String::new(),
                answer: final_answer_text(rest, &lines[i..]),
            })
        }
        Marker::Action | Marker::ActionInput => return Err(ParseError::missing(THOUGHT)),
    };

    let Some((next, rest)) = lines.get(i).and_then(|l| marker(l)) else {
        return Err(ParseError::missing("Action\" or \"Final Answer"));
    };
    i += 1;
    match next {
        Marker::FinalAnswer => Ok(ParsedOutput::FinalAnswer {
            thought,
            answer: final_answer_text(rest, &lines[i..]),
        }),
        Marker::Thought => Err(ParseError::new(
            ParseErrorKind::UnknownShape,
            "a second Thought follows before any Action or Final Answer",
        )),
        Marker::ActionInput => Err(ParseError::missing(ACTION)),
        Marker::Action => {
            if thought.is_empty() {
                return Err(ParseError::new(ParseErrorKind::UnknownShape, "empty Thought before Action"));
            }
            let tool_name = rest.trim();
            if !is_tool_token(tool_name) {
                return Err(ParseError::new(
                    ParseErrorKind::UnknownShape,
                    format!("Action must be a single tool name, got {tool_name:?}"),
                ));
            }
            let Some((Marker::ActionInput, input)) = lines.get(i).and_then(|l| marker(l)) else {
                return Err(ParseError::missing(ACTION_INPUT));
            };
            i += 1;
            let arguments = if input.trim().is_empty() {
                fenced_block(&lines[i..])?
            } else {
                parse_arguments(input)?
            };
            Ok(ParsedOutput::Action {
                thought,
                tool_name: tool_name.to_string(),
                arguments,
            })
        }
    }
}

fn final_answer_text(rest: &str, following: &[&str]) -> String {
    let mut buf = vec![rest];
    buf.extend_from_slice(following);
    buf.join("\n").trim().to_string()
}

fn fenced_block(lines: &[&str]) -> Result<Map<String, Value>, ParseError> {
    match lines.first() {
        Some(l) if is_fence(l) => {}
        _ => {
            return Err(ParseError::new(
                ParseErrorKind::MalformedArguments,
                "Action Input is empty",
            ))
        }
    }
    let Some(close) = lines[1..].iter().position(|l| is_fence(l)) else {
        return Err(ParseError::new(
            ParseErrorKind::MalformedArguments,
            "unterminated ``` block in Action Input",
        ));
    };
    parse_arguments(&lines[1..=close].join("\n"))
}
