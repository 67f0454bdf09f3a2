use std::io::{self, BufRead, Write};

use bazaar_core::agent::{Agent, AgentError, AgentEvent, EventKind, SessionState};
use chrono::Utc;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReplError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn call(tool: &str, args: &Value) -> String {
    format!("{tool}({})", serde_json::to_string(args).unwrap_or_default())
}

/// One line per event, or `None` for events the terminal does not show.
pub fn render_event(e: &AgentEvent) -> Option<String> {
    let p = &e.payload;
    let s = |key: &str| p[key].as_str().unwrap_or_default().to_string();
    match e.kind {
        EventKind::Thought => Some(format!("Thought: {}", s("text"))),
        EventKind::AutoExecuted => Some(format!("Action: {}", call(&s("tool_name"), &p["arguments"]))),
        EventKind::ProposedAction => Some(format!("[y/n] Execute {}?", call(&s("tool_name"), &p["arguments"]))),
        EventKind::Observation if p["rejected"] == true => {
            Some(format!("Rejected: {} was not executed.", s("tool_name")))
        }
        EventKind::Observation => Some(format!("Observation: {}", s("text"))),
        EventKind::FinalAnswer => Some(format!("Assistant: {}", s("answer"))),
        EventKind::Error => Some(format!("Error ({}): {}", s("kind"), s("message"))),
        EventKind::SessionStarted | EventKind::SessionPurged => None,
    }
}

fn print_events<W: Write>(out: &mut W, events: &[AgentEvent]) -> io::Result<()> {
    for line in events.iter().filter_map(render_event) {
        writeln!(out, "{line}")?;
    }
    out.flush()
}

/// Chat loop over `input`; returns on EOF or `/quit`.
pub fn run<R: BufRead, W: Write>(agent: &Agent, user_id: &str, input: R, mut out: W) -> Result<(), ReplError> {
    let mut session = agent.start_session(user_id, Utc::now())?;
    writeln!(
        out,
        "Session {} for {} ({} listing(s) loaded). Type /quit to leave.",
        session.id,
        user_id,
        session.listings_memory.len()
    )?;
    let mut lines = input.lines();
    loop {
        let prompt = if session.state == SessionState::AwaitingConfirmation { "y/n> " } else { "> " };
        write!(out, "{prompt}")?;
        out.flush()?;
        let Some(line) = lines.next() else {
            writeln!(out)?;
            return Ok(());
        };
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "/quit" {
            return Ok(());
        }
        let result = if session.state == SessionState::AwaitingConfirmation {
            match line.to_lowercase().as_str() {
                "y" | "yes" => agent.confirm_action(&mut session, Utc::now()),
                "n" | "no" => agent.reject_action(&mut session, None, Utc::now()),
                _ => {
                    let reason = line.strip_prefix("n ").or_else(|| line.strip_prefix("no "));
                    match reason {
                        Some(r) => agent.reject_action(&mut session, Some(r), Utc::now()),
                        None => {
                            writeln!(out, "Please answer y or n.")?;
                            continue;
                        }
                    }
                }
            }
        } else {
            agent.handle_user_message(&mut session, line, Utc::now())
        };
        match result {
            Ok(events) => print_events(&mut out, &events)?,
            Err(AgentError::Backend(e)) => {
                writeln!(out, "Error: the model backend is unavailable ({e}).")?;
                return Err(ReplError::BackendUnavailable(e.to_string()));
            }
            Err(e) => return Err(e.into()),
        }
    }
}
