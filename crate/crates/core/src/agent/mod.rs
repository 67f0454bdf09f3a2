//! The agent: prompt assembly, output parsing, confirmation-gated tool
//! execution and the per-session event log.

mod engine;
pub mod parser;
mod prompt;
mod session;

pub use engine::{
    continuation_message, repair_prompt, Agent, AgentConfig, AgentError, ConfirmPolicy,
    REPAIR_PROMPT_PREFIX,
};
pub use parser::{parse_model_output, ParseError, ParseErrorKind, ParsedOutput};
pub use prompt::{build_prompt, system_prompt, DEFAULT_PERSONA};
pub use session::{
    ActionStatus, AgentEvent, EventKind, ProposedAction, RoleContext, Session, SessionState,
    DEFAULT_EVENT_RETENTION,
};
