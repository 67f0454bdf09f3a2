use crate::llm::{ChatMessage, Role};
use crate::memory::DialogRole;
use crate::tools::ToolRegistry;

use super::session::{RoleContext, Session};

pub const DEFAULT_PERSONA: &str = "You are an AI assistant for a Facebook Marketplace user.";

const FORMAT_INSTRUCTIONS: &str = "\
Work one step at a time. Every reply holds exactly one Thought followed by either one Action or a Final Answer, using these markers at the start of a line:

Thought: <your reasoning about the current state of the task and the next step>
Action: <tool name>
Action Input: <the tool arguments as one JSON object on a single line>

or, when the task is done or you need to ask the user something:

Thought: <your reasoning>
Final Answer: <your reply to the user>

Tools marked [mutating] change the marketplace; the user sees each such action and confirms it before it runs. After a tool runs you receive its Observation.
When the user refers to one of their listings, pick the matching listing id from the listings below. Never invent listing ids.";

const SCRATCHPAD_HEADER: &str = "Your previous steps in this conversation:\n\n";

pub fn system_prompt(persona: &str, tools: &ToolRegistry, session: &Session) -> String {
    let role = match session.role_context {
        RoleContext::Seller => "The user is selling.",
        RoleContext::Buyer => "The user is buying.",
        RoleContext::Mixed => "The user may be buying or selling.",
    };
    format!(
        "{persona}\n{role}\n\nAvailable tools:\n{}\n\n{FORMAT_INSTRUCTIONS}\n\n{}",
        tools.describe_all(),
        session.listings_memory.render().trim_end()
    )
}

/// Assembles the model input: system prompt, scratchpad, dialog history,
/// then the new user message. Pure function of its inputs.
pub fn build_prompt(
    persona: &str,
    tools: &ToolRegistry,
    session: &Session,
    user_message: Option<&str>,
) -> Vec<ChatMessage> {
    let mut messages = vec![ChatMessage::system(system_prompt(persona, tools, session))];
    if !session.scratchpad.is_empty() {
        messages.push(ChatMessage::system(format!(
            "{SCRATCHPAD_HEADER}{}",
            session.scratchpad.render()
        )));
    }
    for turn in session.dialog.turns() {
        let role = match turn.role {
            DialogRole::User => Role::User,
            DialogRole::Assistant => Role::Assistant,
        };
        messages.push(ChatMessage {
            role,
            content: turn.text.clone(),
        });
    }
    if let Some(text) = user_message {
        messages.push(ChatMessage::user(text));
    }
    messages
}
