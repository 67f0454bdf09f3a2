use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError};

/// One `{"pattern", "response"}` entry of a script file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub pattern: String,
    pub response: String,
}

impl ScriptRule {
    pub fn new(pattern: impl Into<String>, response: impl Into<String>) -> Self {
        ScriptRule {
            pattern: pattern.into(),
            response: response.into(),
        }
    }
}

/// Deterministic backend: the last user message is matched against the
/// rules in order and the first matching rule's response is returned as is.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    rules: Vec<(Regex, String)>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Result<Self, LlmError> {
        let rules = rules
            .into_iter()
            .map(|r| {
                Regex::new(&r.pattern)
                    .map(|re| (re, r.response))
                    .map_err(|e| LlmError::InvalidRequest(format!("bad script pattern {:?}: {e}", r.pattern)))
            })
            .collect::<Result<_, _>>()?;
        Ok(ScriptedBackend { rules })
    }

    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        let rules: Vec<ScriptRule> = serde_json::from_str(text)
            .map_err(|e| LlmError::InvalidRequest(format!("script file: {e}")))?;
        ScriptedBackend::new(rules)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::InvalidRequest(format!("{}: {e}", path.display())))?;
        ScriptedBackend::from_json(&text)
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let last = request.last_user_content().unwrap_or("");
        self.rules
            .iter()
            .find(|(re, _)| re.is_match(last))
            .map(|(_, response)| ChatResponse::stop(request, response.clone()))
            .ok_or_else(|| LlmError::NoScriptMatch(last.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ChatMessage;

    fn request(user: &str) -> ChatRequest {
        ChatRequest::new(vec![ChatMessage::system("sys"), ChatMessage::user(user)], 0.0)
    }

    #[test]
    fn first_matching_rule_wins() {
        let response = "Thought: renew it\nAction: renew_listing\nAction Input: {\"listing_id\":\"L7\"}";
        let backend = ScriptedBackend::new(vec![
            ScriptRule::new("renew.*Quest", response),
            ScriptRule::new("(?s).*", "Thought: ?\nFinal Answer: fallback"),
        ])
        .unwrap();
        let out = backend.complete(&request("please renew my Quest 2")).unwrap();
        assert_eq!(out.content, response);
        assert_eq!(
            backend.complete(&request("hello")).unwrap().content,
            "Thought: ?\nFinal Answer: fallback"
        );
    }

    #[test]
    fn unmatched_message_is_a_fixture_gap() {
        let backend = ScriptedBackend::new(vec![ScriptRule::new("^x$", "y")]).unwrap();
        assert!(matches!(backend.complete(&request("z")), Err(LlmError::NoScriptMatch(_))));
    }

    #[test]
    fn loads_script_json() {
        let backend = ScriptedBackend::from_json(r#"[{"pattern": "hi", "response": "Final Answer: hey"}]"#).unwrap();
        assert_eq!(backend.complete(&request("hi")).unwrap().content, "Final Answer: hey");
        assert!(ScriptedBackend::from_json(r#"[{"pattern": "(", "response": ""}]"#).is_err());
    }

    #[test]
    fn rejects_requests_without_system_message() {
        let backend = ScriptedBackend::new(vec![]).unwrap();
        let bad = ChatRequest::new(vec![ChatMessage::user("x")], 0.0);
        assert!(matches!(backend.complete(&bad), Err(LlmError::InvalidRequest(_))));
    }
}
