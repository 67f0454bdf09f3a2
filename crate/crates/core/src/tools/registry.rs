use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::knowledge::KnowledgeIndex;
use crate::llm::ChatBackend;
use crate::marketplace::{MarketError, Store, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArgType {
    String,
    Number,
    Boolean,
    StringList,
    Object,
}

impl ArgType {
    pub fn as_str(self) -> &'static str {
        match self {
            ArgType::String => "string",
            ArgType::Number => "number",
            ArgType::Boolean => "boolean",
            ArgType::StringList => "string-list",
            ArgType::Object => "object",
        }
    }

    fn accepts(self, value: &Value) -> bool {
        match self {
            ArgType::String => value.is_string(),
            ArgType::Number => value.is_number(),
            ArgType::Boolean => value.is_boolean(),
            ArgType::StringList => value
                .as_array()
                .is_some_and(|items| items.iter().all(Value::is_string)),
            ArgType::Object => value.is_object(),
        }
    }
}

impl fmt::Display for ArgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ArgType,
    pub required: bool,
    pub description: String,
}

impl ArgSpec {
    pub fn required(name: &str, ty: ArgType, description: &str) -> Self {
        ArgSpec {
            name: name.into(),
            ty,
            required: true,
            description: description.into(),
        }
    }

    pub fn optional(name: &str, ty: ArgType, description: &str) -> Self {
        ArgSpec {
            required: false,
            ..ArgSpec::required(name, ty, description)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub args: Vec<ArgSpec>,
    pub mutating: bool,
    /// The `listing_id` argument must name one of the acting user's own
    /// listings (checked by the agent against its listings memory).
    #[serde(default)]
    pub owned_listing_arg: bool,
}

impl ToolSpec {
    /// `- name(arg:type,...): description [mutating|read-only]`
    pub fn describe(&self) -> String {
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| format!("{}:{}", a.name, a.ty))
            .collect();
        format!(
            "- {}({}): {} [{}]",
            self.name,
            args.join(","),
            self.description,
            if self.mutating { "mutating" } else { "read-only" }
        )
    }
}

/// What a tool call produced: the text the model sees and, optionally, a
/// structured payload for UIs and judges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub ok: bool,
    pub observation_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured: Option<Value>,
}

impl ToolResult {
    pub fn success(text: impl Into<String>, structured: Option<Value>) -> Self {
        let text = text.into();
        ToolResult {
            ok: true,
            observation_text: if text.is_empty() { "OK".into() } else { text },
            structured,
        }
    }

    pub fn error(message: impl fmt::Display) -> Self {
        ToolResult {
            ok: false,
            observation_text: format!("ERROR: {message}"),
            structured: None,
        }
    }
}

/// Everything a handler may touch while executing one call.
#[derive(Clone, Copy)]
pub struct ToolContext<'a> {
    pub store: &'a Store,
    pub user_id: &'a str,
    pub now: Timestamp,
    pub knowledge: Option<&'a KnowledgeIndex>,
    pub backend: Option<&'a dyn ChatBackend>,
}

#[derive(Debug, Error)]
pub enum ToolError {
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Unavailable(String),
}

pub type Args = Map<String, Value>;

pub type ToolHandler =
    Arc<dyn Fn(&ToolContext<'_>, &Args) -> Result<ToolResult, ToolError> + Send + Sync>;

#[derive(Debug, Error, PartialEq)]
pub enum RegistryError {
    #[error("tool {0} is already registered")]
    DuplicateName(String),
    #[error("tool {tool} declares argument {arg} twice")]
    DuplicateArg { tool: String, arg: String },
}

/// Named tools in registration order. Built once at startup, then shared.
#[derive(Clone, Default)]
pub struct ToolRegistry {
    tools: Vec<(ToolSpec, ToolHandler)>,
    index: HashMap<String, usize>,
}

impl fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.tools.iter().map(|(s, _)| &s.name)).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        ToolRegistry::default()
    }

    pub fn register(&mut self, spec: ToolSpec, handler: ToolHandler) -> Result<(), RegistryError> {
        if self.index.contains_key(&spec.name) {
            return Err(RegistryError::DuplicateName(spec.name));
        }
        let mut seen = std::collections::HashSet::new();
        for a in &spec.args {
            if !seen.insert(a.name.as_str()) {
                return Err(RegistryError::DuplicateArg {
                    tool: spec.name.clone(),
                    arg: a.name.clone(),
                });
            }
        }
        self.index.insert(spec.name.clone(), self.tools.len());
        self.tools.push((spec, handler));
        Ok(())
    }

    pub fn lookup(&self, name: &str) -> Option<&ToolSpec> {
        self.index.get(name).map(|&i| &self.tools[i].0)
    }

    pub fn specs(&self) -> impl Iterator<Item = &ToolSpec> {
        self.tools.iter().map(|(s, _)| s)
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    /// One line per tool, in registration order.
    pub fn describe_all(&self) -> String {
        self.specs().map(ToolSpec::describe).collect::<Vec<_>>().join("\n")
    }

    pub fn validate_args(spec: &ToolSpec, args: &Args) -> Result<(), String> {
        for a in &spec.args {
            match args.get(&a.name) {
                None | Some(Value::Null) if a.required => {
                    return Err(format!("missing required argument {}", a.name))
                }
                None | Some(Value::Null) => {}
                Some(v) if !a.ty.accepts(v) => {
                    return Err(format!("argument {} must be of type {}", a.name, a.ty))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// Validates and runs a tool call. Never fails: every problem comes back
    /// as an `ok = false` result so the reasoning loop can carry on.
    pub fn dispatch(&self, name: &str, args: &Args, ctx: &ToolContext<'_>) -> ToolResult {
        let Some(&i) = self.index.get(name) else {
            return ToolResult::error(format!("unknown tool {name}"));
        };
        let (spec, handler) = &self.tools[i];
        if let Err(msg) = ToolRegistry::validate_args(spec, args) {
            return ToolResult::error(msg);
        }
        match handler(ctx, args) {
            Ok(r) => r,
            Err(e) => ToolResult::error(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn echo() -> ToolHandler {
        Arc::new(|_, args| Ok(ToolResult::success(serde_json::to_string(args).unwrap(), None)))
    }

    fn spec(name: &str) -> ToolSpec {
        ToolSpec {
            name: name.into(),
            description: "Echo.".into(),
            args: vec![
                ArgSpec::required("listing_id", ArgType::String, "id"),
                ArgSpec::optional("tags", ArgType::StringList, "tags"),
            ],
            mutating: false,
            owned_listing_arg: false,
        }
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut reg = ToolRegistry::new();
        assert!(reg.describe_all().is_empty());
        reg.register(spec("echo"), echo()).unwrap();
        assert_eq!(
            reg.register(spec("echo"), echo()),
            Err(RegistryError::DuplicateName("echo".into()))
        );
        let mut twice = spec("twice");
        twice.args.push(ArgSpec::optional("tags", ArgType::String, ""));
        assert!(matches!(reg.register(twice, echo()), Err(RegistryError::DuplicateArg { .. })));
    }

    #[test]
    fn describe_line_format() {
        assert_eq!(
            spec("echo").describe(),
            "- echo(listing_id:string,tags:string-list): Echo. [read-only]"
        );
    }

    #[test]
    fn schema_violations_are_in_band() {
        let mut reg = ToolRegistry::new();
        reg.register(spec("echo"), echo()).unwrap();
        let store = Store::in_memory();
        let ctx = ToolContext {
            store: &store,
            user_id: "u",
            now: chrono::Utc::now(),
            knowledge: None,
            backend: None,
        };
        let args = |v: Value| v.as_object().unwrap().clone();
        let missing = reg.dispatch("echo", &args(json!({})), &ctx);
        assert!(!missing.ok);
        assert_eq!(missing.observation_text, "ERROR: missing required argument listing_id");
        let wrong = reg.dispatch("echo", &args(json!({"listing_id": 3})), &ctx);
        assert_eq!(wrong.observation_text, "ERROR: argument listing_id must be of type string");
        let bad_list = reg.dispatch("echo", &args(json!({"listing_id": "L1", "tags": ["a", 1]})), &ctx);
        assert!(!bad_list.ok);
        assert_eq!(
            reg.dispatch("no_such_tool", &Args::new(), &ctx).observation_text,
            "ERROR: unknown tool no_such_tool"
        );
        assert!(reg.dispatch("echo", &args(json!({"listing_id": "L1"})), &ctx).ok);
    }
}
