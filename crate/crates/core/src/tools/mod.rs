//! Tool registry and the marketplace tool suite the agent can call.

mod builtin;
pub mod knowledge;
mod registry;

pub use builtin::{builtin_registry, marketplace_tools, synthesis_request, DONT_KNOW, KNOWLEDGE_LOOKUP};
pub use knowledge::{Embedder, KnowledgeError, KnowledgeIndex, TermFrequencyEmbedder};
pub use registry::{
    ArgSpec, ArgType, Args, RegistryError, ToolContext, ToolError, ToolHandler, ToolRegistry,
    ToolResult, ToolSpec,
};
