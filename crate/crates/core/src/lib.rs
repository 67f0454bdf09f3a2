pub mod agent;
pub mod eval;
pub mod llm;
pub mod marketplace;
pub mod memory;
pub mod text;
pub mod tools;
