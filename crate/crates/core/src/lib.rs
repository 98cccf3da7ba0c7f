pub mod graph;
pub mod llm;
pub mod sandbox;
pub mod memory;
pub mod par;
pub mod pipeline;
