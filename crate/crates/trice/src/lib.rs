//! Two-stage tool learning for a tiny character-level language model.
//!
//! Stage I clones tool-usage behavior from a prepared dataset; stage II
//! reinforces the model with rewards derived from actually executing the
//! tool calls it proposes. Everything runs on the CPU from a single seed:
//! synthetic task generation, sandboxed tools, training, and the
//! experiment grid are all deterministic and reproducible.

pub mod cli;
pub mod dataprep;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod tasks;
pub mod tools;
pub mod train;

pub use nn::{ModelConfig, ParameterSet};
pub use tasks::{Difficulty, Instance, TaskKind, Vocabulary};
pub use tools::{ModelOutput, ToolCall, ToolResult};
