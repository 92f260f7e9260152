//! Detect-and-repair pipeline for SQL produced by a Text-to-SQL generator.
//!
//! The crate is split along the pipeline's stages:
//!
//! - [`catalog`]: benchmark corpora, database schemas, schema filtering and prompt rendering
//! - [`executor`]: sandboxed SQLite execution, the pass/fail gate and result comparison
//! - [`gateway`]: chat-completion backends (remote and scripted) plus the token ledger
//! - [`sqltool`]: the pluggable SQL generator and first-executable selection
//! - [`agents`]: reviewer, query crafter and refiner
//! - [`pipeline`]: the per-question repair loop and corpus runs
//! - [`metrics`]: EX, EM, VES, detection and repair statistics
//!
//! Everything except a remote [`gateway::OpenAiBackend`] runs offline.

pub mod agents;
pub mod catalog;
pub mod executor;
pub mod gateway;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod sqltext;
pub mod sqltool;

#[cfg(any(test, feature = "testing"))]
pub mod testing;

pub use catalog::{Corpus, DatabaseSchema, Difficulty, QuestionCase, SchemaSketch, TableDef};
pub use executor::{DbHandle, ExecStatus, ExecutionOutcome};
pub use pipeline::{PipelineConfig, RunRecord};
