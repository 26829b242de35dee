//! Triple set prediction over knowledge graphs.
//!
//! The pipeline: load a triple store and augment it with inverse relations
//! ([`kg`]); mine chain Horn rules through a completion backend or load them
//! from a file, then score and threshold them ([`rules`], [`gateway`]);
//! partition the graph into overlapping entity groups and induce prompt-sized
//! subgraphs ([`partition`]); predict missing triples per subgraph with
//! either the deterministic rule oracle or an LLM backend ([`pipeline`]);
//! audit predictions for fabricated premises and rule violations ([`audit`]);
//! and score the consolidated prediction set under the closed world
//! assumption ([`eval`]).
//!
//! Interchangeable strategies sit behind name-keyed registries: completion
//! backends (`http`, `replay`, `stub`) in [`gateway::BackendRegistry`] and
//! prediction strategies (`oracle`, `llm`) in [`pipeline::PredictorRegistry`].

pub mod audit;
mod concurrency;
pub mod eval;
pub mod gateway;
pub mod kg;
pub mod partition;
pub mod pipeline;
pub mod rules;

pub use audit::{AuditRecord, HallucinationReport};
pub use eval::{EvalReport, Metrics};
pub use gateway::{BackendConfig, BackendRegistry, CompletionBackend, PredictionRecord, PromptDoc};
pub use kg::{EntityId, LabelTriple, RelationId, Triple, TripleStore};
pub use partition::{EntityGroup, PartitionConfig, Subgraph};
pub use pipeline::{PipelineConfig, Predictor, PredictorRegistry};
pub use rules::{Rule, RuleQuality};
