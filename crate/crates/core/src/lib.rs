//! Knowledge-grounded question answering engine.
//!
//! The pipeline: a structured knowledge base of (entity, attribute, content)
//! triples, retrieval baselines over it (BM25 and dense cosine), a prompt
//! gateway with pluggable generation backends, a three-stage grounded
//! inference orchestrator with provenance and fallback, knowledge-guided
//! dataset construction, and an evaluation harness.

pub mod datagen;
pub mod error;
pub mod evalkit;
pub mod gateway;
pub mod kb;
pub mod orchestrator;
pub mod retrieval;
pub mod rng;
pub mod text;

pub use error::{Error, Result};
pub use gateway::{BackendDescriptor, GenerationBackend, PromptTemplates};
pub use kb::{KnowledgeBase, KnowledgeInstance};
pub use orchestrator::{BatchOutcome, GroundedResponse};
