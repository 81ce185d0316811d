//! Knowledge-base completion for problem-oriented medical records.
//!
//! Learns which medications, procedures and lab tests are relevant to a
//! defined medical problem from an annotated triplet knowledge base plus
//! usage statistics mined from an encounter log.

pub mod baseline;
pub mod cli;
pub mod code;
pub mod embedding;
pub mod encounters;
pub mod error;
pub mod eval;
pub mod kb;
pub mod model;
pub mod service;
pub mod synth;

pub use code::{Code, CodeSystem, RelationKind};
pub use error::{Error, Result};
pub use kb::{KnowledgeBase, Label, Problem, Split, SplitMode, SplitPart, Triplet};
