//! Context-centric request runtime.
//!
//! Requests are normalized at [`ingress`], routed through perception and
//! retrieval pipelines that emit [`schema::ContextState`] fragments, merged
//! and budgeted by the [`compiler`], and finally answered by a configured LLM
//! adapter that only ever sees the rendered context. The [`controller`]
//! decides which tool chain runs and falls back when one fails; the
//! [`gateway`] exposes the whole flow behind a chat-completions style API.

pub mod adapters;
pub mod audio;
pub mod canonical;
pub mod compiler;
pub mod controller;
pub mod document;
pub mod gateway;
pub mod ingress;
pub mod retrieval;
pub mod schema;
pub mod vision;
pub mod web;

pub use schema::{
    count_tokens, BoundingBox, CharSpan, ContextState, Entity, EntityKind, Observation,
    Provenance, Relation, RelationKind, TokenBudget,
};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
