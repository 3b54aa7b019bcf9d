//! Knowledge-augmented agents for capture-the-flag challenges.
//!
//! The crate is organized bottom-up: a [`corpus`] of writeups, code and
//! payload records feeds a [`vector_index`] and a [`knowledge_graph`]; the
//! [`retrieval`] engine runs a self-grading retrieval loop over them through
//! the [`llm_gateway`]; [`agents`] solve challenges inside an
//! [`environment`] sandbox; the [`harness`] runs benchmarks and reports.

pub mod agents;
pub mod challenge;
pub mod clock;
pub mod corpus;
pub mod environment;
pub mod harness;
pub mod knowledge_graph;
pub mod llm_gateway;
pub mod prompts;
pub mod retrieval;
pub mod vector_index;
