//! Environment for training and evaluating literature-search agents with
//! verifiable rewards.
//!
//! - [`corpus`]: document and QA-dataset storage
//! - [`bm25`]: inverted index with Okapi BM25 ranking
//! - [`retrieval`]: batched top-k service and client
//! - [`protocol`]: search/answer tag protocol and loss masks
//! - [`reward`]: answer normalization and exact-match reward
//! - [`grpo`]: group-relative policy optimization at toy scale
//! - [`rollout`]: episode orchestration and toy training
//! - [`datagen`]: factoid QA generation from abstracts
//! - [`eval`]: Direct / CoT / RAG / agent evaluation harness

pub mod bm25;
pub mod corpus;
pub mod datagen;
pub mod eval;
pub mod grpo;
pub mod http;
pub mod protocol;
pub mod retrieval;
pub mod reward;
pub mod rollout;
