//! Citation-aware summarization of scientific papers with hierarchical graph
//! contrastive learning.
//!
//! The crate is organised bottom-up:
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`corpus`] | documents, citation graph, BFS sampling, splits, tokenization |
//! | [`rouge`] | ROUGE-N / ROUGE-L scoring |
//! | [`selection`] | greedy oracle content selection and neighbour ranking |
//! | [`graph`] | weighted citation graph, document-token bipartite graph, normalized Laplacians |
//! | [`tape`] | small reverse-mode autodiff over dense `f64` matrices |
//! | [`model`] | embeddings, encoder, pooling, decoder, generation, checkpoints |
//! | [`losses`] | DRA / TRA contrastive losses, NLL, total objective, factorization theory |
//! | [`harness`] | configuration, synthetic corpora, training, evaluation, ρ sweeps |
//!
//! Runnable walkthroughs for each capability live in the crate's `examples/`
//! directory.

pub mod corpus;
pub mod error;
pub mod graph;
pub mod harness;
pub mod losses;
pub mod model;
pub mod rouge;
pub mod selection;
pub mod tape;
pub mod vocab;

pub use error::{Error, Result};
