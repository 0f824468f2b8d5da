//! Encoder-decoder dialogue model over two stacked memories: a gated,
//! context-aware memory holding the tagged dialogue history and a context-free
//! memory holding knowledge-base triples. Decoding copies words out of either
//! memory or generates from the vocabulary, trained with a joint
//! log-likelihood over all three distributions.
//!
//! The crate ships the numeric core, corpus tooling (loaders, tagging, copy
//! labels, a synthetic lookup-task generator), the model itself, a trainer,
//! the evaluation metrics, and the `hmn` command-line front end.

pub mod cli;
pub mod corpus;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod trainer;
