//! Encoding-tree retrieval over textual attributed graphs.
//!
//! A graph's nodes are organized into a height-bounded encoding tree that
//! minimizes a joint structural and semantic entropy. Every tree node gets a
//! summary and an embedding; queries retrieve the most similar tree nodes
//! and return the union of their subgraphs as prompt context.

pub mod config;
pub mod embedding;
pub mod entropy;
pub mod error;
pub mod graph;
pub mod index;
pub mod pipeline;
pub mod providers;
pub mod retriever;
pub mod store;
pub mod testkit;
pub mod tree;

pub use embedding::EmbeddingMatrix;
pub use entropy::{EntropyModel, EntropyParams};
pub use error::{Error, ErrorKind, Result};
pub use graph::{NodeIx, NodeSet, TextualAttributedGraph};
pub use tree::{build_encoding_tree, EncodingTree, SolverConfig, TreeNodeId};
