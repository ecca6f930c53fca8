//! End-to-end hierarchical indexing for dense retrieval.
//!
//! A trainable linear head over frozen base embeddings is optimized jointly
//! with a `B`-ary tree of softmax routers. Queries descend the tree by beam
//! search; documents are indexed in the leaves their own descent reaches,
//! and the union of visited leaves is reranked exactly.
//!
//! The crate also ships the disjoint baseline (siamese-only head followed by
//! k-means), retrieval metrics, a binary index format, and the `ehi` CLI.

pub mod artifact;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluator;
pub mod gradcheck;
pub mod index;
pub mod indexer;
pub mod ivf;
pub mod math;
pub mod optim;
pub mod retriever;
pub mod synth;
pub mod trainer;

pub use artifact::IndexArtifact;
pub use config::TrainConfig;
pub use data::{EmbeddingMatrix, RelevanceJudgments};
pub use encoder::{EncoderParams, Metric};
pub use error::{Error, Result};
pub use index::{IndexKind, Router, SearchIndex};
pub use indexer::{IndexerParams, LeafId, PathEmbedding};
pub use retriever::{Candidates, LeafMap};
pub use trainer::{train, Model, TrainData, TrainOutcome};
