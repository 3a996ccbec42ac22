//! Evaluation harness for compositional image-text understanding.
//!
//! Benchmarks (ARO, SugarCrepe, Winoground) are loaded from JSONL manifests,
//! scored against contrastive models by cosine similarity and against
//! generative models by answer parsing or mean "yes" token scores, with
//! optional few-shot demonstrations from synthetic or real banks.

pub mod dataset;
pub mod fixtures;
pub mod forge;
pub mod gateway;
pub mod http;
pub mod image_ref;
pub mod prompt;
pub mod runner;
pub mod scalar;
pub mod scoring;

pub use dataset::{Benchmark, PairItem, Subset, WinogroundItem};
pub use image_ref::ImageRef;
pub use scalar::Scalar;

/// Embeddings as produced by the model adapters.
pub type Embedding = scoring::EmbeddingVector<f64>;
pub type Similarity2x2 = scoring::SimilarityMatrix2x2<f64>;
pub type ScoreRow = scoring::LogitRow<f64>;
