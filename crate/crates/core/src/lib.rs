//! Ensemble image retrieval and article-grounded captioning.
//!
//! The pipeline runs exact L2 search per encoder ([`knn`]), fuses the
//! per-encoder rankings ([`fusion`]), maps the winning image to its source
//! article ([`catalog`]) and asks a multimodal chat endpoint for a caption
//! ([`caption`]). [`retrieval_eval`] and [`caption_eval`] score the outputs.

pub mod caption;
pub mod caption_eval;
pub mod catalog;
pub mod cli;
pub mod embedding;
pub mod error;
pub mod fixture;
pub mod fusion;
pub mod knn;
pub mod ranked;
pub mod retrieval_eval;

pub use embedding::{load_embeddings, normalize_rows, write_embeddings, EmbeddingMatrix};
pub use error::{Error, Result};
pub use fusion::{fuse, normalize_weights, rrf, weighted_ensemble, FusionConfig, FusionMethod};
pub use knn::{batch_search, l2_distance, top_k};
pub use ranked::{Direction, RankedEntry, RankedList};
pub use retrieval_eval::{average_precision, evaluate_run, recall_at_k, GroundTruth, RetrievalReport};
