//! Weakly supervised passage ranking.
//!
//! Unsupervised scorers (BM25, TF-IDF, embedding cosines) act as labeling
//! functions over query/passage candidate sets. Their per-query rankings are
//! turned into weak labels, fused by majority vote or a generative label
//! model, sampled into confidence-weighted triplets and used to train a
//! feedforward ranker with a pairwise hinge loss.

pub mod aggregation;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod labeling;
pub mod lexical;
pub mod pipeline;
pub mod synthetic;
pub mod trainer;
pub mod triplets;

pub use aggregation::{AggregatedLabel, AggregatedLabels, AggregationMethod, FitOptions, GenerativeParams};
pub use corpus::{Dataset, Split};
pub use embeddings::EmbeddingStore;
pub use error::{Error, Result};
pub use pipeline::{Pipeline, PipelineConfig};
pub use labeling::{LabelMatrix, LabelingFunction, ScoreSource, WeakLabel};
pub use trainer::{ScorerParams, TrainOptions};
pub use triplets::Triplet;
