//! Popularity-aware negative sampling for news recommendation.
//!
//! The crate is organized along the training pipeline:
//!
//! - [`corpus`]: news catalogs, impression logs and time buckets
//! - [`popindex`]: per-bucket click/view counters and popularity queries
//! - [`sampler`]: training samples whose negatives include the most popular
//!   articles at the impression's time
//! - [`model`]: a small attention-pooled embedding scorer and its loss
//! - [`eval`]: AUC, MRR, nDCG@k and category-entropy diversity
//! - [`synth`]: synthetic click logs with a tunable popularity skew

pub mod corpus;
pub mod eval;
pub mod model;
pub mod popindex;
pub mod rng;
pub mod sampler;
pub mod synth;

pub use corpus::{bucket_of, ArticleIdx, BucketSpec, Catalog, Impression, NewsArticle};
pub use eval::{evaluate, EvalReport};
pub use model::{ModelParams, TrainConfig};
pub use popindex::{build_index, PopularityIndex, PopularityLogic, PopularityMetric};
pub use sampler::{make_samples, SamplerConfig, TrainingSample};
pub use synth::{generate_corpus, SynthConfig};
