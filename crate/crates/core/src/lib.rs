//! Outfit-compatibility engine.
//!
//! Products are embedded purely from the expert-curated outfits they appear
//! in: every outfit is a "sentence", every product a "word", and a skip-gram
//! model with slot- and window-constrained negative sampling learns a target
//! and a context vector per product. On top of the pairwise style-fit score
//! sit two outfit scorers (mean and slot-pair attention), ranking metrics, a
//! beam-search outfit composer and a synthetic corpus generator with planted
//! style clusters.

pub mod catalog;
pub mod composer;
pub mod eval;
pub mod metrics;
pub mod outfit_models;
pub mod pair_model;
pub mod par;
pub mod rng;
pub mod sampler;
pub mod synth;

pub use catalog::{Corpus, Dataset, Outfit, Product, ProductIx, Slot, Split, SplitAssignment, TimeWindow, Vocabulary};
pub use composer::{BeamConfig, ScoredOutfit};
pub use metrics::{EvalInstance, MetricReport};
pub use outfit_models::{AttentionModel, OutfitScorer, ScorerKind};
pub use pair_model::{PairModel, TrainConfig};
pub use par::Execution;
