//! Synthesis of abbreviation-disambiguation corpora by reverse substitution,
//! class balancing, downstream clinical task builders, evaluation metrics,
//! and a small reference implementation of the tanh-scored attention layer.

pub mod attention_ref;
pub mod balancer;
pub mod corpus_io;
pub mod error;
pub mod mapping_table;
pub mod metrics_stats;
pub mod pipeline;
pub mod rng;
pub mod splits_tasks;
pub mod substitution;
pub mod synth;

pub use error::{Error, Result};
