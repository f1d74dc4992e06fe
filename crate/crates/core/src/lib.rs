//! Melody generation by an interactive evolutionary algorithm.
//!
//! A genetic algorithm first evolves ABC melodies toward n-gram similarity
//! with a reference corpus ([`corpus_index`], [`ga`]). Every melody it
//! evaluates is archived for human scoring ([`score_store`]). A
//! bidirectional LSTM learns to predict the averaged scores ([`surrogate`]),
//! and the same GA is then run with that network as its fitness
//! ([`pipeline`]).

pub mod abc;
pub mod corpus_index;
pub mod ga;
pub mod pipeline;
pub mod score_store;
pub mod surrogate;

pub use abc::{Token, Tune};
pub use corpus_index::CorpusIndex;
pub use ga::{GaConfig, GaRun, Melody};
pub use score_store::ScoreStore;
pub use surrogate::{SurrogateModel, TrainConfig};
