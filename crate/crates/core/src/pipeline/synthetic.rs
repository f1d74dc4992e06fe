//! A deterministic stand-in for human raters, for unattended runs.

use crate::corpus_index::CorpusIndex;
use crate::ga::Melody;
use crate::score_store::{ScoreStore, StoreError};

/// Scores a melody as `100 * min(1, fitness / bound)`, where `fitness` is
/// the corpus-similarity fitness and `bound` its maximum for the melody's length.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticScorer<'a> {
    index: &'a CorpusIndex,
}

impl<'a> SyntheticScorer<'a> {
    pub fn new(index: &'a CorpusIndex) -> Self {
        SyntheticScorer { index }
    }

    pub fn score(&self, melody: &Melody) -> f64 {
        let bound = self.index.weights().upper_bound(melody.len());
        if bound == 0 {
            return 0.0;
        }
        let fitness = self.index.fitness(melody.tokens()) as f64;
        100.0 * (fitness / bound as f64).min(1.0)
    }

    /// Adds one score to each melody that has none yet, at most `budget` of
    /// them, taken in the store's pending order. Returns how many were scored.
    pub fn score_store(&self, store: &mut ScoreStore, budget: Option<usize>) -> Result<usize, StoreError> {
        let unscored: Vec<_> = store
            .pending(store.len())
            .into_iter()
            .filter(|s| s.scores.is_empty())
            .take(budget.unwrap_or(usize::MAX))
            .collect();
        for item in &unscored {
            store.add_score(&item.melody_id, self.score(&item.melody))?;
        }
        Ok(unscored.len())
    }
}
