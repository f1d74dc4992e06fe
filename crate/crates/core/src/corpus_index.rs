//! n-gram membership sets and token probabilities over a reference corpus,
//! and the similarity fitness computed from them.
//!
//! The fitness of a melody is `N2 + 10*N3 + 100*N4`, where `Nn` counts the
//! melody's sliding n-token windows (with multiplicity) that occur anywhere
//! in a single corpus tune.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use crate::abc::{Token, Tune};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IndexError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
}

/// Weights of the 2-, 3- and 4-gram match counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GramWeights {
    pub bigram: u64,
    pub trigram: u64,
    pub fourgram: u64,
}

impl Default for GramWeights {
    fn default() -> Self {
        GramWeights {
            bigram: 1,
            trigram: 10,
            fourgram: 100,
        }
    }
}

impl GramWeights {
    /// Largest attainable fitness for a melody of `len` tokens: every window matches.
    pub fn upper_bound(&self, len: usize) -> u64 {
        let windows = |n: usize| len.saturating_sub(n - 1) as u64;
        self.bigram * windows(2) + self.trigram * windows(3) + self.fourgram * windows(4)
    }

    fn combine(&self, counts: [u64; 3]) -> u64 {
        self.bigram * counts[0] + self.trigram * counts[1] + self.fourgram * counts[2]
    }
}

#[derive(Debug, Clone)]
pub struct CorpusIndex {
    grams2: HashSet<[Token; 2]>,
    grams3: HashSet<[Token; 3]>,
    grams4: HashSet<[Token; 4]>,
    counts: BTreeMap<Token, u64>,
    total_tokens: u64,
    weights: GramWeights,
}

impl CorpusIndex {
    pub fn build(corpus: &[Tune]) -> Result<CorpusIndex, IndexError> {
        Self::build_weighted(corpus, GramWeights::default())
    }

    pub fn build_weighted(corpus: &[Tune], weights: GramWeights) -> Result<CorpusIndex, IndexError> {
        if corpus.is_empty() || corpus.iter().all(|t| t.body.is_empty()) {
            return Err(IndexError::EmptyCorpus);
        }
        let mut index = CorpusIndex {
            grams2: HashSet::new(),
            grams3: HashSet::new(),
            grams4: HashSet::new(),
            counts: BTreeMap::new(),
            total_tokens: 0,
            weights,
        };
        for tune in corpus {
            let body = &tune.body;
            for &t in body {
                *index.counts.entry(t).or_insert(0) += 1;
            }
            index.total_tokens += body.len() as u64;
            index.grams2.extend(body.windows(2).map(|w| [w[0], w[1]]));
            index.grams3.extend(body.windows(3).map(|w| [w[0], w[1], w[2]]));
            index.grams4.extend(body.windows(4).map(|w| [w[0], w[1], w[2], w[3]]));
        }
        Ok(index)
    }

    pub fn grams2(&self) -> &HashSet<[Token; 2]> {
        &self.grams2
    }

    pub fn grams3(&self) -> &HashSet<[Token; 3]> {
        &self.grams3
    }

    pub fn grams4(&self) -> &HashSet<[Token; 4]> {
        &self.grams4
    }

    pub fn weights(&self) -> GramWeights {
        self.weights
    }

    /// Number of tokens in the corpus.
    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    /// Occurrence count per token.
    pub fn counts(&self) -> &BTreeMap<Token, u64> {
        &self.counts
    }

    /// Distinct tokens in `Ord` order.
    pub fn token_alphabet(&self) -> Vec<Token> {
        self.counts.keys().copied().collect()
    }

    /// `count / total` for `token`; zero for tokens absent from the corpus.
    pub fn probability(&self, token: &Token) -> f64 {
        self.counts
            .get(token)
            .map_or(0.0, |&n| n as f64 / self.total_tokens as f64)
    }

    /// Probability of every token in the alphabet, in alphabet order.
    pub fn prob_table(&self) -> Vec<(Token, f64)> {
        self.counts
            .iter()
            .map(|(&t, &n)| (t, n as f64 / self.total_tokens as f64))
            .collect()
    }

    /// Per-order match counts `[N2, N3, N4]` of `melody` against the gram sets.
    pub fn match_counts(&self, melody: &[Token]) -> [u64; 3] {
        let n2 = melody
            .windows(2)
            .filter(|w| self.grams2.contains(&[w[0], w[1]]))
            .count();
        let n3 = melody
            .windows(3)
            .filter(|w| self.grams3.contains(&[w[0], w[1], w[2]]))
            .count();
        let n4 = melody
            .windows(4)
            .filter(|w| self.grams4.contains(&[w[0], w[1], w[2], w[3]]))
            .count();
        [n2 as u64, n3 as u64, n4 as u64]
    }

    /// Similarity fitness using the precomputed gram sets.
    pub fn fitness(&self, melody: &[Token]) -> u64 {
        self.weights.combine(self.match_counts(melody))
    }
}

/// Similarity fitness by a direct scan: every melody window is compared
/// note by note against every window of every tune, once per n-gram order.
///
/// Gives the same value as [`CorpusIndex::fitness`]. The scan never stops
/// early, so its cost is proportional to the corpus size.
pub fn fitness_naive(melody: &[Token], corpus: &[Tune], weights: GramWeights) -> u64 {
    let mut counts = [0u64; 3];
    for (slot, n) in [2usize, 3, 4].into_iter().enumerate() {
        counts[slot] = melody
            .windows(n)
            .filter(|window| corpus.iter().map(|tune| occurrences(&tune.body, window)).sum::<usize>() > 0)
            .count() as u64;
    }
    weights.combine(counts)
}

fn occurrences(body: &[Token], window: &[Token]) -> usize {
    if body.len() < window.len() {
        return 0;
    }
    body.windows(window.len()).filter(|w| *w == window).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abc::{tokenize, Headers, Pitch};

    fn tune(id: &str, body: &str) -> Tune {
        Tune {
            id: id.into(),
            body: tokenize(body).unwrap(),
            headers: Headers::new(),
        }
    }

    fn toks(s: &str) -> Vec<Token> {
        tokenize(s).unwrap()
    }

    #[test]
    fn windows_of_a_single_tune() {
        let index = CorpusIndex::build(&[tune("a", "CDEF")]).unwrap();
        let g2: HashSet<_> = [["C", "D"], ["D", "E"], ["E", "F"]]
            .iter()
            .map(|w| [w[0].parse().unwrap(), w[1].parse().unwrap()])
            .collect();
        assert_eq!(index.grams2(), &g2);
        assert_eq!(index.grams3().len(), 2);
        assert!(index
            .grams3()
            .contains(&[Token::note(Pitch::D), Token::note(Pitch::E), Token::note(Pitch::F)]));
        assert_eq!(index.grams4().len(), 1);
    }

    #[test]
    fn windows_do_not_cross_tunes() {
        let index = CorpusIndex::build(&[tune("a", "CD"), tune("b", "EF")]).unwrap();
        assert_eq!(index.grams2().len(), 2);
        assert!(!index.grams2().contains(&[Token::note(Pitch::D), Token::note(Pitch::E)]));
        assert!(index.grams3().is_empty());
    }

    #[test]
    fn single_token_corpus() {
        let index = CorpusIndex::build(&[tune("a", "C")]).unwrap();
        assert!(index.grams2().is_empty() && index.grams3().is_empty() && index.grams4().is_empty());
        assert_eq!(index.prob_table(), vec![(Token::note(Pitch::C), 1.0)]);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert_eq!(CorpusIndex::build(&[]).unwrap_err(), IndexError::EmptyCorpus);
    }

    #[test]
    fn g_one_hundred_times_in_five_thousand() {
        // 100 G among 5000 tokens, the rest spread over other notes
        let mut body = String::new();
        for i in 0..5000 {
            body.push(if i % 50 == 0 {
                'G'
            } else {
                ['C', 'D', 'E', 'F', 'A'][i % 5]
            });
        }
        let index = CorpusIndex::build(&[tune("a", &body)]).unwrap();
        assert_eq!(index.total_tokens(), 5000);
        assert_eq!(index.probability(&Token::note(Pitch::G)), 0.02);
        let sum: f64 = index.prob_table().iter().map(|(_, p)| p).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn verbatim_copy_scores_234() {
        let corpus = [tune("a", "CDEFG")];
        let index = CorpusIndex::build(&corpus).unwrap();
        let melody = toks("CDEFG");
        assert_eq!(index.match_counts(&melody), [4, 3, 2]);
        assert_eq!(index.fitness(&melody), 234);
        assert_eq!(fitness_naive(&melody, &corpus, GramWeights::default()), 234);
        assert_eq!(index.fitness(&melody), GramWeights::default().upper_bound(5));
    }

    #[test]
    fn partial_overlap_scores_12() {
        let corpus = [tune("a", "CDEF")];
        let index = CorpusIndex::build(&corpus).unwrap();
        let melody = toks("CDEzz");
        assert_eq!(index.match_counts(&melody), [2, 1, 0]);
        assert_eq!(index.fitness(&melody), 12);
        assert_eq!(fitness_naive(&melody, &corpus, GramWeights::default()), 12);
    }

    #[test]
    fn no_overlap_scores_zero() {
        let corpus = [tune("a", "CDEF")];
        let index = CorpusIndex::build(&corpus).unwrap();
        let melody = toks("abcabc");
        assert_eq!(index.fitness(&melody), 0);
        assert_eq!(fitness_naive(&melody, &corpus, GramWeights::default()), 0);
    }

    #[test]
    fn repeated_windows_count_with_multiplicity() {
        let index = CorpusIndex::build(&[tune("a", "CD")]).unwrap();
        assert_eq!(index.fitness(&toks("CDCD")), 2);
    }

    #[test]
    fn short_melodies_use_available_terms() {
        let corpus = [tune("a", "CDEFG")];
        let index = CorpusIndex::build(&corpus).unwrap();
        assert_eq!(index.fitness(&toks("CDE")), 12);
        assert_eq!(index.fitness(&toks("C")), 0);
        assert_eq!(index.fitness(&[]), 0);
        assert_eq!(fitness_naive(&toks("CDE"), &corpus, GramWeights::default()), 12);
    }

    #[test]
    fn upper_bound_for_thirty() {
        assert_eq!(GramWeights::default().upper_bound(30), 29 + 280 + 2700);
        assert_eq!(GramWeights::default().upper_bound(2), 1);
        assert_eq!(GramWeights::default().upper_bound(0), 0);
    }
}
