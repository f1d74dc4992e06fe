//! Per-evaluation cost of the similarity fitness and of the surrogate, as a
//! function of corpus size and melody length.

use std::hint::black_box;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::abc::Tune;
use crate::corpus_index::{fitness_naive, CorpusIndex};
use crate::ga::{random_melody, Melody, TokenDistribution};
use crate::surrogate::SurrogateModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluator {
    Naive,
    Indexed,
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Corpus sizes to measure, as multiples of the base corpus.
    pub replications: Vec<usize>,
    pub melody_lengths: Vec<usize>,
    /// Melodies evaluated per timed batch.
    pub evaluations: usize,
    /// Timed batches per cell.
    pub batches: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            replications: vec![1, 2, 4],
            melody_lengths: vec![15, 30, 60],
            evaluations: 20,
            batches: 51,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub evaluator: Evaluator,
    pub corpus_tunes: usize,
    pub corpus_tokens: usize,
    pub melody_length: usize,
    /// Trimmed mean over batches of the mean time per evaluation.
    pub mean_ns: f64,
}

/// The corpus followed by `factor - 1` copies of it whose tune bodies are
/// shuffled note order, with distinct ids.
///
/// The token count scales exactly and the token frequencies stay the same.
/// Copies are shuffled rather than verbatim: a corpus that repeats itself
/// exactly lets the CPU predict the scan and understates its cost.
pub fn scale_corpus(tunes: &[Tune], factor: usize, seed: u64) -> Vec<Tune> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = tunes.to_vec();
    for copy in 1..factor {
        for t in tunes {
            let mut body = t.body.clone();
            body.shuffle(&mut rng);
            out.push(Tune {
                id: format!("{}@{copy}", t.id),
                body,
                headers: t.headers.clone(),
            });
        }
    }
    out
}

/// Mean time in nanoseconds per call of `eval` over one pass through `melodies`.
pub fn time_batch(melodies: &[Melody], eval: &mut dyn FnMut(&Melody) -> f64) -> f64 {
    let start = Instant::now();
    for m in melodies {
        black_box(eval(black_box(m)));
    }
    start.elapsed().as_nanos() as f64 / melodies.len().max(1) as f64
}

/// Mean of the middle 60% of the samples.
fn trimmed_mean(mut samples: Vec<f64>) -> f64 {
    samples.sort_by(f64::total_cmp);
    let cut = samples.len() / 5;
    let kept = &samples[cut..samples.len() - cut];
    kept.iter().sum::<f64>() / kept.len() as f64
}

/// A row to fill in, its evaluator, and the melodies it is timed on.
type Cell<'a> = (TimingRow, Box<dyn FnMut(&Melody) -> f64 + 'a>, &'a [Melody]);

/// Times every (evaluator, corpus size, melody length) cell.
///
/// Batches are short and interleaved across cells, round by round, so that
/// drifts in machine speed hit every cell alike. Each cell reports the
/// trimmed mean of its batches: a median would jump between the fast and slow
/// phases of a machine whose speed alternates.
pub fn bench_timing(
    tunes: &[Tune],
    distribution: &TokenDistribution,
    model: &SurrogateModel,
    config: &BenchConfig,
) -> Result<Vec<TimingRow>, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sets: Vec<(usize, Vec<Melody>)> = config
        .melody_lengths
        .iter()
        .map(|&len| {
            let ms = (0..config.evaluations)
                .map(|_| random_melody(distribution, len, &mut rng))
                .collect();
            (len, ms)
        })
        .collect();
    for (_, ms) in &sets {
        if let Some(m) = ms.first() {
            model.forward(m)?;
        }
    }
    let corpora = config
        .replications
        .iter()
        .map(|&factor| {
            let corpus = scale_corpus(tunes, factor, config.seed);
            let index = CorpusIndex::build(&corpus)?;
            Ok((corpus, index))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;

    let mut cells: Vec<Cell<'_>> = Vec::new();
    for (corpus, index) in &corpora {
        let corpus_tokens = corpus.iter().map(|t| t.body.len()).sum();
        let weights = index.weights();
        for (len, melodies) in &sets {
            let row = |evaluator| TimingRow {
                evaluator,
                corpus_tunes: corpus.len(),
                corpus_tokens,
                melody_length: *len,
                mean_ns: 0.0,
            };
            cells.push((
                row(Evaluator::Naive),
                Box::new(move |m| fitness_naive(m.tokens(), corpus, weights) as f64),
                melodies,
            ));
            cells.push((
                row(Evaluator::Indexed),
                Box::new(move |m| index.fitness(m.tokens()) as f64),
                melodies,
            ));
            cells.push((
                row(Evaluator::Surrogate),
                Box::new(move |m| model.forward(m).unwrap_or(f64::NAN)),
                melodies,
            ));
        }
    }

    // one untimed warm-up round
    let rounds = config.batches.max(1);
    let mut samples = vec![Vec::with_capacity(rounds); cells.len()];
    for round in 0..=rounds {
        for (cell, (_, eval, melodies)) in cells.iter_mut().enumerate() {
            let ns = time_batch(melodies, eval.as_mut());
            if round > 0 {
                samples[cell].push(ns);
            }
        }
    }
    Ok(cells
        .into_iter()
        .zip(samples)
        .map(|((row, _, _), s)| TimingRow {
            mean_ns: trimmed_mean(s),
            ..row
        })
        .collect())
}

/// CSV with a header row: `evaluator,corpus_tunes,corpus_tokens,melody_length,mean_ns`.
pub fn write_timing_csv(path: &Path, rows: &[TimingRow]) -> Result<(), PipelineError> {
    let io = |e: csv::Error| PipelineError::Io(path.to_path_buf(), e.into());
    let mut out = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        out.serialize(r).map_err(io)?;
    }
    out.flush().map_err(|e| PipelineError::Io(path.to_path_buf(), e))
}
