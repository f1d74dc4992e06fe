//! The three stages end to end: corpus-similarity GA, surrogate training on
//! collected scores, and the surrogate-driven GA.

mod bench;
mod config;
mod synthetic;

use std::collections::{BTreeSet, HashSet};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::{info, warn};
use thiserror::Error;

pub use bench::{bench_timing, scale_corpus, time_batch, write_timing_csv, BenchConfig, Evaluator, TimingRow};
pub use config::{FitnessMode, PipelineConfig, ScorerMode};
pub use synthetic::SyntheticScorer;

use crate::abc::{self, Corpus, CorpusError, Headers, Token};
use crate::corpus_index::{fitness_naive, CorpusIndex, IndexError};
use crate::ga::{self, GaConfig, GaError, GaRun, Melody, TokenDistribution};
use crate::score_store::{ScoreStore, StoreError};
use crate::surrogate::{SurrogateError, SurrogateModel, TrainReport};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Ga(#[from] GaError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error("no melody has at least {min_scores} score(s); score some melodies first")]
    InsufficientScores { min_scores: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error on {0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
}

/// A loaded corpus with its index and the token distribution derived from it.
#[derive(Debug, Clone)]
pub struct CorpusContext {
    pub corpus: Corpus,
    pub index: CorpusIndex,
    pub distribution: TokenDistribution,
}

impl CorpusContext {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let corpus = abc::load_corpus(path)?;
        for skip in &corpus.skipped {
            warn!("skipped {skip}");
        }
        Self::from_corpus(corpus)
    }

    pub fn from_corpus(corpus: Corpus) -> Result<Self, PipelineError> {
        let index = CorpusIndex::build(&corpus.tunes)?;
        let distribution = TokenDistribution::new(&index.prob_table())?;
        Ok(CorpusContext {
            corpus,
            index,
            distribution,
        })
    }

    /// Similarity fitness computed the configured way.
    pub fn fitness(&self, mode: FitnessMode, melody: &Melody) -> u64 {
        match mode {
            FitnessMode::Naive => fitness_naive(melody.tokens(), &self.corpus.tunes, self.index.weights()),
            FitnessMode::Indexed => self.index.fitness(melody.tokens()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Phase1Report {
    pub run: GaRun,
    /// Melodies newly added to the store.
    pub stored: usize,
}

/// Runs the corpus-similarity GA and archives every evaluated melody in `store`.
pub fn phase1(
    config: &PipelineConfig,
    ctx: &CorpusContext,
    store: &mut ScoreStore,
) -> Result<Phase1Report, PipelineError> {
    config.phase1.validate()?;
    let mode = config.fitness;
    info!(
        "phase 1: {} iterations, population {}, {:?} fitness",
        config.phase1.max_iterations, config.phase1.population_size, mode
    );
    let run = ga::run_ga(&config.phase1, &ctx.distribution, |m| Ok(ctx.fitness(mode, m) as f64))?;
    let stored = store.put_melodies(run.archive.iter().map(|e| &e.melody))?;
    info!(
        "phase 1: best fitness {}, {} new melodies stored",
        run.best_fitness, stored
    );
    Ok(Phase1Report { run, stored })
}

/// Rates unscored melodies with the synthetic scorer when configured to.
pub fn apply_scorer(
    config: &PipelineConfig,
    ctx: &CorpusContext,
    store: &mut ScoreStore,
) -> Result<usize, PipelineError> {
    match config.scorer {
        ScorerMode::Store => Ok(0),
        ScorerMode::Synthetic => {
            let n = SyntheticScorer::new(&ctx.index).score_store(store, config.synthetic_budget)?;
            info!("synthetic scorer rated {n} melodies");
            Ok(n)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Phase2Report {
    pub model: SurrogateModel,
    pub report: TrainReport,
    pub training_examples: usize,
}

/// Trains a fresh surrogate on the store's averaged scores.
///
/// The model alphabet is the corpus alphabet plus any other token found in
/// the training melodies, so that every melody phase 3 can generate is encodable.
pub fn phase2(config: &PipelineConfig, alphabet: &[Token], store: &ScoreStore) -> Result<Phase2Report, PipelineError> {
    train_surrogate(config, alphabet, store.training_set(config.min_scores))
}

/// [`phase2`] on a training set taken beforehand, so that no store lock is
/// held while training.
pub fn train_surrogate(
    config: &PipelineConfig,
    alphabet: &[Token],
    data: Vec<(Melody, f64)>,
) -> Result<Phase2Report, PipelineError> {
    config.train.validate()?;
    if data.is_empty() {
        return Err(PipelineError::InsufficientScores {
            min_scores: config.min_scores,
        });
    }
    let mut tokens: BTreeSet<Token> = alphabet.iter().copied().collect();
    for (m, _) in &data {
        tokens.extend(m.tokens().iter().copied());
    }
    info!(
        "phase 2: training on {} melodies, hidden {}, {} epochs",
        data.len(),
        config.train.hidden_size,
        config.train.epochs
    );
    let initial = SurrogateModel::init(tokens.into_iter().collect(), &config.train);
    let (model, report) = initial.train(&data, &config.train)?;
    info!("phase 2: final mse {:.4}", report.final_mse());
    Ok(Phase2Report {
        model,
        report,
        training_examples: data.len(),
    })
}

/// Saves the model and writes the loss trace as `epoch,mse[,holdout_mse]` CSV.
pub fn save_phase2(config: &PipelineConfig, result: &Phase2Report) -> Result<PathBuf, PipelineError> {
    result.model.save(&config.model_path)?;
    fs::create_dir_all(&config.out_dir).map_err(|e| PipelineError::Io(config.out_dir.clone(), e))?;
    let path = config.out_dir.join("loss_trace.csv");
    let csv_err = |e: csv::Error| PipelineError::Io(path.clone(), e.into());
    let mut out = csv::Writer::from_path(&path).map_err(csv_err)?;
    let holdout = result.report.holdout_trace.as_ref();
    if holdout.is_some() {
        out.write_record(["epoch", "mse", "holdout_mse"]).map_err(csv_err)?;
    } else {
        out.write_record(["epoch", "mse"]).map_err(csv_err)?;
    }
    for (epoch, mse) in result.report.loss_trace.iter().enumerate() {
        let mut row = vec![epoch.to_string(), mse.to_string()];
        if let Some(h) = holdout {
            row.push(h[epoch].to_string());
        }
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush().map_err(|e| PipelineError::Io(path.clone(), e))?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct Phase3Report {
    pub run: GaRun,
    /// The top distinct archive melodies with their predicted scores, best first.
    pub selected: Vec<(Melody, f64)>,
}

/// Runs the GA with the surrogate as fitness and picks the best distinct
/// melodies of the whole archive.
pub fn phase3(
    config: &PipelineConfig,
    ctx: &CorpusContext,
    model: &SurrogateModel,
) -> Result<Phase3Report, PipelineError> {
    config.phase3.validate()?;
    info!(
        "phase 3: {} iterations with surrogate fitness",
        config.phase3.max_iterations
    );
    let fitness = model.as_fitness();
    let run = ga::run_ga(&config.phase3, &ctx.distribution, |m| fitness(m).map_err(Into::into))?;
    let selected = top_distinct(&run, config.output_count);
    info!(
        "phase 3: best predicted score {:.2}, {} melodies selected",
        run.best_fitness,
        selected.len()
    );
    Ok(Phase3Report { run, selected })
}

/// The `count` highest-fitness distinct melodies of the archive. Ties keep archive order.
pub fn top_distinct(run: &GaRun, count: usize) -> Vec<(Melody, f64)> {
    let mut order: Vec<usize> = (0..run.archive.len()).collect();
    order.sort_by(|&a, &b| {
        run.archive[b]
            .fitness
            .total_cmp(&run.archive[a].fitness)
            .then(a.cmp(&b))
    });
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    for i in order {
        let entry = &run.archive[i];
        if seen.insert(&entry.melody) {
            out.push((entry.melody.clone(), entry.fitness));
            if out.len() == count {
                break;
            }
        }
    }
    out
}

/// Writes each selected melody as `melody_NN.abc` in `dir`.
pub fn write_melodies(dir: &Path, melodies: &[(Melody, f64)]) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::Io(dir.to_path_buf(), e))?;
    let mut paths = Vec::with_capacity(melodies.len());
    for (n, (melody, score)) in melodies.iter().enumerate() {
        let mut headers = Headers::minimal();
        headers.set('X', (n + 1).to_string());
        headers.set('T', format!("Generated melody {} (predicted score {score:.1})", n + 1));
        let path = dir.join(format!("melody_{:02}.abc", n + 1));
        fs::write(&path, abc::render(melody.tokens(), &headers)).map_err(|e| PipelineError::Io(path.clone(), e))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Writes a GA archive in the line format of [`ga::write_archive`].
pub fn write_archive_file(path: &Path, run: &GaRun) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| PipelineError::Io(parent.to_path_buf(), e))?;
    }
    let file = File::create(path).map_err(|e| PipelineError::Io(path.to_path_buf(), e))?;
    ga::write_archive(BufWriter::new(file), &run.archive).map_err(|e| PipelineError::Io(path.to_path_buf(), e))
}

/// Mean fitness of `count` random melodies drawn from the corpus distribution.
pub fn random_baseline(
    ctx: &CorpusContext,
    ga: &GaConfig,
    count: usize,
    seed: u64,
    mut score: impl FnMut(&Melody) -> f64,
) -> f64 {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = (0..count)
        .map(|_| score(&ga::random_melody(&ctx.distribution, ga.melody_length, &mut rng)))
        .sum();
    total / count.max(1) as f64
}
