//! The genetic algorithm shared by the corpus-similarity run and the
//! surrogate-driven run.
//!
//! Each generation the two fittest melodies become the only parents. The
//! elite (best) melody survives unchanged and `population_size - 1` children
//! are bred by uniform crossover followed by per-gene mutation. Every melody
//! that is ever evaluated lands in the archive.

use std::io::{self, BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abc::{self, Token};

pub type FitnessError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum GaError {
    #[error("invalid GA configuration: {0}")]
    InvalidConfig(String),
    #[error("parents differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("fitness evaluation failed at iteration {iteration}: {source}")]
    Fitness {
        iteration: usize,
        #[source]
        source: FitnessError,
    },
    #[error("fitness returned non-finite value {value} at iteration {iteration}")]
    NonFiniteFitness { iteration: usize, value: f64 },
}

/// A fixed-length token sequence; the GA chromosome.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Melody(Vec<Token>);

impl Melody {
    pub fn new(tokens: Vec<Token>) -> Self {
        Melody(tokens)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// ABC body text.
    pub fn to_abc_body(&self) -> String {
        abc::render_body(&self.0)
    }

    pub fn from_abc_body(body: &str) -> Result<Melody, abc::AbcError> {
        abc::tokenize(body).map(Melody)
    }
}

impl From<Vec<Token>> for Melody {
    fn from(tokens: Vec<Token>) -> Self {
        Melody(tokens)
    }
}

/// Categorical distribution over tokens used to draw fresh genes.
#[derive(Debug, Clone)]
pub struct TokenDistribution {
    tokens: Vec<Token>,
    weights: WeightedIndex<f64>,
}

impl TokenDistribution {
    /// `table` holds `(token, probability)`; entries need not be normalized
    /// but must be non-negative with a positive total.
    pub fn new(table: &[(Token, f64)]) -> Result<Self, GaError> {
        let weights = WeightedIndex::new(table.iter().map(|(_, p)| *p))
            .map_err(|e| GaError::InvalidConfig(format!("bad token probabilities: {e}")))?;
        Ok(TokenDistribution {
            tokens: table.iter().map(|(t, _)| *t).collect(),
            weights,
        })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Token {
        self.tokens[self.weights.sample(rng)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub max_iterations: usize,
    pub population_size: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub melody_length: usize,
    pub rng_seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            max_iterations: 2000,
            population_size: 20,
            crossover_rate: 0.5,
            mutation_rate: 0.1,
            melody_length: 30,
            rng_seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), GaError> {
        if self.population_size < 2 {
            return Err(GaError::InvalidConfig("population_size must be at least 2".into()));
        }
        if self.melody_length == 0 {
            return Err(GaError::InvalidConfig("melody_length must be positive".into()));
        }
        for (name, rate) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(GaError::InvalidConfig(format!("{name} must lie in [0, 1], got {rate}")));
            }
        }
        Ok(())
    }

    /// Number of melodies a complete run evaluates.
    pub fn archive_size(&self) -> usize {
        self.population_size + self.max_iterations * (self.population_size - 1)
    }
}

/// One evaluated melody and the iteration that produced it (0 = initial population).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub iteration: usize,
    pub fitness: f64,
    pub melody: Melody,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaRun {
    pub best: Melody,
    pub best_fitness: f64,
    pub archive: Vec<ArchiveEntry>,
    /// Best fitness of the initial population followed by one entry per iteration.
    pub fitness_trace: Vec<f64>,
}

pub fn random_melody<R: Rng + ?Sized>(dist: &TokenDistribution, length: usize, rng: &mut R) -> Melody {
    Melody((0..length).map(|_| dist.sample(rng)).collect())
}

/// Indices of the fittest and second fittest members. Ties go to the lower index.
///
/// # Panics
/// If fewer than two fitness values are given.
pub fn select_parents(fitness: &[f64]) -> (usize, usize) {
    assert!(fitness.len() >= 2, "selection needs at least two members");
    let better = |a: usize, b: usize| fitness[a] > fitness[b] || (fitness[a] == fitness[b] && a < b);
    let (mut first, mut second) = if better(0, 1) { (0, 1) } else { (1, 0) };
    for i in 2..fitness.len() {
        if better(i, first) {
            second = first;
            first = i;
        } else if better(i, second) {
            second = i;
        }
    }
    (first, second)
}

/// Uniform crossover driven by an explicit stream of uniform draws in `[0, 1)`.
///
/// Gene `i` comes from `best1` when its draw is at least `1 - rate`, otherwise
/// from `best2`. At rate 0.5 this is a fair coin per gene.
pub fn crossover_with(
    best1: &Melody,
    best2: &Melody,
    rate: f64,
    mut draw: impl FnMut() -> f64,
) -> Result<Melody, GaError> {
    if best1.len() != best2.len() {
        return Err(GaError::LengthMismatch(best1.len(), best2.len()));
    }
    let threshold = 1.0 - rate;
    let genes = best1
        .0
        .iter()
        .zip(&best2.0)
        .map(|(&a, &b)| if draw() >= threshold { a } else { b })
        .collect();
    Ok(Melody(genes))
}

pub fn crossover<R: Rng + ?Sized>(best1: &Melody, best2: &Melody, rate: f64, rng: &mut R) -> Result<Melody, GaError> {
    crossover_with(best1, best2, rate, || rng.random::<f64>())
}

/// Replaces each gene, with probability `rate`, by a fresh draw from `dist`.
pub fn mutate<R: Rng + ?Sized>(child: &Melody, rate: f64, dist: &TokenDistribution, rng: &mut R) -> Melody {
    let genes = child
        .0
        .iter()
        .map(|&gene| {
            if rng.random::<f64>() < rate {
                dist.sample(rng)
            } else {
                gene
            }
        })
        .collect();
    Melody(genes)
}

/// Runs the GA with the generator seeded from `config.rng_seed`.
pub fn run_ga<F>(config: &GaConfig, dist: &TokenDistribution, fitness: F) -> Result<GaRun, GaError>
where
    F: Fn(&Melody) -> Result<f64, FitnessError>,
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let evaluate = |m: &Melody, iteration: usize| -> Result<f64, GaError> {
        let value = fitness(m).map_err(|source| GaError::Fitness { iteration, source })?;
        if !value.is_finite() {
            return Err(GaError::NonFiniteFitness { iteration, value });
        }
        Ok(value)
    };

    let mut archive = Vec::with_capacity(config.archive_size());
    let mut population: Vec<Melody> = (0..config.population_size)
        .map(|_| random_melody(dist, config.melody_length, &mut rng))
        .collect();
    let mut scores = population
        .iter()
        .map(|m| evaluate(m, 0))
        .collect::<Result<Vec<_>, _>>()?;
    for (m, &f) in population.iter().zip(&scores) {
        archive.push(ArchiveEntry {
            iteration: 0,
            fitness: f,
            melody: m.clone(),
        });
    }
    let mut fitness_trace = Vec::with_capacity(config.max_iterations + 1);
    fitness_trace.push(scores[select_parents(&scores).0]);

    for iteration in 1..=config.max_iterations {
        let (i1, i2) = select_parents(&scores);
        let best1 = population[i1].clone();
        let best2 = &population[i2];

        let mut next_population = Vec::with_capacity(config.population_size);
        let mut next_scores = Vec::with_capacity(config.population_size);
        next_population.push(best1.clone());
        next_scores.push(scores[i1]);
        for _ in 1..config.population_size {
            let child = crossover(&best1, best2, config.crossover_rate, &mut rng)?;
            let child = mutate(&child, config.mutation_rate, dist, &mut rng);
            let f = evaluate(&child, iteration)?;
            archive.push(ArchiveEntry {
                iteration,
                fitness: f,
                melody: child.clone(),
            });
            next_population.push(child);
            next_scores.push(f);
        }
        population = next_population;
        scores = next_scores;
        fitness_trace.push(scores[select_parents(&scores).0]);
    }

    let (best, _) = select_parents(&scores);
    Ok(GaRun {
        best: population[best].clone(),
        best_fitness: scores[best],
        archive,
        fitness_trace,
    })
}

/// Writes archive records, one per line: `iteration<TAB>fitness<TAB>abc body`.
///
/// Fitness uses Rust's shortest round-trip float formatting.
pub fn write_archive<W: Write>(mut out: W, archive: &[ArchiveEntry]) -> io::Result<()> {
    for e in archive {
        writeln!(out, "{}\t{}\t{}", e.iteration, e.fitness, e.melody.to_abc_body())?;
    }
    Ok(())
}

pub fn read_archive<R: BufRead>(input: R) -> io::Result<Vec<ArchiveEntry>> {
    let bad = |line: usize, msg: String| io::Error::new(io::ErrorKind::InvalidData, format!("line {line}: {msg}"));
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let (Some(it), Some(fit), Some(body)) = (fields.next(), fields.next(), fields.next()) else {
            return Err(bad(n + 1, "expected three tab-separated fields".into()));
        };
        out.push(ArchiveEntry {
            iteration: it.parse().map_err(|e| bad(n + 1, format!("{e}")))?,
            fitness: fit.parse().map_err(|e| bad(n + 1, format!("{e}")))?,
            melody: Melody::from_abc_body(body).map_err(|e| bad(n + 1, e.to_string()))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abc::Pitch;

    fn dist(table: &[(&str, f64)]) -> TokenDistribution {
        let table: Vec<(Token, f64)> = table.iter().map(|(t, p)| (t.parse().unwrap(), *p)).collect();
        TokenDistribution::new(&table).unwrap()
    }

    fn melody(s: &str) -> Melody {
        Melody::from_abc_body(s).unwrap()
    }

    #[test]
    fn degenerate_distribution() {
        let d = dist(&[("C", 1.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(random_melody(&d, 5, &mut rng), melody("CCCCC"));
    }

    #[test]
    fn random_melody_replays_with_seed() {
        let d = dist(&[("C", 0.5), ("D", 0.3), ("E", 0.2)]);
        let a = random_melody(&d, 30, &mut ChaCha8Rng::seed_from_u64(9));
        let b = random_melody(&d, 30, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn bad_distribution_is_rejected() {
        let table = [(Token::note(Pitch::C), 0.0)];
        assert!(TokenDistribution::new(&table).is_err());
        assert!(TokenDistribution::new(&[]).is_err());
    }

    #[test]
    fn selection_picks_top_two() {
        assert_eq!(select_parents(&[3.0, 9.0, 5.0]), (1, 2));
        assert_eq!(select_parents(&[7.0, 7.0]), (0, 1));
        assert_eq!(select_parents(&[1.0, 2.0, 2.0, 0.0]), (1, 2));
        assert_eq!(select_parents(&[5.0, 1.0, 5.0]), (0, 2));
    }

    #[test]
    fn crossover_with_known_draws() {
        let a = melody("CDE");
        let b = melody("FGA");
        let mut draws = [0.7, 0.2, 0.9].into_iter();
        let child = crossover_with(&a, &b, 0.5, || draws.next().unwrap()).unwrap();
        assert_eq!(child, melody("CGE"));
    }

    #[test]
    fn crossover_boundary_draw_goes_to_best1() {
        let a = melody("C");
        let b = melody("D");
        assert_eq!(crossover_with(&a, &b, 0.5, || 0.5).unwrap(), a);
    }

    #[test]
    fn crossover_replays_the_seeded_generator() {
        let a = melody("CDEFGAB");
        let b = melody("cdefgab");
        let mut oracle = ChaCha8Rng::seed_from_u64(77);
        let expected: Vec<Token> = (0..7)
            .map(|i| {
                if oracle.random::<f64>() >= 0.5 {
                    a.tokens()[i]
                } else {
                    b.tokens()[i]
                }
            })
            .collect();
        let child = crossover(&a, &b, 0.5, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        assert_eq!(child.tokens(), &expected[..]);
    }

    #[test]
    fn crossover_of_identical_parents_is_identity() {
        let a = melody("CDEFGABc");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            assert_eq!(crossover(&a, &a, 0.5, &mut rng).unwrap(), a);
        }
    }

    #[test]
    fn crossover_rejects_length_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            crossover(&melody("CD"), &melody("C"), 0.5, &mut rng),
            Err(GaError::LengthMismatch(2, 1))
        ));
    }

    #[test]
    fn mutation_extremes() {
        let d = dist(&[("z", 1.0)]);
        let m = melody("CDEFGABc");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(mutate(&m, 0.0, &d, &mut rng), m);
        assert_eq!(mutate(&m, 1.0, &d, &mut rng), melody("zzzzzzzz"));
    }

    #[test]
    fn config_validation() {
        let mut c = GaConfig::default();
        assert!(c.validate().is_ok());
        c.population_size = 1;
        assert!(c.validate().is_err());
        c = GaConfig {
            mutation_rate: 1.5,
            ..GaConfig::default()
        };
        assert!(c.validate().is_err());
        c = GaConfig {
            melody_length: 0,
            ..GaConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn constant_fitness_bookkeeping() {
        let d = dist(&[("C", 0.5), ("D", 0.5)]);
        let config = GaConfig {
            max_iterations: 7,
            population_size: 5,
            melody_length: 6,
            ..GaConfig::default()
        };
        let run = run_ga(&config, &d, |_| Ok(0.0)).unwrap();
        assert_eq!(run.best_fitness, 0.0);
        assert_eq!(run.archive.len(), 5 + 7 * 4);
        assert_eq!(run.archive.len(), config.archive_size());
        assert_eq!(run.fitness_trace.len(), 8);
        assert!(run.archive.iter().all(|e| e.melody.len() == 6));
        assert_eq!(run.archive.iter().filter(|e| e.iteration == 0).count(), 5);
    }

    #[test]
    fn fitness_errors_carry_the_iteration() {
        let d = dist(&[("C", 0.5), ("D", 0.5)]);
        let config = GaConfig {
            max_iterations: 3,
            population_size: 4,
            melody_length: 4,
            ..GaConfig::default()
        };
        let calls = std::cell::Cell::new(0);
        let err = run_ga(&config, &d, |_| {
            calls.set(calls.get() + 1);
            if calls.get() > 6 {
                Err("boom".into())
            } else {
                Ok(1.0)
            }
        })
        .unwrap_err();
        // 4 initial evaluations, then 3 children per iteration: the 7th call is in iteration 1
        assert!(matches!(err, GaError::Fitness { iteration: 1, .. }), "{err}");
    }

    #[test]
    fn nan_fitness_is_an_error() {
        let d = dist(&[("C", 1.0)]);
        let config = GaConfig {
            max_iterations: 1,
            population_size: 2,
            melody_length: 2,
            ..GaConfig::default()
        };
        assert!(matches!(
            run_ga(&config, &d, |_| Ok(f64::NAN)),
            Err(GaError::NonFiniteFitness { iteration: 0, .. })
        ));
    }

    #[test]
    fn archive_text_round_trip() {
        let archive = vec![
            ArchiveEntry {
                iteration: 0,
                fitness: 0.1 + 0.2,
                melody: melody("^c'2 z G, _B,,4 CDEFGABc"),
            },
            ArchiveEntry {
                iteration: 12,
                fitness: 1234.0,
                melody: melody("z4"),
            },
        ];
        let mut buf = Vec::new();
        write_archive(&mut buf, &archive).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("0\t0.30000000000000004\t^c'2zG,_B,,4CDEF | GABc\n"));
        assert_eq!(read_archive(&buf[..]).unwrap(), archive);
        assert!(read_archive(&b"1\t2\n"[..]).is_err());
    }
}
