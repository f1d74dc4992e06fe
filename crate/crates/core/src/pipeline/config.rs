use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::ga::GaConfig;
use crate::surrogate::TrainConfig;

/// Which implementation computes the corpus-similarity fitness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessMode {
    /// Scan the corpus note by note for every evaluation.
    #[default]
    Naive,
    /// Look windows up in precomputed n-gram sets.
    Indexed,
}

/// Where the scores used for training come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerMode {
    /// Scores already collected in the store (human raters).
    #[default]
    Store,
    /// The built-in deterministic similarity scorer.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub corpus_path: PathBuf,
    pub store_path: PathBuf,
    pub model_path: PathBuf,
    pub out_dir: PathBuf,
    pub phase1: GaConfig,
    pub phase3: GaConfig,
    pub train: TrainConfig,
    pub fitness: FitnessMode,
    pub scorer: ScorerMode,
    /// Melodies need at least this many scores to enter the training set.
    pub min_scores: usize,
    /// Upper bound on how many unscored melodies the synthetic scorer rates;
    /// `None` rates all of them.
    pub synthetic_budget: Option<usize>,
    pub output_count: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus_path: PathBuf::from("fixtures/corpus"),
            store_path: PathBuf::from("out/store.jsonl"),
            model_path: PathBuf::from("out/model.json"),
            out_dir: PathBuf::from("out"),
            phase1: GaConfig::default(),
            phase3: GaConfig {
                max_iterations: 500,
                ..GaConfig::default()
            },
            train: TrainConfig::default(),
            fitness: FitnessMode::Naive,
            scorer: ScorerMode::Store,
            min_scores: 1,
            synthetic_budget: None,
            output_count: 6,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Io(path.to_path_buf(), e))?;
        toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("pipeline config always serializes")
    }

    /// Derives every random seed in the pipeline from one value.
    pub fn set_seed(&mut self, seed: u64) {
        self.phase1.rng_seed = seed;
        self.train.seed = seed;
        self.phase3.rng_seed = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.phase1.validate()?;
        self.phase3.validate()?;
        self.train.validate()?;
        if self.output_count == 0 {
            return Err(PipelineError::Config("output_count must be positive".into()));
        }
        if self.phase1.melody_length != self.phase3.melody_length {
            return Err(PipelineError::Config(
                "phase1 and phase3 must use the same melody_length".into(),
            ));
        }
        Ok(())
    }
}
