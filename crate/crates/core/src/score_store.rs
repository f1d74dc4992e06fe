//! Archived melodies and the human scores collected for them.
//!
//! # File format
//!
//! One JSON object per line:
//!
//! ```text
//! {"id":"<16 hex chars>","abc":"<ABC body>","scores":[<f64>, ...]}
//! ```
//!
//! * `id`: first 16 hex digits of the SHA-256 of `abc`; checked on load.
//! * `abc`: the melody as an ABC body (see [`crate::abc::render_body`]).
//! * `scores`: every score recorded so far, in submission order, each in `[0, 100]`.
//!
//! A store opened on a file appends one full record each time a melody is
//! added or scored. When the same id appears on several lines the last line
//! wins, so the file never needs rewriting in place. [`ScoreStore::export`]
//! writes a compacted copy with one line per melody.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ga::Melody;

pub const MIN_SCORE: f64 = 0.0;
pub const MAX_SCORE: f64 = 100.0;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage error on {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt store file {path}, line {line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("unknown melody {0}")]
    UnknownMelody(String),
    #[error("score {0} outside [0, 100]")]
    ScoreOutOfRange(f64),
}

/// Content hash of a melody's token sequence.
pub fn melody_id(melody: &Melody) -> String {
    id_of_body(&melody.to_abc_body())
}

fn id_of_body(body: &str) -> String {
    let digest = Sha256::digest(body.as_bytes());
    hex::encode(&digest[..8])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredMelody {
    pub melody_id: String,
    pub melody: Melody,
    pub scores: Vec<f64>,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Record {
    melody: Melody,
    scores: Vec<f64>,
}

impl Record {
    fn mean(&self) -> f64 {
        if self.scores.is_empty() {
            return 0.0;
        }
        let mean = self.scores.iter().sum::<f64>() / self.scores.len() as f64;
        mean.clamp(MIN_SCORE, MAX_SCORE)
    }

    fn view(&self, id: &str) -> ScoredMelody {
        ScoredMelody {
            melody_id: id.to_string(),
            melody: self.melody.clone(),
            scores: self.scores.clone(),
            mean_score: self.mean(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Line {
    id: String,
    abc: String,
    scores: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct ScoreStore {
    records: BTreeMap<String, Record>,
    log: Option<(PathBuf, BufWriter<File>)>,
}

impl ScoreStore {
    /// A store that lives only in memory.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a store backed by `path`.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let storage = |source| StoreError::Storage {
            path: path.to_path_buf(),
            source,
        };
        let mut records = BTreeMap::new();
        if path.exists() {
            read_records(path, &mut records)?;
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(storage)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(storage)?;
        Ok(ScoreStore {
            records,
            log: Some((path.to_path_buf(), BufWriter::new(file))),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.log.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Adds a melody if absent. Returns its id either way.
    pub fn put_melody(&mut self, melody: &Melody) -> Result<String, StoreError> {
        let id = melody_id(melody);
        if !self.records.contains_key(&id) {
            self.records.insert(
                id.clone(),
                Record {
                    melody: melody.clone(),
                    scores: Vec::new(),
                },
            );
            self.append(&id)?;
        }
        Ok(id)
    }

    /// Adds many melodies, flushing the file once at the end.
    pub fn put_melodies<'a>(&mut self, melodies: impl IntoIterator<Item = &'a Melody>) -> Result<usize, StoreError> {
        let before = self.len();
        for m in melodies {
            let id = melody_id(m);
            if !self.records.contains_key(&id) {
                self.records.insert(
                    id.clone(),
                    Record {
                        melody: m.clone(),
                        scores: Vec::new(),
                    },
                );
                self.write_line(&id)?;
            }
        }
        self.flush()?;
        Ok(self.len() - before)
    }

    pub fn add_score(&mut self, melody_id: &str, score: f64) -> Result<ScoredMelody, StoreError> {
        if !(MIN_SCORE..=MAX_SCORE).contains(&score) {
            return Err(StoreError::ScoreOutOfRange(score));
        }
        let record = self
            .records
            .get_mut(melody_id)
            .ok_or_else(|| StoreError::UnknownMelody(melody_id.to_string()))?;
        record.scores.push(score);
        let view = record.view(melody_id);
        self.append(melody_id)?;
        Ok(view)
    }

    pub fn get(&self, melody_id: &str) -> Option<ScoredMelody> {
        self.records.get(melody_id).map(|r| r.view(melody_id))
    }

    /// All melodies in id order.
    pub fn iter(&self) -> impl Iterator<Item = ScoredMelody> + '_ {
        self.records.iter().map(|(id, r)| r.view(id))
    }

    /// Melodies with at least `min_scores` scores paired with their mean, in id order.
    pub fn training_set(&self, min_scores: usize) -> Vec<(Melody, f64)> {
        self.records
            .values()
            .filter(|r| !r.scores.is_empty() && r.scores.len() >= min_scores)
            .map(|r| (r.melody.clone(), r.mean()))
            .collect()
    }

    /// Up to `limit` melodies with the fewest scores; ties by id.
    pub fn pending(&self, limit: usize) -> Vec<ScoredMelody> {
        let mut ids: Vec<(&String, usize)> = self.records.iter().map(|(id, r)| (id, r.scores.len())).collect();
        ids.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        ids.into_iter()
            .take(limit)
            .map(|(id, _)| self.records[id].view(id))
            .collect()
    }

    /// Writes a compacted copy of the store to `path`.
    pub fn export(&self, path: &Path) -> Result<(), StoreError> {
        let storage = |source| StoreError::Storage {
            path: path.to_path_buf(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(storage)?);
        for (id, r) in &self.records {
            write_line(&mut out, id, r).map_err(storage)?;
        }
        out.flush().map_err(storage)
    }

    /// Merges every record of a store file into this store; scores are appended.
    /// Returns the number of scores imported.
    pub fn import(&mut self, path: &Path) -> Result<usize, StoreError> {
        let mut incoming = BTreeMap::new();
        read_records(path, &mut incoming)?;
        let mut imported = 0;
        for (id, r) in incoming {
            let entry = self.records.entry(id.clone()).or_insert_with(|| Record {
                melody: r.melody,
                scores: Vec::new(),
            });
            imported += r.scores.len();
            entry.scores.extend(r.scores);
            self.write_line(&id)?;
        }
        self.flush()?;
        Ok(imported)
    }

    fn append(&mut self, id: &str) -> Result<(), StoreError> {
        self.write_line(id)?;
        self.flush()
    }

    fn write_line(&mut self, id: &str) -> Result<(), StoreError> {
        if let Some((path, out)) = self.log.as_mut() {
            write_line(out, id, &self.records[id]).map_err(|source| StoreError::Storage {
                path: path.clone(),
                source,
            })?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<(), StoreError> {
        if let Some((path, out)) = self.log.as_mut() {
            out.flush().map_err(|source| StoreError::Storage {
                path: path.clone(),
                source,
            })?;
        }
        Ok(())
    }
}

fn write_line<W: Write>(out: &mut W, id: &str, record: &Record) -> io::Result<()> {
    let line = Line {
        id: id.to_string(),
        abc: record.melody.to_abc_body(),
        scores: record.scores.clone(),
    };
    serde_json::to_writer(&mut *out, &line)?;
    out.write_all(b"\n")
}

fn read_records(path: &Path, records: &mut BTreeMap<String, Record>) -> Result<(), StoreError> {
    let storage = |source| StoreError::Storage {
        path: path.to_path_buf(),
        source,
    };
    let corrupt = |line: usize, reason: String| StoreError::Corrupt {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let reader = BufReader::new(File::open(path).map_err(storage)?);
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(storage)?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| corrupt(n + 1, e.to_string()))?;
        let melody = Melody::from_abc_body(&parsed.abc).map_err(|e| corrupt(n + 1, e.to_string()))?;
        let id = melody_id(&melody);
        if id != parsed.id {
            return Err(corrupt(
                n + 1,
                format!("id {} does not match melody hash {id}", parsed.id),
            ));
        }
        if let Some(bad) = parsed.scores.iter().find(|s| !(MIN_SCORE..=MAX_SCORE).contains(*s)) {
            return Err(corrupt(n + 1, format!("score {bad} outside [0, 100]")));
        }
        records.insert(
            id,
            Record {
                melody,
                scores: parsed.scores,
            },
        );
    }
    Ok(())
}

/// A store shared between threads: one writer at a time, readers see the
/// last completed write.
#[derive(Debug, Default)]
pub struct SharedStore(RwLock<ScoreStore>);

impl SharedStore {
    pub fn new(store: ScoreStore) -> Self {
        SharedStore(RwLock::new(store))
    }

    pub fn read(&self) -> RwLockReadGuard<'_, ScoreStore> {
        self.0.read().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, ScoreStore> {
        self.0.write().unwrap_or_else(|poisoned| poisoned.into_inner())
    }
}
