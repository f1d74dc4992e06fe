//! A restricted subset of ABC notation: single-voice melodies built from
//! plain note events and rests.
//!
//! The grammar for one note event is
//!
//! ```text
//! token        := accidental? pitch octave-marks* duration?
//! accidental   := '^' | '_'
//! pitch        := 'A'..'G' | 'a'..'g' | 'z'
//! octave-marks := "'"{0,2} (lowercase only) | ","{0,2} (uppercase only)
//! duration     := '1' | '2' | '3' | '4'          (absent means 1)
//! ```
//!
//! Bar lines, repeat marks, first/second ending markers, whitespace and `%`
//! comments are skipped. Everything else (chords, ties, grace notes, inline
//! fields, slurs, fractional durations, ...) is rejected.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AbcError {
    #[error("unsupported construct at position {position}: {snippet:?}")]
    UnsupportedConstruct { position: usize, snippet: String },
    #[error("empty token text")]
    Empty,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no tune could be parsed from {0}")]
    EmptyCorpus(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Accidental {
    None,
    Sharp,
    Flat,
}

/// Pitch letter as written. Uppercase letters sit an octave below lowercase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pitch {
    C,
    D,
    E,
    F,
    G,
    A,
    B,
    LowerC,
    LowerD,
    LowerE,
    LowerF,
    LowerG,
    LowerA,
    LowerB,
    Rest,
}

impl Pitch {
    pub const ALL: [Pitch; 15] = [
        Pitch::C,
        Pitch::D,
        Pitch::E,
        Pitch::F,
        Pitch::G,
        Pitch::A,
        Pitch::B,
        Pitch::LowerC,
        Pitch::LowerD,
        Pitch::LowerE,
        Pitch::LowerF,
        Pitch::LowerG,
        Pitch::LowerA,
        Pitch::LowerB,
        Pitch::Rest,
    ];

    fn from_char(c: char) -> Option<Pitch> {
        Some(match c {
            'C' => Pitch::C,
            'D' => Pitch::D,
            'E' => Pitch::E,
            'F' => Pitch::F,
            'G' => Pitch::G,
            'A' => Pitch::A,
            'B' => Pitch::B,
            'c' => Pitch::LowerC,
            'd' => Pitch::LowerD,
            'e' => Pitch::LowerE,
            'f' => Pitch::LowerF,
            'g' => Pitch::LowerG,
            'a' => Pitch::LowerA,
            'b' => Pitch::LowerB,
            'z' => Pitch::Rest,
            _ => return None,
        })
    }

    fn as_char(self) -> char {
        match self {
            Pitch::C => 'C',
            Pitch::D => 'D',
            Pitch::E => 'E',
            Pitch::F => 'F',
            Pitch::G => 'G',
            Pitch::A => 'A',
            Pitch::B => 'B',
            Pitch::LowerC => 'c',
            Pitch::LowerD => 'd',
            Pitch::LowerE => 'e',
            Pitch::LowerF => 'f',
            Pitch::LowerG => 'g',
            Pitch::LowerA => 'a',
            Pitch::LowerB => 'b',
            Pitch::Rest => 'z',
        }
    }

    pub fn is_lowercase(self) -> bool {
        matches!(
            self,
            Pitch::LowerC
                | Pitch::LowerD
                | Pitch::LowerE
                | Pitch::LowerF
                | Pitch::LowerG
                | Pitch::LowerA
                | Pitch::LowerB
        )
    }

    pub fn is_rest(self) -> bool {
        self == Pitch::Rest
    }
}

/// One note event or rest.
///
/// Fields are private so that every value satisfies the grammar: rests carry
/// no accidental or octave marks, `'` only follows lowercase letters, `,` only
/// follows uppercase ones, and durations are in `1..=4` unit lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Token {
    pitch: Pitch,
    octave_shift: i8,
    accidental: Accidental,
    duration: u8,
}

impl Token {
    pub const MAX_OCTAVE_MARKS: i8 = 2;
    pub const MAX_DURATION: u8 = 4;

    /// Returns `None` when the combination is outside the grammar.
    pub fn new(accidental: Accidental, pitch: Pitch, octave_shift: i8, duration: u8) -> Option<Token> {
        if !(1..=Self::MAX_DURATION).contains(&duration) {
            return None;
        }
        if pitch.is_rest() {
            if accidental != Accidental::None || octave_shift != 0 {
                return None;
            }
        } else if pitch.is_lowercase() {
            if !(0..=Self::MAX_OCTAVE_MARKS).contains(&octave_shift) {
                return None;
            }
        } else if !(-Self::MAX_OCTAVE_MARKS..=0).contains(&octave_shift) {
            return None;
        }
        Some(Token {
            pitch,
            octave_shift,
            accidental,
            duration,
        })
    }

    /// A plain note of unit duration.
    pub fn note(pitch: Pitch) -> Token {
        Token::new(Accidental::None, pitch, 0, 1).expect("plain notes are always valid")
    }

    pub fn rest(duration: u8) -> Option<Token> {
        Token::new(Accidental::None, Pitch::Rest, 0, duration)
    }

    pub fn pitch(&self) -> Pitch {
        self.pitch
    }

    pub fn accidental(&self) -> Accidental {
        self.accidental
    }

    pub fn octave_shift(&self) -> i8 {
        self.octave_shift
    }

    pub fn duration(&self) -> u8 {
        self.duration
    }

    /// Every token the grammar admits, in `Ord` order.
    pub fn all() -> Vec<Token> {
        let mut out = Vec::new();
        for pitch in Pitch::ALL {
            for octave in -Self::MAX_OCTAVE_MARKS..=Self::MAX_OCTAVE_MARKS {
                for accidental in [Accidental::None, Accidental::Sharp, Accidental::Flat] {
                    for duration in 1..=Self::MAX_DURATION {
                        if let Some(t) = Token::new(accidental, pitch, octave, duration) {
                            out.push(t);
                        }
                    }
                }
            }
        }
        out.sort();
        out
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.accidental {
            Accidental::None => {}
            Accidental::Sharp => f.write_str("^")?,
            Accidental::Flat => f.write_str("_")?,
        }
        write!(f, "{}", self.pitch.as_char())?;
        let mark = if self.octave_shift > 0 { "'" } else { "," };
        for _ in 0..self.octave_shift.unsigned_abs() {
            f.write_str(mark)?;
        }
        if self.duration != 1 {
            write!(f, "{}", self.duration)?;
        }
        Ok(())
    }
}

impl FromStr for Token {
    type Err = AbcError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let chars: Vec<char> = s.chars().collect();
        if chars.is_empty() {
            return Err(AbcError::Empty);
        }
        let (token, end) = scan_token(&chars, 0)?;
        if end != chars.len() {
            return Err(unsupported(&chars, end));
        }
        Ok(token)
    }
}

impl TryFrom<String> for Token {
    type Error = AbcError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Token> for String {
    fn from(t: Token) -> String {
        t.to_string()
    }
}

fn unsupported(chars: &[char], position: usize) -> AbcError {
    let end = (position + 8).min(chars.len());
    AbcError::UnsupportedConstruct {
        position,
        snippet: chars[position..end].iter().collect(),
    }
}

/// Scans one note event starting at `start`; returns it and the index after it.
fn scan_token(chars: &[char], start: usize) -> Result<(Token, usize), AbcError> {
    let mut i = start;
    let accidental = match chars.get(i) {
        Some('^') => {
            i += 1;
            Accidental::Sharp
        }
        Some('_') => {
            i += 1;
            Accidental::Flat
        }
        _ => Accidental::None,
    };
    let pitch = chars
        .get(i)
        .and_then(|&c| Pitch::from_char(c))
        .ok_or_else(|| unsupported(chars, start))?;
    i += 1;

    let mut octave_shift: i8 = 0;
    while let Some(&c) = chars.get(i) {
        match c {
            '\'' => octave_shift += 1,
            ',' => octave_shift -= 1,
            _ => break,
        }
        i += 1;
    }

    let mut duration = 1;
    if let Some(&c) = chars.get(i) {
        if let Some(d) = c.to_digit(10) {
            duration = d as u8;
            i += 1;
        }
    }
    // A second digit would make a multi-digit duration, which is outside the subset.
    if chars.get(i).is_some_and(|c| c.is_ascii_digit()) {
        return Err(unsupported(chars, start));
    }

    let token = Token::new(accidental, pitch, octave_shift, duration).ok_or_else(|| unsupported(chars, start))?;
    Ok((token, i))
}

/// Tokenizes an ABC tune body (headers already stripped).
///
/// Positions in errors are character offsets into `body`.
pub fn tokenize(body: &str) -> Result<Vec<Token>, AbcError> {
    let chars: Vec<char> = body.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '\\' => i += 1,
            '%' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '|' | ':' => {
                i += 1;
                // closing bracket of `|]` and volta numbers of `|1`, `:|2`
                while i < chars.len() && (chars[i] == ']' || chars[i].is_ascii_digit()) {
                    i += 1;
                }
            }
            '[' => match chars.get(i + 1) {
                Some('|') => i += 2,
                Some(d) if d.is_ascii_digit() => {
                    i += 2;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                _ => return Err(unsupported(&chars, i)),
            },
            _ => {
                let (token, next) = scan_token(&chars, i)?;
                tokens.push(token);
                i = next;
            }
        }
    }
    Ok(tokens)
}

/// Renders `tokens` as an ABC body, with a bar line after every eight tokens.
pub fn render_body(tokens: &[Token]) -> String {
    const BAR: usize = 8;
    let mut out = String::new();
    for (n, chunk) in tokens.chunks(BAR).enumerate() {
        if n > 0 {
            out.push_str(" | ");
        }
        for t in chunk {
            out.push_str(&t.to_string());
        }
    }
    out
}

/// Ordered ABC header fields (`X:`, `T:`, ...), kept verbatim.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Headers(Vec<(char, String)>);

impl Headers {
    pub fn new() -> Self {
        Self::default()
    }

    /// `X:1`, `T:generated`, `M:4/4`, `L:1/8`, `K:C`.
    pub fn minimal() -> Self {
        let mut h = Headers::new();
        h.set('X', "1");
        h.set('T', "generated");
        h.set('M', "4/4");
        h.set('L', "1/8");
        h.set('K', "C");
        h
    }

    pub fn get(&self, field: char) -> Option<&str> {
        self.0.iter().find(|(k, _)| *k == field).map(|(_, v)| v.as_str())
    }

    /// Replaces the first occurrence of `field`, or appends it.
    pub fn set(&mut self, field: char, value: impl Into<String>) {
        let value = value.into();
        match self.0.iter_mut().find(|(k, _)| *k == field) {
            Some(slot) => slot.1 = value,
            None => self.0.push((field, value)),
        }
    }

    /// Appends without replacing; ABC allows repeated fields such as `T:`.
    pub fn push(&mut self, field: char, value: impl Into<String>) {
        self.0.push((field, value.into()));
    }

    pub fn iter(&self) -> impl Iterator<Item = (char, &str)> {
        self.0.iter().map(|(k, v)| (*k, v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Renders a complete tune: `X:` first, `K:` last, missing minimal fields
/// filled with their defaults, then the body.
pub fn render(tokens: &[Token], headers: &Headers) -> String {
    let defaults = Headers::minimal();
    let mut out = String::new();
    let x = headers.get('X').or(defaults.get('X')).unwrap_or("1");
    out.push_str(&format!("X:{x}\n"));
    for (field, default) in defaults.iter() {
        if field != 'X' && field != 'K' && headers.get(field).is_none() {
            out.push_str(&format!("{field}:{default}\n"));
        }
    }
    for (field, value) in headers.iter() {
        if field != 'X' && field != 'K' {
            out.push_str(&format!("{field}:{value}\n"));
        }
    }
    let k = headers.get('K').or(defaults.get('K')).unwrap_or("C");
    out.push_str(&format!("K:{k}\n"));
    out.push_str(&render_body(tokens));
    out.push('\n');
    out
}

/// Splits a rendered or hand-written tune into headers and body text.
///
/// Header lines run up to and including the first `K:` line; everything after
/// is body. A tune without `K:` is all headers.
pub fn split_tune(text: &str) -> (Headers, String) {
    let mut headers = Headers::new();
    let mut body = String::new();
    let mut in_body = false;
    for line in text.lines() {
        if in_body {
            body.push_str(line);
            body.push('\n');
            continue;
        }
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        if let Some((field, value)) = header_field(trimmed) {
            headers.push(field, value.trim());
            if field == 'K' {
                in_body = true;
            }
        }
    }
    (headers, body)
}

fn header_field(line: &str) -> Option<(char, &str)> {
    let mut chars = line.chars();
    let field = chars.next()?;
    if field.is_ascii_alphabetic() && chars.next() == Some(':') {
        Some((field, &line[2..]))
    } else {
        None
    }
}

/// A corpus record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tune {
    pub id: String,
    pub body: Vec<Token>,
    pub headers: Headers,
}

/// A tune that failed to parse during corpus loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipReport {
    pub source: PathBuf,
    pub tune: String,
    pub reason: String,
}

impl fmt::Display for SkipReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (tune {}): {}", self.source.display(), self.tune, self.reason)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub tunes: Vec<Tune>,
    pub skipped: Vec<SkipReport>,
}

impl Corpus {
    pub fn token_count(&self) -> usize {
        self.tunes.iter().map(|t| t.body.len()).sum()
    }
}

/// Loads every tune from an `.abc` file, or from all `.abc` files in a
/// directory (sorted by name). Tunes that fail to parse are skipped and
/// reported.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let files = if path.is_dir() {
        let mut files = Vec::new();
        for entry in fs::read_dir(path).map_err(io_err)? {
            let p = entry.map_err(io_err)?.path();
            if p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("abc")) {
                files.push(p);
            }
        }
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };

    let mut corpus = Corpus::default();
    let mut seen = HashSet::new();
    for file in &files {
        let text = fs::read_to_string(file).map_err(|source| CorpusError::Io {
            path: file.clone(),
            source,
        })?;
        parse_tunes(file, &text, &mut corpus, &mut seen);
    }
    if corpus.tunes.is_empty() {
        return Err(CorpusError::EmptyCorpus(path.to_path_buf()));
    }
    Ok(corpus)
}

/// Parses the tunes of one file's text into `corpus`.
pub fn parse_tunes(source: &Path, text: &str, corpus: &mut Corpus, seen_ids: &mut HashSet<String>) {
    let stem = source
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    for block in tune_blocks(text) {
        let (headers, body_text) = split_tune(&block);
        let number = headers.get('X').unwrap_or("?").to_string();
        let mut id = format!("{stem}:{number}");
        let mut n = 2;
        while seen_ids.contains(&id) {
            id = format!("{stem}:{number}#{n}");
            n += 1;
        }
        let result = check_body(&body_text).and_then(|()| tokenize(&body_text).map_err(|e| e.to_string()));
        match result {
            Ok(body) if !body.is_empty() => {
                seen_ids.insert(id.clone());
                corpus.tunes.push(Tune { id, body, headers });
            }
            Ok(_) => corpus.skipped.push(SkipReport {
                source: source.to_path_buf(),
                tune: number,
                reason: "empty body".into(),
            }),
            Err(reason) => corpus.skipped.push(SkipReport {
                source: source.to_path_buf(),
                tune: number,
                reason,
            }),
        }
    }
}

/// Field lines inside a body (`W:`, `P:`, ...) are inline fields.
fn check_body(body: &str) -> Result<(), String> {
    for line in body.lines() {
        if header_field(line.trim()).is_some() {
            return Err(format!("inline field line {:?}", line.trim()));
        }
    }
    Ok(())
}

/// Blank-line separated blocks that start with an `X:` line.
fn tune_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<String> = None;
    for line in text.lines() {
        if line.trim().is_empty() {
            if let Some(block) = current.take() {
                blocks.push(block);
            }
            continue;
        }
        match current.as_mut() {
            Some(block) => {
                block.push_str(line);
                block.push('\n');
            }
            None if line.trim_start().starts_with("X:") => current = Some(format!("{line}\n")),
            None => {} // file-level comments and free text between tunes
        }
    }
    if let Some(block) = current {
        blocks.push(block);
    }
    blocks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(s: &str) -> Token {
        s.parse().unwrap()
    }

    #[test]
    fn bare_letters_have_unit_duration() {
        let t = tokenize("CDE").unwrap();
        assert_eq!(
            t,
            vec![Token::note(Pitch::C), Token::note(Pitch::D), Token::note(Pitch::E)]
        );
    }

    #[test]
    fn accidentals_octaves_rests_and_bars() {
        let t = tokenize("^c'2 z | G,").unwrap();
        assert_eq!(
            t,
            vec![
                Token::new(Accidental::Sharp, Pitch::LowerC, 1, 2).unwrap(),
                Token::rest(1).unwrap(),
                Token::new(Accidental::None, Pitch::G, -1, 1).unwrap(),
            ]
        );
    }

    #[test]
    fn chords_are_rejected_at_their_position() {
        assert_eq!(
            tokenize("[CEG]"),
            Err(AbcError::UnsupportedConstruct {
                position: 0,
                snippet: "[CEG]".into()
            })
        );
        match tokenize("CD [CEG]") {
            Err(AbcError::UnsupportedConstruct { position, .. }) => assert_eq!(position, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn other_unsupported_constructs() {
        for body in [
            "C-C", "{g}A", "[K:G] C", "C/2", "=C", "C>D", "\"Am\"C", "(CD)", "c'''", "C'", "c,", "z'", "^z", "C5",
            "C12",
        ] {
            assert!(
                matches!(tokenize(body), Err(AbcError::UnsupportedConstruct { .. })),
                "{body} should be rejected"
            );
        }
    }

    #[test]
    fn repeat_marks_and_endings_are_skipped() {
        let t = tokenize("|: CD :|1 E :|2 F |] [|G [1 A [2 B || c ::").unwrap();
        assert_eq!(t.len(), 8);
        assert_eq!(t[7], tok("c"));
    }

    #[test]
    fn comments_and_continuations_are_skipped() {
        let t = tokenize("CD % a comment with [chords]\nEF \\\nG").unwrap();
        assert_eq!(t.len(), 5);
    }

    #[test]
    fn render_minimal_tune() {
        let text = render(&[Token::note(Pitch::C)], &Headers::new());
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines.contains(&"X:1"));
        assert!(lines.contains(&"K:C"));
        assert_eq!(*lines.last().unwrap(), "C");
        assert_eq!(lines[0], "X:1");
        assert_eq!(lines[lines.len() - 2], "K:C");
    }

    #[test]
    fn render_keeps_supplied_headers() {
        let mut h = Headers::new();
        h.set('X', "7");
        h.set('K', "G");
        h.set('T', "Test");
        h.set('R', "reel");
        let text = render(&[tok("G")], &h);
        assert!(text.starts_with("X:7\n"));
        assert!(text.contains("T:Test\n"));
        assert!(text.contains("R:reel\n"));
        assert!(text.contains("L:1/8\n"));
        assert!(text.contains("K:G\nG\n"));
    }

    #[test]
    fn render_puts_a_bar_every_eight_tokens() {
        let tokens: Vec<Token> = tokenize("CDEFGABc defgab c'2 z A,").unwrap();
        assert_eq!(render_body(&tokens), "CDEFGABc | defgabc'2z | A,");
    }

    #[test]
    fn rendered_tune_splits_back() {
        let tokens = tokenize("^F,2 _B z4 c''").unwrap();
        let (headers, body) = split_tune(&render(&tokens, &Headers::minimal()));
        assert_eq!(headers.get('T'), Some("generated"));
        assert_eq!(tokenize(&body).unwrap(), tokens);
    }

    #[test]
    fn token_validity_rules() {
        assert!(Token::new(Accidental::Sharp, Pitch::Rest, 0, 1).is_none());
        assert!(Token::new(Accidental::None, Pitch::C, 1, 1).is_none());
        assert!(Token::new(Accidental::None, Pitch::LowerC, -1, 1).is_none());
        assert!(Token::new(Accidental::None, Pitch::C, 0, 0).is_none());
        assert!(Token::new(Accidental::None, Pitch::C, 0, 5).is_none());
        assert!(Token::new(Accidental::Flat, Pitch::B, -2, 4).is_some());
        // 14 letters x 3 accidentals x 3 octave settings x 4 durations, plus 4 rests
        assert_eq!(Token::all().len(), 14 * 3 * 3 * 4 + 4);
    }

    #[test]
    fn every_token_round_trips_through_text() {
        for t in Token::all() {
            assert_eq!(t.to_string().parse::<Token>().unwrap(), t);
        }
    }

    #[test]
    fn tune_blocks_need_an_x_line() {
        let text = "% library header\n\nX:1\nT:a\nK:C\nCD\n\n\nX:2\nT:b\nK:D\nEF|G\n";
        let blocks = tune_blocks(text);
        assert_eq!(blocks.len(), 2);
        let (h, body) = split_tune(&blocks[1]);
        assert_eq!(h.get('K'), Some("D"));
        assert_eq!(tokenize(&body).unwrap().len(), 3);
    }

    #[test]
    fn load_two_tunes_from_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("two.abc");
        fs::write(&path, "X:1\nT:one\nK:C\nCDEF|\n\nX:2\nT:two\nK:G\nGABc|\n").unwrap();
        let corpus = load_corpus(&path).unwrap();
        assert_eq!(corpus.tunes.len(), 2);
        assert_eq!(corpus.tunes[0].id, "two:1");
        assert_eq!(corpus.tunes[1].headers.get('T'), Some("two"));
        assert!(corpus.skipped.is_empty());
    }

    #[test]
    fn empty_directory_is_an_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(CorpusError::EmptyCorpus(_))));
    }

    #[test]
    fn missing_path_is_an_io_error() {
        assert!(matches!(
            load_corpus(Path::new("/nonexistent/corpus.abc")),
            Err(CorpusError::Io { .. })
        ));
    }

    #[test]
    fn duplicate_x_numbers_get_distinct_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.abc");
        fs::write(&path, "X:1\nK:C\nCD\n\nX:1\nK:C\nEF\n").unwrap();
        let corpus = load_corpus(&path).unwrap();
        assert_eq!(corpus.tunes[0].id, "dup:1");
        assert_eq!(corpus.tunes[1].id, "dup:1#2");
    }

    #[test]
    fn inline_field_lines_skip_the_tune() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.abc");
        fs::write(&path, "X:1\nK:C\nCD\nW:words here\n\nX:2\nK:C\nEF\n").unwrap();
        let corpus = load_corpus(&path).unwrap();
        assert_eq!(corpus.tunes.len(), 1);
        assert_eq!(corpus.skipped.len(), 1);
        assert_eq!(corpus.skipped[0].tune, "1");
    }
}
