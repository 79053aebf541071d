//! Dataset formats: triplet JSONL, scored-pair TSV, retrieval corpora, and
//! the `HPDE` embedding matrix.

mod augment;
mod synth;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{atomic_write, read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::linalg::{EmbeddingMatrix, Matrix};

pub use augment::{augment, augment_all, augment_with, DEFAULT_VARIANTS};
pub use synth::{synth_corpus, SynthConfig, SynthCorpus};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TripletRecord {
    pub anchor: String,
    pub entailment: String,
    pub contradiction: String,
}

impl TripletRecord {
    pub fn new(anchor: impl Into<String>, entailment: impl Into<String>, contradiction: impl Into<String>) -> Self {
        Self {
            anchor: anchor.into(),
            entailment: entailment.into(),
            contradiction: contradiction.into(),
        }
    }

    /// The positive repeats the anchor verbatim.
    pub fn is_duplicate(&self) -> bool {
        self.anchor == self.entailment
    }

    pub fn sentences(&self) -> [&str; 3] {
        [&self.anchor, &self.entailment, &self.contradiction]
    }

    fn validate(&self) -> std::result::Result<(), String> {
        for (name, s) in [
            ("anchor", &self.anchor),
            ("entailment", &self.entailment),
            ("contradiction", &self.contradiction),
        ] {
            if s.trim().is_empty() {
                return Err(format!("field \"{name}\" is empty"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub sent1: String,
    pub sent2: String,
    pub score: f64,
}

pub const MAX_SCORE: f64 = 5.0;

impl ScoredPair {
    pub fn new(sent1: impl Into<String>, sent2: impl Into<String>, score: f64) -> Result<Self> {
        let p = Self {
            sent1: sent1.into(),
            sent2: sent2.into(),
            score,
        };
        if !(0.0..=MAX_SCORE).contains(&score) {
            return Err(Error::Input(format!("score {score} outside [0, 5]")));
        }
        if p.sent1.trim().is_empty() || p.sent2.trim().is_empty() {
            return Err(Error::Input("scored pair with an empty sentence".into()));
        }
        Ok(p)
    }
}

/// Lowercase word to its replacement candidates.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymTable {
    entries: BTreeMap<String, Vec<String>>,
}

impl SynonymTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, replacements: Vec<String>) -> Result<()> {
        if word.is_empty() || word.chars().any(|c| c.is_uppercase()) {
            return Err(Error::Input(format!("synonym key {word:?} must be non-empty lowercase")));
        }
        if replacements.is_empty() || replacements.iter().any(|r| r.is_empty()) {
            return Err(Error::Input(format!("synonym entry {word:?} has no replacements")));
        }
        self.entries.insert(word.to_string(), replacements);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.entries.get(word).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// One line per word: `word⟨TAB⟩replacement⟨TAB⟩replacement…`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            for r in v {
                s.push('\t');
                s.push_str(r);
            }
            s.push('\n');
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut t = Self::new();
        for (i, line) in normalized_lines(text) {
            let mut fields = line.split('\t');
            let key = fields.next().unwrap_or_default();
            let reps: Vec<String> = fields.map(str::to_string).collect();
            t.insert(key, reps).map_err(|e| Error::Parse {
                line: i,
                message: e.to_string(),
            })?;
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tsv(&read_text(path)?).map_err(|e| e.context(format!("reading {}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_tsv().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: u64,
    pub text: String,
}

/// A query and the corpus id of its duplicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoldPair {
    pub query_id: u64,
    pub gold_id: u64,
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_file(path)?).map_err(|_| Error::format(path, "file is not valid UTF-8"))
}

/// Non-blank lines with 1-based line numbers; CR before LF is dropped.
fn normalized_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (line, l) in normalized_lines(text) {
        let v = serde_json::from_str(l).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Input(format!("no {what} found")));
    }
    Ok(out)
}

pub fn parse_triplets(text: &str) -> Result<Vec<TripletRecord>> {
    let mut out = Vec::new();
    for (line, l) in normalized_lines(text) {
        let rec: TripletRecord = serde_json::from_str(l).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        rec.validate().map_err(|message| Error::Parse { line, message })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::Input("no triplets found".into()));
    }
    let dups = out.iter().filter(|r| r.is_duplicate()).count();
    if dups > 0 {
        log::warn!("{dups} triplets have an entailment identical to the anchor");
    }
    Ok(out)
}

pub fn load_triplets(path: &Path) -> Result<Vec<TripletRecord>> {
    parse_triplets(&read_text(path)?).map_err(|e| e.context(format!("reading {}", path.display())))
}

pub fn triplets_to_jsonl(records: &[TripletRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("plain strings serialize") + "\n")
        .collect()
}

pub fn write_triplets(path: &Path, records: &[TripletRecord]) -> Result<()> {
    atomic_write(path, triplets_to_jsonl(records).as_bytes())
}

pub fn parse_scored_pairs(text: &str) -> Result<Vec<ScoredPair>> {
    let mut out = Vec::new();
    for (line, l) in normalized_lines(text) {
        let fields: Vec<&str> = l.split('\t').collect();
        let [s1, s2, score] = fields.as_slice() else {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        };
        let score: f64 = score.trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("score {score:?} is not a number"),
        })?;
        if !(0.0..=MAX_SCORE).contains(&score) {
            return Err(Error::Range {
                line,
                message: format!("score {score} outside [0, 5]"),
            });
        }
        if s1.trim().is_empty() || s2.trim().is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty sentence".into(),
            });
        }
        out.push(ScoredPair {
            sent1: s1.to_string(),
            sent2: s2.to_string(),
            score,
        });
    }
    if out.is_empty() {
        return Err(Error::Input("no scored pairs found".into()));
    }
    Ok(out)
}

pub fn load_scored_pairs(path: &Path) -> Result<Vec<ScoredPair>> {
    parse_scored_pairs(&read_text(path)?).map_err(|e| e.context(format!("reading {}", path.display())))
}

pub fn scored_pairs_to_tsv(pairs: &[ScoredPair]) -> Result<String> {
    let mut s = String::new();
    for p in pairs {
        if [&p.sent1, &p.sent2].iter().any(|t| t.contains(['\t', '\n', '\r'])) {
            return Err(Error::Input("sentence contains a tab or line break".into()));
        }
        s.push_str(&format!("{}\t{}\t{}\n", p.sent1, p.sent2, p.score));
    }
    Ok(s)
}

pub fn write_scored_pairs(path: &Path, pairs: &[ScoredPair]) -> Result<()> {
    atomic_write(path, scored_pairs_to_tsv(pairs)?.as_bytes())
}

pub fn parse_corpus(text: &str) -> Result<Vec<CorpusEntry>> {
    parse_jsonl(text, "corpus entries")
}

pub fn load_corpus(path: &Path) -> Result<Vec<CorpusEntry>> {
    parse_corpus(&read_text(path)?).map_err(|e| e.context(format!("reading {}", path.display())))
}

pub fn write_corpus(path: &Path, entries: &[CorpusEntry]) -> Result<()> {
    let text: String = entries
        .iter()
        .map(|e| serde_json::to_string(e).expect("plain fields serialize") + "\n")
        .collect();
    atomic_write(path, text.as_bytes())
}

pub fn parse_gold(text: &str) -> Result<Vec<GoldPair>> {
    let mut out = Vec::new();
    for (line, l) in normalized_lines(text) {
        let parsed = l.split_once('\t').and_then(|(q, g)| Some((q.trim().parse().ok()?, g.trim().parse().ok()?)));
        let Some((query_id, gold_id)) = parsed else {
            return Err(Error::Parse {
                line,
                message: "expected query_id<TAB>gold_id".into(),
            });
        };
        out.push(GoldPair { query_id, gold_id });
    }
    if out.is_empty() {
        return Err(Error::Input("no gold pairs found".into()));
    }
    Ok(out)
}

pub fn load_gold(path: &Path) -> Result<Vec<GoldPair>> {
    parse_gold(&read_text(path)?).map_err(|e| e.context(format!("reading {}", path.display())))
}

pub fn write_gold(path: &Path, gold: &[GoldPair]) -> Result<()> {
    let text: String = gold.iter().map(|g| format!("{}\t{}\n", g.query_id, g.gold_id)).collect();
    atomic_write(path, text.as_bytes())
}

pub const EMBEDDING_MAGIC: &[u8; 4] = b"HPDE";

/// Magic, row count `u64`, width `u32`, then row-major `f32` values.
pub fn encode_embeddings(e: &EmbeddingMatrix) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(EMBEDDING_MAGIC);
    w.u64(e.rows() as u64);
    w.u32(e.cols() as u32);
    w.f64s_as_f32(e.data());
    w.finish()
}

pub fn decode_embeddings(bytes: &[u8], path: &Path) -> Result<EmbeddingMatrix> {
    let mut r = ByteReader::new(bytes, path);
    r.expect_magic(EMBEDDING_MAGIC)?;
    let count = r.u64()? as usize;
    let dim = r.u32()? as usize;
    if count == 0 || dim == 0 {
        return Err(r.error("embedding file is empty"));
    }
    let n = count
        .checked_mul(dim)
        .filter(|n| n.saturating_mul(4) <= r.remaining())
        .ok_or_else(|| r.error(format!("header declares {count}×{dim} values, more than the file holds")))?;
    let data = r.f32s_as_f64(n)?;
    r.finish()?;
    Matrix::new(count, dim, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_embeddings(path: &Path, e: &EmbeddingMatrix) -> Result<()> {
    atomic_write(path, &encode_embeddings(e))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    decode_embeddings(&read_file(path)?, path)
}
