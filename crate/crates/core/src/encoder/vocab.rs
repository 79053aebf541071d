use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::binio::{atomic_write, read_file};
use crate::error::{Error, Result};

use super::TokenSequence;

pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<unk>";
pub const DEFAULT_MIN_COUNT: usize = 2;

/// Word → id table with reserved padding and out-of-vocabulary ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    ids: HashMap<String, u32>,
    pad_id: u32,
    oov_id: u32,
    size: usize,
}

/// Lowercase and split on anything that is not alphanumeric.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

impl Vocab {
    /// Wrap an explicit table. `<pad>` and `<unk>` entries are used when
    /// present; otherwise fresh ids past the largest one are reserved.
    pub fn from_map(map: HashMap<String, u32>) -> Result<Self> {
        let mut seen: HashMap<u32, &str> = HashMap::new();
        for (w, id) in &map {
            if let Some(prev) = seen.insert(*id, w) {
                return Err(Error::Input(format!("id {id} assigned to both {prev:?} and {w:?}")));
            }
        }
        let mut next = map.values().copied().max().map_or(0, |m| m + 1);
        let mut reserve = |tok: &str| {
            map.get(tok).copied().unwrap_or_else(|| {
                let id = next;
                next += 1;
                id
            })
        };
        let pad_id = reserve(PAD_TOKEN);
        let oov_id = reserve(OOV_TOKEN);
        let size = next.max(pad_id + 1).max(oov_id + 1) as usize;
        Ok(Self {
            ids: map,
            pad_id,
            oov_id,
            size,
        })
    }

    /// Frequency-ranked vocabulary keeping words seen at least `min_count`
    /// times. Id 0 is padding, id 1 is out-of-vocabulary.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for s in sentences {
            for w in words(s) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut ids = HashMap::with_capacity(kept.len() + 2);
        ids.insert(PAD_TOKEN.to_string(), 0);
        ids.insert(OOV_TOKEN.to_string(), 1);
        for (i, (w, _)) in kept.into_iter().enumerate() {
            ids.insert(w, i as u32 + 2);
        }
        let size = ids.len();
        Self {
            ids,
            pad_id: 0,
            oov_id: 1,
            size,
        }
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn pad_id(&self) -> u32 {
        self.pad_id
    }

    pub fn oov_id(&self) -> u32 {
        self.oov_id
    }

    pub fn id(&self, word: &str) -> u32 {
        self.ids.get(word).copied().unwrap_or(self.oov_id)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.ids.contains_key(word)
    }

    /// Entries sorted by id, including the reserved tokens.
    pub fn entries(&self) -> Vec<(String, u32)> {
        let mut all: Vec<(String, u32)> = self.ids.iter().map(|(w, i)| (w.clone(), *i)).collect();
        if !self.ids.contains_key(PAD_TOKEN) {
            all.push((PAD_TOKEN.to_string(), self.pad_id));
        }
        if !self.ids.contains_key(OOV_TOKEN) {
            all.push((OOV_TOKEN.to_string(), self.oov_id));
        }
        all.sort_by_key(|(_, i)| *i);
        all
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (w, i) in self.entries() {
            let _ = writeln!(s, "{w}\t{i}");
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let (w, id) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: "expected token<TAB>id".into(),
            })?;
            let id: u32 = id.trim().parse().map_err(|e| Error::Parse {
                line: n + 1,
                message: format!("bad id {id:?}: {e}"),
            })?;
            if map.insert(w.to_string(), id).is_some() {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("duplicate token {w:?}"),
                });
            }
        }
        if map.is_empty() {
            return Err(Error::Input("vocabulary file is empty".into()));
        }
        Self::from_map(map)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_tsv().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "not UTF-8"))?;
        Self::from_tsv(&text).map_err(|e| e.context(format!("reading vocabulary {}", path.display())))
    }
}

/// Lowercase word split, vocabulary lookup with OOV fallback, truncation at
/// `max_len`.
pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> Result<TokenSequence> {
    if text.trim().is_empty() {
        return Err(Error::Input("cannot tokenize empty text".into()));
    }
    if max_len == 0 {
        return Err(Error::Input("max_len must be at least 1".into()));
    }
    let mut ids: Vec<u32> = words(text).take(max_len).map(|w| vocab.id(&w)).collect();
    if ids.is_empty() {
        // punctuation-only text still yields one token so pooling is defined
        ids.push(vocab.oov_id());
    }
    Ok(TokenSequence::new(ids))
}
