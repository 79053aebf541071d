//! Template corpus: sentences "the ADJ SUBJ VERB in the PLACE", each slot
//! filled with a concept rendered by one of its synonyms.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{CorpusEntry, GoldPair, ScoredPair, SynonymTable, TripletRecord, MAX_SCORE};

type Concept = &'static [&'static str];

// Adjectives and verbs come in antonym pairs: entries 2k and 2k+1.
const ADJECTIVES: &[Concept] = &[
    &["happy", "cheerful", "joyful"],
    &["sad", "gloomy", "unhappy"],
    &["big", "large", "huge"],
    &["small", "little", "tiny"],
    &["young", "youthful", "juvenile"],
    &["old", "elderly", "aged"],
    &["fast", "quick", "speedy"],
    &["slow", "sluggish", "unhurried"],
    &["loud", "noisy", "rowdy"],
    &["quiet", "silent", "hushed"],
    &["tall", "lofty", "towering"],
    &["short", "stubby", "squat"],
];

const SUBJECTS: &[Concept] = &[
    &["dog", "hound", "pup"],
    &["cat", "kitten", "feline"],
    &["man", "guy", "gentleman"],
    &["woman", "lady", "madam"],
    &["child", "kid", "youngster"],
    &["bird", "sparrow", "finch"],
    &["horse", "pony", "stallion"],
    &["teacher", "tutor", "instructor"],
    &["doctor", "physician", "medic"],
    &["farmer", "rancher", "grower"],
    &["student", "pupil", "learner"],
    &["chef", "cook", "baker"],
];

const VERBS: &[Concept] = &[
    &["runs", "sprints", "jogs"],
    &["rests", "relaxes", "lounges"],
    &["sings", "chants", "hums"],
    &["weeps", "sobs", "cries"],
    &["eats", "dines", "feasts"],
    &["fasts", "starves", "abstains"],
    &["arrives", "comes", "appears"],
    &["leaves", "departs", "exits"],
    &["laughs", "giggles", "chuckles"],
    &["frowns", "scowls", "glares"],
    &["works", "labors", "toils"],
    &["plays", "frolics", "romps"],
];

const PLACES: &[Concept] = &[
    &["park", "garden", "meadow"],
    &["street", "road", "avenue"],
    &["kitchen", "galley", "pantry"],
    &["beach", "shore", "coast"],
    &["house", "home", "cottage"],
    &["forest", "woods", "grove"],
    &["office", "bureau", "workplace"],
    &["school", "academy", "college"],
    &["city", "town", "village"],
    &["river", "stream", "creek"],
];

const SLOTS: [&[Concept]; 4] = [ADJECTIVES, SUBJECTS, VERBS, PLACES];
const ADJ: usize = 0;
const VERB: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub triplets: usize,
    pub sts_pairs: usize,
    pub retrieval_queries: usize,
    pub retrieval_distractors: usize,
    /// Concepts available per slot, capped by the built-in lexicon.
    pub concepts: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            triplets: 500,
            sts_pairs: 200,
            retrieval_queries: 100,
            retrieval_distractors: 400,
            concepts: 12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub triplets: Vec<TripletRecord>,
    /// Held out for checkpoint selection.
    pub sts_dev: Vec<ScoredPair>,
    /// Held out for reporting.
    pub sts_validation: Vec<ScoredPair>,
    pub queries: Vec<CorpusEntry>,
    pub corpus: Vec<CorpusEntry>,
    pub gold: Vec<GoldPair>,
    /// Every surface form mapped to the other forms of its concept.
    pub synonyms: SynonymTable,
}

type Tuple = [usize; 4];

struct Lexicon {
    sizes: [usize; 4],
}

impl Lexicon {
    fn new(concepts: usize) -> Self {
        // keep antonym pairs whole
        let even = |n: usize| (concepts.min(n) / 2 * 2).max(2);
        Self {
            sizes: [
                even(ADJECTIVES.len()),
                concepts.clamp(2, SUBJECTS.len()),
                even(VERBS.len()),
                concepts.clamp(2, PLACES.len()),
            ],
        }
    }

    fn space(&self) -> usize {
        self.sizes.iter().product()
    }

    fn random_tuple(&self, rng: &mut ChaCha8Rng) -> Tuple {
        std::array::from_fn(|s| rng.random_range(0..self.sizes[s]))
    }

    fn surfaces(slot: usize, concept: usize) -> Concept {
        SLOTS[slot][concept]
    }

    fn random_surfaces(t: &Tuple, rng: &mut ChaCha8Rng) -> [&'static str; 4] {
        std::array::from_fn(|s| {
            let forms = Self::surfaces(s, t[s]);
            forms[rng.random_range(0..forms.len())]
        })
    }

    fn render(words: &[&str; 4]) -> String {
        format!("the {} {} {} in the {}", words[0], words[1], words[2], words[3])
    }

    fn synonyms(&self) -> SynonymTable {
        let mut t = SynonymTable::new();
        for (slot, concepts) in SLOTS.iter().enumerate() {
            for forms in &concepts[..self.sizes[slot]] {
                for w in forms.iter() {
                    let others = forms.iter().filter(|o| *o != w).map(|o| o.to_string()).collect();
                    t.insert(w, others).expect("lexicon words are lowercase");
                }
            }
        }
        t
    }
}

/// Surfaces for `t` differing from `base` in at least one slot.
fn paraphrase(t: &Tuple, base: &[&'static str; 4], keep: Option<usize>, rng: &mut ChaCha8Rng) -> [&'static str; 4] {
    let mut words = Lexicon::random_surfaces(t, rng);
    if let Some(k) = keep {
        words[k] = base[k];
    }
    if words == *base {
        let candidates: Vec<usize> = (0..4).filter(|s| Some(*s) != keep).collect();
        let s = candidates[rng.random_range(0..candidates.len())];
        let forms = Lexicon::surfaces(s, t[s]);
        let pos = forms.iter().position(|f| *f == base[s]).expect("base uses these forms");
        words[s] = forms[(pos + 1 + rng.random_range(0..forms.len() - 1)) % forms.len()];
    }
    words
}

fn sts_pair(lex: &Lexicon, rng: &mut ChaCha8Rng) -> ScoredPair {
    let a = lex.random_tuple(rng);
    let changes = rng.random_range(0..=4usize);
    let mut slots = [0, 1, 2, 3];
    slots.shuffle(rng);
    let mut b = a;
    for &s in &slots[..changes] {
        let other = rng.random_range(0..lex.sizes[s] - 1);
        b[s] = if other >= a[s] { other + 1 } else { other };
    }
    let matches = (0..4).filter(|s| a[*s] == b[*s]).count();
    ScoredPair {
        sent1: Lexicon::render(&Lexicon::random_surfaces(&a, rng)),
        sent2: Lexicon::render(&Lexicon::random_surfaces(&b, rng)),
        score: MAX_SCORE * matches as f64 / 4.0,
    }
}

/// Entailments are synonym paraphrases; contradictions swap the adjective for
/// its antonym, and half the time the verb as well. STS labels grade concept
/// overlap in steps of 1.25. Retrieval queries each have exactly one planted
/// duplicate in the corpus, sharing at least one surface word with it.
pub fn synth_corpus(config: &SynthConfig) -> Result<SynthCorpus> {
    if config.triplets == 0 || config.sts_pairs < 2 || config.retrieval_queries == 0 {
        return Err(Error::Config(
            "synthetic corpus needs at least 1 triplet, 2 STS pairs and 1 retrieval query".into(),
        ));
    }
    let lex = Lexicon::new(config.concepts);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let triplets = (0..config.triplets)
        .map(|_| {
            let t = lex.random_tuple(&mut rng);
            let base = Lexicon::random_surfaces(&t, &mut rng);
            let ent = paraphrase(&t, &base, None, &mut rng);
            let mut c = t;
            c[ADJ] ^= 1;
            if rng.random_bool(0.5) {
                c[VERB] ^= 1;
            }
            let con = Lexicon::random_surfaces(&c, &mut rng);
            TripletRecord {
                anchor: Lexicon::render(&base),
                entailment: Lexicon::render(&ent),
                contradiction: Lexicon::render(&con),
            }
        })
        .collect();

    let sts_dev = (0..config.sts_pairs).map(|_| sts_pair(&lex, &mut rng)).collect();
    let sts_validation = (0..config.sts_pairs).map(|_| sts_pair(&lex, &mut rng)).collect();

    if config.retrieval_queries > lex.space() / 2 {
        return Err(Error::Config(format!(
            "{} retrieval queries do not fit in {} distinct sentence meanings",
            config.retrieval_queries,
            lex.space()
        )));
    }
    let mut used = HashSet::new();
    let mut queries = Vec::with_capacity(config.retrieval_queries);
    let mut docs: Vec<(Option<u64>, String)> = Vec::new();
    while queries.len() < config.retrieval_queries {
        let t = lex.random_tuple(&mut rng);
        if !used.insert(t) {
            continue;
        }
        let q = Lexicon::random_surfaces(&t, &mut rng);
        let keep = rng.random_range(0..4);
        let d = paraphrase(&t, &q, Some(keep), &mut rng);
        let qid = queries.len() as u64;
        queries.push(CorpusEntry {
            id: qid,
            text: Lexicon::render(&q),
        });
        docs.push((Some(qid), Lexicon::render(&d)));
    }
    for _ in 0..config.retrieval_distractors {
        let t = loop {
            let t = lex.random_tuple(&mut rng);
            if !used.contains(&t) {
                break t;
            }
        };
        docs.push((None, Lexicon::render(&Lexicon::random_surfaces(&t, &mut rng))));
    }
    docs.shuffle(&mut rng);
    let mut gold = Vec::with_capacity(queries.len());
    let corpus = docs
        .into_iter()
        .enumerate()
        .map(|(i, (q, text))| {
            if let Some(query_id) = q {
                gold.push(GoldPair {
                    query_id,
                    gold_id: i as u64,
                });
            }
            CorpusEntry { id: i as u64, text }
        })
        .collect();
    gold.sort_by_key(|g| g.query_id);

    Ok(SynthCorpus {
        triplets,
        sts_dev,
        sts_validation,
        queries,
        corpus,
        gold,
        synonyms: lex.synonyms(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::words;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            triplets: 10,
            sts_pairs: 50,
            retrieval_queries: 20,
            retrieval_distractors: 30,
            concepts: 12,
            seed,
        }
    }

    #[test]
    fn exact_sizes_and_reproducible() {
        let a = synth_corpus(&small(5)).unwrap();
        assert_eq!(a.triplets.len(), 10);
        assert_eq!(a.sts_dev.len(), 50);
        assert_eq!(a.sts_validation.len(), 50);
        assert_eq!(a.queries.len(), 20);
        assert_eq!(a.corpus.len(), 50);
        assert_eq!(a.gold.len(), 20);
        let b = synth_corpus(&small(5)).unwrap();
        assert_eq!(a.triplets, b.triplets);
        assert_eq!(a.corpus, b.corpus);
        assert_ne!(synth_corpus(&small(6)).unwrap().triplets, a.triplets);
    }

    #[test]
    fn scores_in_range_with_spread() {
        let c = synth_corpus(&small(1)).unwrap();
        assert!(c.sts_dev.iter().all(|p| (0.0..=5.0).contains(&p.score)));
        let distinct: HashSet<u64> = c.sts_dev.iter().map(|p| (p.score * 4.0) as u64).collect();
        assert!(distinct.len() >= 4);
    }

    #[test]
    fn duplicates_share_a_content_word() {
        let c = synth_corpus(&SynthConfig::default()).unwrap();
        let stop = ["the", "in"];
        for g in &c.gold {
            let q = &c.queries[g.query_id as usize].text;
            let d = &c.corpus[g.gold_id as usize].text;
            assert_ne!(q, d);
            let qw: HashSet<String> = words(q).filter(|w| !stop.contains(&w.as_str())).collect();
            assert!(words(d).any(|w| qw.contains(&w)), "{q} / {d}");
        }
    }

    #[test]
    fn triplet_roles() {
        let c = synth_corpus(&small(2)).unwrap();
        for t in &c.triplets {
            assert_ne!(t.anchor, t.entailment);
            assert_ne!(t.anchor, t.contradiction);
        }
        assert!(c.synonyms.get("dog").unwrap().contains(&"hound".to_string()));
    }

    #[test]
    fn too_many_queries() {
        let cfg = SynthConfig {
            concepts: 2,
            retrieval_queries: 100,
            ..small(0)
        };
        assert!(matches!(synth_corpus(&cfg), Err(Error::Config(_))));
    }
}
