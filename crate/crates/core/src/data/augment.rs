use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{SynonymTable, TripletRecord};

/// Each record grows into itself plus this many substituted copies, a
/// threefold expansion of the sentence pool.
pub const DEFAULT_VARIANTS: usize = 2;

pub fn augment(record: &TripletRecord, table: &SynonymTable, rate: f64, seed: u64) -> Result<Vec<TripletRecord>> {
    augment_with(record, table, rate, seed, DEFAULT_VARIANTS)
}

/// The original followed by up to `variants` synonym-substituted copies. Each
/// variant draws from its own seed stream. Copies identical to the original or
/// to an earlier copy are dropped, so an empty table or `rate = 0` yields only
/// the original.
pub fn augment_with(
    record: &TripletRecord,
    table: &SynonymTable,
    rate: f64,
    seed: u64,
    variants: usize,
) -> Result<Vec<TripletRecord>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Input(format!("substitution rate {rate} outside [0, 1]")));
    }
    let mut out = vec![record.clone()];
    if table.is_empty() || rate == 0.0 {
        return Ok(out);
    }
    for v in 0..variants {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(v as u64 + 1);
        let variant = TripletRecord {
            anchor: substitute(&record.anchor, table, rate, &mut rng),
            entailment: substitute(&record.entailment, table, rate, &mut rng),
            contradiction: substitute(&record.contradiction, table, rate, &mut rng),
        };
        if !out.contains(&variant) {
            out.push(variant);
        }
    }
    Ok(out)
}

/// Augment a whole dataset; record `i` uses seed `seed + i`.
pub fn augment_all(records: &[TripletRecord], table: &SynonymTable, rate: f64, seed: u64) -> Result<Vec<TripletRecord>> {
    let mut out = Vec::with_capacity(records.len() * (DEFAULT_VARIANTS + 1));
    for (i, r) in records.iter().enumerate() {
        out.extend(augment(r, table, rate, seed.wrapping_add(i as u64))?);
    }
    Ok(out)
}

fn substitute(text: &str, table: &SynonymTable, rate: f64, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::with_capacity(text.len());
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String, rng: &mut ChaCha8Rng| {
        if word.is_empty() {
            return;
        }
        let lower = word.to_lowercase();
        match table.get(&lower) {
            Some(reps) if rng.random::<f64>() < rate => {
                let r = &reps[rng.random_range(0..reps.len())];
                out.push_str(&match_case(word, r));
            }
            _ => out.push_str(word),
        }
        word.clear();
    };
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.push(c);
        } else {
            flush(&mut word, &mut out, rng);
            out.push(c);
        }
    }
    flush(&mut word, &mut out, rng);
    out
}

fn match_case(original: &str, replacement: &str) -> String {
    let letters: Vec<char> = original.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
        return replacement.to_uppercase();
    }
    match original.chars().next() {
        Some(c) if c.is_uppercase() => {
            let mut cs = replacement.chars();
            cs.next()
                .map(|f| f.to_uppercase().chain(cs).collect())
                .unwrap_or_default()
        }
        _ => replacement.to_string(),
    }
}
