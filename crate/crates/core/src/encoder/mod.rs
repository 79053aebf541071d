//! Sentence encoders: a small pre-layer-norm transformer with masked mean
//! pooling and hand-written backpropagation, plus a linear bag-of-words
//! backbone. Both serve as teacher or student.

mod bow;
mod checkpoint;
mod params;
mod transformer;
mod vocab;

pub use bow::{BagOfWords, BagOfWordsConfig};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_backbone, save_backbone, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::{ParamSet, Tensor};
pub use transformer::{EncoderConfig, TransformerEncoder};
pub use vocab::{tokenize, words, Vocab, DEFAULT_MIN_COUNT, OOV_TOKEN, PAD_TOKEN};

pub type EncoderParams = ParamSet;

use crate::error::{Error, Result};

/// Token ids with a parallel mask; `true` marks a real token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        let mask = vec![true; ids.len()];
        Self { ids, mask }
    }

    pub fn with_mask(ids: Vec<u32>, mask: Vec<bool>) -> Result<Self> {
        let seq = Self { ids, mask };
        seq.check(usize::MAX, usize::MAX)?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Append masked-out padding up to `len` positions.
    pub fn padded(&self, len: usize, pad_id: u32) -> Self {
        let mut out = self.clone();
        while out.ids.len() < len {
            out.ids.push(pad_id);
            out.mask.push(false);
        }
        out
    }

    /// `(position, id)` of every real token.
    pub fn real_tokens(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.ids
            .iter()
            .zip(&self.mask)
            .enumerate()
            .filter(|(_, (_, m))| **m)
            .map(|(p, (id, _))| (p, *id))
    }

    pub(crate) fn check(&self, max_len: usize, vocab_size: usize) -> Result<()> {
        if self.ids.len() != self.mask.len() {
            return Err(Error::Shape(format!(
                "{} ids but {} mask entries",
                self.ids.len(),
                self.mask.len()
            )));
        }
        if self.ids.len() > max_len {
            return Err(Error::Input(format!(
                "sequence of length {} exceeds max_len {max_len}",
                self.ids.len()
            )));
        }
        if !self.mask.iter().any(|m| *m) {
            return Err(Error::Input("sequence has no real tokens".into()));
        }
        if let Some((p, id)) = self.real_tokens().find(|(_, id)| *id as usize >= vocab_size) {
            return Err(Error::Input(format!(
                "token id {id} at position {p} is outside vocabulary of size {vocab_size}"
            )));
        }
        Ok(())
    }
}

/// A trainable sentence encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum Backbone {
    Transformer(TransformerEncoder),
    BagOfWords(BagOfWords),
}

impl Backbone {
    pub fn dim(&self) -> usize {
        match self {
            Backbone::Transformer(e) => e.config().model_dim,
            Backbone::BagOfWords(b) => b.config().dim,
        }
    }

    pub fn max_len(&self) -> usize {
        match self {
            Backbone::Transformer(e) => e.config().max_len,
            Backbone::BagOfWords(b) => b.config().max_len,
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Backbone::Transformer(e) => e.config().vocab_size,
            Backbone::BagOfWords(b) => b.config().vocab_size,
        }
    }

    pub fn encode(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        match self {
            Backbone::Transformer(e) => e.encode(seq),
            Backbone::BagOfWords(b) => b.encode(seq),
        }
    }

    /// Gradient of `upstream · encode(seq)` with respect to every parameter.
    pub fn encode_backward(&self, seq: &TokenSequence, upstream: &[f64]) -> Result<ParamSet> {
        match self {
            Backbone::Transformer(e) => e.encode_backward(seq, upstream),
            Backbone::BagOfWords(b) => b.encode_backward(seq, upstream),
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Backbone::Transformer(e) => e.params(),
            Backbone::BagOfWords(b) => b.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Backbone::Transformer(e) => e.params_mut(),
            Backbone::BagOfWords(b) => b.params_mut(),
        }
    }
}

impl From<TransformerEncoder> for Backbone {
    fn from(e: TransformerEncoder) -> Self {
        Backbone::Transformer(e)
    }
}

impl From<BagOfWords> for Backbone {
    fn from(b: BagOfWords) -> Self {
        Backbone::BagOfWords(b)
    }
}

/// Vocabulary plus backbone: maps raw text to a pooled vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    pub vocab: Vocab,
    pub backbone: Backbone,
}

impl TextEncoder {
    pub fn new(vocab: Vocab, backbone: impl Into<Backbone>) -> Result<Self> {
        let backbone = backbone.into();
        if vocab.len() > backbone.vocab_size() {
            return Err(Error::Config(format!(
                "vocabulary has {} entries but the encoder was built for {}",
                vocab.len(),
                backbone.vocab_size()
            )));
        }
        Ok(Self { vocab, backbone })
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        tokenize(text, &self.vocab, self.backbone.max_len())
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        self.backbone.encode(&self.tokenize(text)?)
    }

    pub fn dim(&self) -> usize {
        self.backbone.dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_validation() {
        let s = TokenSequence::with_mask(vec![1, 2], vec![false, false]);
        assert!(s.is_err());
        let s = TokenSequence::with_mask(vec![1, 2], vec![true]);
        assert!(matches!(s, Err(Error::Shape(_))));
        let s = TokenSequence::new(vec![5]);
        assert!(s.check(8, 5).is_err());
        assert!(s.check(8, 6).is_ok());
        assert!(TokenSequence::new(vec![1, 1, 1]).check(2, 6).is_err());
    }

    #[test]
    fn padding_marks_mask_false() {
        let s = TokenSequence::new(vec![3, 4]).padded(5, 0);
        assert_eq!(s.ids, vec![3, 4, 0, 0, 0]);
        assert_eq!(s.mask, vec![true, true, false, false, false]);
        assert_eq!(s.real_tokens().collect::<Vec<_>>(), vec![(0, 3), (1, 4)]);
    }
}
