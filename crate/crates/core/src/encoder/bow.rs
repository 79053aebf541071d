use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

use super::{ParamSet, Tensor, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BagOfWordsConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub max_len: usize,
    pub seed: u64,
}

/// Mean of per-token embedding rows: a linear map of normalized
/// bag-of-words counts.
#[derive(Debug, Clone, PartialEq)]
pub struct BagOfWords {
    config: BagOfWordsConfig,
    params: ParamSet,
}

impl BagOfWords {
    pub fn new(config: BagOfWordsConfig) -> Result<Self> {
        Self::check_config(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut emb = Tensor::zeros("bow.emb", &[config.vocab_size, config.dim]);
        for x in &mut emb.data {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = z;
        }
        Ok(Self {
            config,
            params: ParamSet::new(vec![emb])?,
        })
    }

    pub fn from_params(config: BagOfWordsConfig, params: ParamSet) -> Result<Self> {
        Self::check_config(&config)?;
        match params.tensors() {
            [t] if t.name == "bow.emb" && t.shape == [config.vocab_size, config.dim] => {}
            _ => {
                return Err(Error::Shape(
                    "bag-of-words parameters must be a single vocab×dim table".into(),
                ))
            }
        }
        if !params.all_finite() {
            return Err(Error::Domain("non-finite embedding value".into()));
        }
        Ok(Self { config, params })
    }

    fn check_config(c: &BagOfWordsConfig) -> Result<()> {
        if c.vocab_size == 0 || c.dim == 0 || c.max_len == 0 {
            return Err(Error::Config("bag-of-words sizes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn config(&self) -> &BagOfWordsConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn encode(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        seq.check(self.config.max_len, self.config.vocab_size)?;
        let d = self.config.dim;
        let emb = self.params.at(0);
        let mut out = vec![0.0; d];
        let mut n = 0usize;
        for (_, id) in seq.real_tokens() {
            let row = &emb[id as usize * d..(id as usize + 1) * d];
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
            n += 1;
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        Ok(out)
    }

    pub fn encode_backward(&self, seq: &TokenSequence, upstream: &[f64]) -> Result<ParamSet> {
        seq.check(self.config.max_len, self.config.vocab_size)?;
        let d = self.config.dim;
        if upstream.len() != d {
            return Err(Error::Shape(format!(
                "upstream gradient has width {}, embedding is {d}",
                upstream.len()
            )));
        }
        let n = seq.real_tokens().count() as f64;
        let mut g = self.params.zeros_like();
        let demb = g.at_mut(0);
        for (_, id) in seq.real_tokens() {
            for (dst, u) in demb[id as usize * d..(id as usize + 1) * d].iter_mut().zip(upstream) {
                *dst += u / n;
            }
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> BagOfWords {
        BagOfWords::new(BagOfWordsConfig {
            vocab_size: 6,
            dim: 3,
            max_len: 10,
            seed: 4,
        })
        .unwrap()
    }

    #[test]
    fn mean_of_rows() {
        let m = model();
        let e = m.params().at(0);
        let out = m.encode(&TokenSequence::new(vec![2, 5])).unwrap();
        for c in 0..3 {
            assert!((out[c] - 0.5 * (e[2 * 3 + c] + e[5 * 3 + c])).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_spreads_upstream_over_tokens() {
        let m = model();
        let g = m.encode_backward(&TokenSequence::new(vec![1, 1, 3, 4]), &[4.0, 0.0, -4.0]).unwrap();
        let d = &g.tensors()[0].data;
        assert_eq!(&d[3..6], &[2.0, 0.0, -2.0]);
        assert_eq!(&d[9..12], &[1.0, 0.0, -1.0]);
        assert_eq!(&d[0..3], &[0.0, 0.0, 0.0]);
    }
}
