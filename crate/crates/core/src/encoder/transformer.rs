use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

use super::{ParamSet, Tensor, TokenSequence};

const LN_EPS: f64 = 1e-5;
const PER_LAYER: usize = 16;
const TOK: usize = 0;
const POS: usize = 1;

// offsets within a layer's block of tensors
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const WQ: usize = 2;
const BQ: usize = 3;
const WK: usize = 4;
const BK: usize = 5;
const WV: usize = 6;
const BV: usize = 7;
const WO: usize = 8;
const BO: usize = 9;
const LN2_G: usize = 10;
const LN2_B: usize = 11;
const W1: usize = 12;
const B1: usize = 13;
const W2: usize = 14;
const B2: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 1000,
            layers: 2,
            model_dim: 64,
            heads: 4,
            ffn_dim: 128,
            max_len: 32,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("vocab_size", self.vocab_size),
            ("layers", self.layers),
            ("model_dim", self.model_dim),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }

    fn layer_base(&self, l: usize) -> usize {
        2 + l * PER_LAYER
    }

    fn final_ln(&self) -> (usize, usize) {
        let base = 2 + self.layers * PER_LAYER;
        (base, base + 1)
    }

    /// `(name, shape)` of every tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (v, d, f, t) = (self.vocab_size, self.model_dim, self.ffn_dim, self.max_len);
        let mut out = vec![
            ("tok_emb".to_string(), vec![v, d]),
            ("pos_emb".to_string(), vec![t, d]),
        ];
        for l in 0..self.layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            out.extend([
                (p("ln1.gain"), vec![d]),
                (p("ln1.bias"), vec![d]),
                (p("attn.wq"), vec![d, d]),
                (p("attn.bq"), vec![d]),
                (p("attn.wk"), vec![d, d]),
                (p("attn.bk"), vec![d]),
                (p("attn.wv"), vec![d, d]),
                (p("attn.bv"), vec![d]),
                (p("attn.wo"), vec![d, d]),
                (p("attn.bo"), vec![d]),
                (p("ln2.gain"), vec![d]),
                (p("ln2.bias"), vec![d]),
                (p("ffn.w1"), vec![d, f]),
                (p("ffn.b1"), vec![f]),
                (p("ffn.w2"), vec![f, d]),
                (p("ffn.b2"), vec![d]),
            ]);
        }
        out.push(("final_ln.gain".to_string(), vec![d]));
        out.push(("final_ln.bias".to_string(), vec![d]));
        out
    }
}

/// Pre-layer-norm transformer encoder with learned absolute positions and
/// GELU feed-forward blocks. Output is the mean of the final (layer-normed)
/// hidden states over real tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerEncoder {
    config: EncoderConfig,
    params: ParamSet,
}

struct LayerCache {
    x_in: Vec<f64>,
    xhat1: Vec<f64>,
    rstd1: Vec<f64>,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    xhat2: Vec<f64>,
    rstd2: Vec<f64>,
    c: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

struct ForwardCache {
    tokens: Vec<(usize, u32)>,
    layers: Vec<LayerCache>,
    xhat_f: Vec<f64>,
    rstd_f: Vec<f64>,
}

impl TransformerEncoder {
    /// Seeded initialization: linear weights `N(0,1)/√fan_in`, token
    /// embeddings `N(0,1)`, position embeddings `N(0, 0.1²)`, layer-norm
    /// gains one and every bias zero.
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::default();
        for (name, shape) in config.layout() {
            let mut t = Tensor::zeros(name.clone(), &shape);
            let leaf = name.rsplit('.').next().unwrap_or(&name);
            let scale = match leaf {
                "tok_emb" => Some(1.0),
                "pos_emb" => Some(0.1),
                "wq" | "wk" | "wv" | "wo" | "w1" | "w2" => Some(1.0 / (shape[0] as f64).sqrt()),
                _ => None,
            };
            if let Some(s) = scale {
                for x in &mut t.data {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *x = z * s;
                }
            } else if leaf == "gain" {
                t.data.fill(1.0);
            }
            params.push(t);
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: EncoderConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != params.len()
            || layout
                .iter()
                .zip(params.iter())
                .any(|((n, s), t)| *n != t.name || *s != t.shape)
        {
            return Err(Error::Shape(
                "parameter tensors do not match the encoder configuration".into(),
            ));
        }
        if !params.all_finite() {
            return Err(Error::Domain("non-finite encoder parameter".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    pub fn encode(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        seq.check(self.config.max_len, self.config.vocab_size)?;
        let (pooled, _) = self.forward(seq);
        Ok(pooled)
    }

    pub fn encode_backward(&self, seq: &TokenSequence, upstream: &[f64]) -> Result<ParamSet> {
        seq.check(self.config.max_len, self.config.vocab_size)?;
        let d = self.config.model_dim;
        if upstream.len() != d {
            return Err(Error::Shape(format!(
                "upstream gradient has width {}, encoder output is {d}",
                upstream.len()
            )));
        }
        let (_, cache) = self.forward(seq);
        Ok(self.backward(&cache, upstream))
    }

    fn forward(&self, seq: &TokenSequence) -> (Vec<f64>, ForwardCache) {
        let cfg = &self.config;
        let d = cfg.model_dim;
        let p = &self.params;
        let tokens: Vec<(usize, u32)> = seq.real_tokens().collect();
        let t = tokens.len();

        let mut x = vec![0.0; t * d];
        for (r, &(pos, id)) in tokens.iter().enumerate() {
            let tok = &p.at(TOK)[id as usize * d..(id as usize + 1) * d];
            let pe = &p.at(POS)[pos * d..(pos + 1) * d];
            for c in 0..d {
                x[r * d + c] = tok[c] + pe[c];
            }
        }

        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let base = cfg.layer_base(l);
            let w = |o: usize| p.at(base + o);
            let (a, xhat1, rstd1) = layernorm(&x, t, d, w(LN1_G), w(LN1_B));
            let q = linear(&a, t, d, w(WQ), w(BQ), d);
            let k = linear(&a, t, d, w(WK), w(BK), d);
            let v = linear(&a, t, d, w(WV), w(BV), d);
            let (ctx, probs) = attention(&q, &k, &v, t, d, cfg.heads);
            let proj = linear(&ctx, t, d, w(WO), w(BO), d);
            let x_mid: Vec<f64> = x.iter().zip(&proj).map(|(a, b)| a + b).collect();
            let (c, xhat2, rstd2) = layernorm(&x_mid, t, d, w(LN2_G), w(LN2_B));
            let pre = linear(&c, t, d, w(W1), w(B1), cfg.ffn_dim);
            let act: Vec<f64> = pre.iter().map(|z| gelu(*z)).collect();
            let ffn = linear(&act, t, cfg.ffn_dim, w(W2), w(B2), d);
            let x_out: Vec<f64> = x_mid.iter().zip(&ffn).map(|(a, b)| a + b).collect();
            layers.push(LayerCache {
                x_in: std::mem::replace(&mut x, x_out),
                xhat1,
                rstd1,
                a,
                q,
                k,
                v,
                probs,
                ctx,
                xhat2,
                rstd2,
                c,
                pre,
                act,
            });
        }

        let (gf, bf) = cfg.final_ln();
        let (y, xhat_f, rstd_f) = layernorm(&x, t, d, p.at(gf), p.at(bf));
        let mut pooled = vec![0.0; d];
        for r in 0..t {
            for c in 0..d {
                pooled[c] += y[r * d + c];
            }
        }
        let inv = 1.0 / t as f64;
        pooled.iter_mut().for_each(|v| *v *= inv);
        (
            pooled,
            ForwardCache {
                tokens,
                layers,
                xhat_f,
                rstd_f,
            },
        )
    }

    fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> ParamSet {
        let cfg = &self.config;
        let (d, f) = (cfg.model_dim, cfg.ffn_dim);
        let p = &self.params;
        let t = cache.tokens.len();
        let mut g = p.zeros_like();

        let inv = 1.0 / t as f64;
        let dy: Vec<f64> = (0..t * d).map(|i| upstream[i % d] * inv).collect();
        let (gf, bf) = cfg.final_ln();
        let mut dx = layernorm_backward(&dy, &cache.xhat_f, &cache.rstd_f, p.at(gf), t, d, &mut g, gf, bf);

        for l in (0..cfg.layers).rev() {
            let lc = &cache.layers[l];
            let base = cfg.layer_base(l);
            let w = |o: usize| p.at(base + o);

            // feed-forward branch
            let dact = linear_backward(&lc.act, &dx, t, f, d, w(W2), &mut g, base + W2, base + B2);
            let dpre: Vec<f64> = dact
                .iter()
                .zip(&lc.pre)
                .map(|(g, z)| g * gelu_grad(*z))
                .collect();
            let dc = linear_backward(&lc.c, &dpre, t, d, f, w(W1), &mut g, base + W1, base + B1);
            let dmid_ln = layernorm_backward(
                &dc,
                &lc.xhat2,
                &lc.rstd2,
                w(LN2_G),
                t,
                d,
                &mut g,
                base + LN2_G,
                base + LN2_B,
            );
            let dmid: Vec<f64> = dx.iter().zip(&dmid_ln).map(|(a, b)| a + b).collect();

            // attention branch
            let dctx = linear_backward(&lc.ctx, &dmid, t, d, d, w(WO), &mut g, base + WO, base + BO);
            let (dq, dk, dv) = attention_backward(&lc.q, &lc.k, &lc.v, &lc.probs, &dctx, t, d, cfg.heads);
            let mut da = linear_backward(&lc.a, &dq, t, d, d, w(WQ), &mut g, base + WQ, base + BQ);
            let da_k = linear_backward(&lc.a, &dk, t, d, d, w(WK), &mut g, base + WK, base + BK);
            let da_v = linear_backward(&lc.a, &dv, t, d, d, w(WV), &mut g, base + WV, base + BV);
            for i in 0..t * d {
                da[i] += da_k[i] + da_v[i];
            }
            let din_ln = layernorm_backward(
                &da,
                &lc.xhat1,
                &lc.rstd1,
                w(LN1_G),
                t,
                d,
                &mut g,
                base + LN1_G,
                base + LN1_B,
            );
            debug_assert_eq!(lc.x_in.len(), t * d);
            dx = dmid.iter().zip(&din_ln).map(|(a, b)| a + b).collect();
        }

        for (r, &(pos, id)) in cache.tokens.iter().enumerate() {
            let row = &dx[r * d..(r + 1) * d];
            let id = id as usize;
            for (dst, v) in g.at_mut(TOK)[id * d..(id + 1) * d].iter_mut().zip(row) {
                *dst += v;
            }
            for (dst, v) in g.at_mut(POS)[pos * d..(pos + 1) * d].iter_mut().zip(row) {
                *dst += v;
            }
        }
        g
    }
}

/// `y = x·W + b` for `t` rows, `W` stored `din×dout`.
fn linear(x: &[f64], t: usize, din: usize, w: &[f64], b: &[f64], dout: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(t * dout);
    for _ in 0..t {
        y.extend_from_slice(b);
    }
    for r in 0..t {
        let yr = &mut y[r * dout..(r + 1) * dout];
        for k in 0..din {
            let xk = x[r * din + k];
            let wk = &w[k * dout..(k + 1) * dout];
            for (yj, wj) in yr.iter_mut().zip(wk) {
                *yj += xk * wj;
            }
        }
    }
    y
}

/// Accumulates `dW`, `db` into `g` and returns `dx`.
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    x: &[f64],
    dy: &[f64],
    t: usize,
    din: usize,
    dout: usize,
    w: &[f64],
    g: &mut ParamSet,
    wi: usize,
    bi: usize,
) -> Vec<f64> {
    {
        let dw = g.at_mut(wi);
        for r in 0..t {
            let dyr = &dy[r * dout..(r + 1) * dout];
            for k in 0..din {
                let xk = x[r * din + k];
                if xk == 0.0 {
                    continue;
                }
                for (dst, v) in dw[k * dout..(k + 1) * dout].iter_mut().zip(dyr) {
                    *dst += xk * v;
                }
            }
        }
    }
    {
        let db = g.at_mut(bi);
        for r in 0..t {
            for (dst, v) in db.iter_mut().zip(&dy[r * dout..(r + 1) * dout]) {
                *dst += v;
            }
        }
    }
    let mut dx = vec![0.0; t * din];
    for r in 0..t {
        let dyr = &dy[r * dout..(r + 1) * dout];
        for k in 0..din {
            let wk = &w[k * dout..(k + 1) * dout];
            dx[r * din + k] = wk.iter().zip(dyr).map(|(a, b)| a * b).sum();
        }
    }
    dx
}

/// Returns `(y, xhat, rstd)`.
fn layernorm(x: &[f64], t: usize, d: usize, gain: &[f64], bias: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; t * d];
    let mut xhat = vec![0.0; t * d];
    let mut rstd = vec![0.0; t];
    for r in 0..t {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let h = (row[c] - mean) * rs;
            xhat[r * d + c] = h;
            y[r * d + c] = h * gain[c] + bias[c];
        }
    }
    (y, xhat, rstd)
}

#[allow(clippy::too_many_arguments)]
fn layernorm_backward(
    dy: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    gain: &[f64],
    t: usize,
    d: usize,
    g: &mut ParamSet,
    gi: usize,
    bi: usize,
) -> Vec<f64> {
    {
        let dg = g.at_mut(gi);
        for r in 0..t {
            for c in 0..d {
                dg[c] += dy[r * d + c] * xhat[r * d + c];
            }
        }
    }
    {
        let db = g.at_mut(bi);
        for r in 0..t {
            for c in 0..d {
                db[c] += dy[r * d + c];
            }
        }
    }
    let mut dx = vec![0.0; t * d];
    for r in 0..t {
        let mut mean_dh = 0.0;
        let mut mean_dh_h = 0.0;
        for c in 0..d {
            let dh = dy[r * d + c] * gain[c];
            mean_dh += dh;
            mean_dh_h += dh * xhat[r * d + c];
        }
        mean_dh /= d as f64;
        mean_dh_h /= d as f64;
        for c in 0..d {
            let dh = dy[r * d + c] * gain[c];
            dx[r * d + c] = rstd[r] * (dh - mean_dh - xhat[r * d + c] * mean_dh_h);
        }
    }
    dx
}

/// Multi-head scaled dot-product self-attention over `t` positions.
/// Returns the concatenated head outputs and the `heads×t×t` probabilities.
fn attention(q: &[f64], k: &[f64], v: &[f64], t: usize, d: usize, heads: usize) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = vec![0.0; heads * t * t];
    let mut ctx = vec![0.0; t * d];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..t {
            let pr = &mut probs[(h * t + i) * t..(h * t + i + 1) * t];
            let qi = &q[i * d + off..i * d + off + dh];
            let mut max = f64::NEG_INFINITY;
            for j in 0..t {
                let kj = &k[j * d + off..j * d + off + dh];
                let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                pr[j] = s;
                max = max.max(s);
            }
            let mut z = 0.0;
            for s in pr.iter_mut() {
                *s = (*s - max).exp();
                z += *s;
            }
            for s in pr.iter_mut() {
                *s /= z;
            }
            let out = &mut ctx[i * d + off..i * d + off + dh];
            for j in 0..t {
                let vj = &v[j * d + off..j * d + off + dh];
                for (o, vv) in out.iter_mut().zip(vj) {
                    *o += pr[j] * vv;
                }
            }
        }
    }
    (ctx, probs)
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    dctx: &[f64],
    t: usize,
    d: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; t * d];
    let mut dk = vec![0.0; t * d];
    let mut dv = vec![0.0; t * d];
    let mut dp = vec![0.0; t];
    for h in 0..heads {
        let off = h * dh;
        for i in 0..t {
            let pr = &probs[(h * t + i) * t..(h * t + i + 1) * t];
            let dci = &dctx[i * d + off..i * d + off + dh];
            let mut weighted = 0.0;
            for j in 0..t {
                let vj = &v[j * d + off..j * d + off + dh];
                dp[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                weighted += pr[j] * dp[j];
                for c in 0..dh {
                    dv[j * d + off + c] += pr[j] * dci[c];
                }
            }
            for j in 0..t {
                let ds = pr[j] * (dp[j] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                for c in 0..dh {
                    dq[i * d + off + c] += ds * k[j * d + off + c];
                    dk[j * d + off + c] += ds * q[i * d + off + c];
                }
            }
        }
    }
    (dq, dk, dv)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn tiny(seed: u64) -> TransformerEncoder {
        TransformerEncoder::new(EncoderConfig {
            vocab_size: 12,
            layers: 2,
            model_dim: 8,
            heads: 2,
            ffn_dim: 16,
            max_len: 8,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = EncoderConfig::default();
        c.heads = 3;
        assert!(TransformerEncoder::new(c).is_err());
        c.heads = 4;
        c.layers = 0;
        assert!(TransformerEncoder::new(c).is_err());
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(tiny(1), tiny(1));
        assert_ne!(tiny(1).params(), tiny(2).params());
    }

    #[test]
    fn init_is_finite_with_unit_gains() {
        let e = tiny(3);
        assert!(e.params().all_finite());
        for t in e.params().iter().filter(|t| t.name.ends_with("gain")) {
            assert!(t.data.iter().all(|v| *v == 1.0), "{}", t.name);
        }
        for t in e.params().iter().filter(|t| t.name.ends_with(".b1") || t.name.ends_with("bias")) {
            assert!(t.data.iter().all(|v| *v == 0.0), "{}", t.name);
        }
    }

    #[test]
    fn single_token_pooling_is_that_state() {
        // with one position the mean is the final hidden state itself
        let e = tiny(4);
        let seq = TokenSequence::new(vec![5]);
        let (pooled, cache) = e.forward(&seq);
        let (gf, bf) = e.config.final_ln();
        let d = e.config.model_dim;
        for c in 0..d {
            let y = cache.xhat_f[c] * e.params.at(gf)[c] + e.params.at(bf)[c];
            assert_eq!(pooled[c], y);
        }
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let e = tiny(5);
        let seq = TokenSequence::new(vec![3, 4, 7, 2]);
        assert_eq!(e.encode(&seq).unwrap(), e.encode(&seq).unwrap());
    }

    #[test]
    fn masked_padding_does_not_change_output() {
        let e = tiny(6);
        let seq = TokenSequence::new(vec![3, 4, 7]);
        let padded = seq.padded(8, 0);
        let a = e.encode(&seq).unwrap();
        let b = e.encode(&padded).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn out_of_vocab_id_is_input_error() {
        let e = tiny(7);
        assert!(matches!(e.encode(&TokenSequence::new(vec![12])), Err(Error::Input(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let e = tiny(8);
        let g = e.encode_backward(&TokenSequence::new(vec![1, 2, 3]), &[0.0; 8]).unwrap();
        assert_eq!(g.sum_squares(), 0.0);
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let e = tiny(9);
        let seq = TokenSequence::new(vec![1, 2, 3, 9]);
        let up: Vec<f64> = (0..8).map(|i| (i as f64 - 3.5) / 4.0).collect();
        let up2: Vec<f64> = up.iter().map(|x| 2.0 * x).collect();
        let g1 = e.encode_backward(&seq, &up).unwrap().flatten();
        let g2 = e.encode_backward(&seq, &up2).unwrap().flatten();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn backward_shape_error() {
        let e = tiny(10);
        assert!(matches!(
            e.encode_backward(&TokenSequence::new(vec![1]), &[1.0; 3]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let e = tiny(11);
        let seq = TokenSequence::new(vec![1, 4, 4, 9, 2]).padded(7, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let up: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = e.encode_backward(&seq, &up).unwrap().flatten();
        let n = g.len();
        let h = 1e-5;
        let mut worst = 0.0f64;
        let mut checked = 0;
        for _ in 0..(n / 100).max(40) {
            let k = rng.random_range(0..n);
            let mut plus = e.clone();
            *plus.params.flat_mut(k) += h;
            let mut minus = e.clone();
            *minus.params.flat_mut(k) -= h;
            let fp: f64 = plus.encode(&seq).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum();
            let fm: f64 = minus.encode(&seq).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum();
            let num = (fp - fm) / (2.0 * h);
            let denom = g[k].abs().max(num.abs());
            if denom < 1e-7 {
                assert!((g[k] - num).abs() < 1e-9);
                continue;
            }
            checked += 1;
            worst = worst.max((g[k] - num).abs() / denom);
        }
        assert!(checked > 10);
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }
}
