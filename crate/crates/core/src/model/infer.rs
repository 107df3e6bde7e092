//! Incremental decoding with cached keys and values.

use super::transformer::{block, block_base, head_base, Model, POS_EMBED, TOK_EMBED};
use crate::autodiff::kernels::{self, AttnShape};
use crate::decoding::LanguageModel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::text::{TokenId, BOS, PAD, SEP};

/// Per-sequence decoding state: cached keys/values and the next-token distribution.
#[derive(Clone, Debug)]
pub struct KvCache<T> {
    len: usize,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    log_probs: Vec<f64>,
}

impl<T: Scalar> KvCache<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl<T: Scalar> Model<T> {
    /// Runs the prompt through the network in one pass and caches keys/values.
    pub fn prefill(&self, prompt: &[TokenId]) -> Result<KvCache<T>> {
        let cfg = self.config();
        let n = prompt.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty prompt".into()));
        }
        if n > cfg.max_seq_len {
            return Err(Error::SequenceTooLong { len: n, max: cfg.max_seq_len });
        }
        self.check_token(prompt)?;
        let d = cfg.embed_dim;
        let p = self.params();
        let mut x = Vec::with_capacity(n * d);
        for (i, &t) in prompt.iter().enumerate() {
            let tok = p[TOK_EMBED].row(t as usize);
            let pos = p[POS_EMBED].row(i);
            x.extend(tok.iter().zip(pos).map(|(&a, &b)| a + b));
        }
        let shape = AttnShape { batch: 1, seq: n, heads: cfg.heads, dim: d };
        let mut keys = Vec::with_capacity(cfg.layers);
        let mut values = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let w = |i: usize| p[block_base(l) + i].data();
            let (h, _, _) = kernels::layer_norm(&x, w(block::LN1_G), w(block::LN1_B), d);
            let qkv = kernels::linear(&h, w(block::QKV_W), Some(w(block::QKV_B)), n, d, 3 * d);
            let (att, _) = kernels::causal_attention(&qkv, shape);
            let mut k = Vec::with_capacity(n * d);
            let mut v = Vec::with_capacity(n * d);
            for row in qkv.chunks(3 * d) {
                k.extend_from_slice(&row[d..2 * d]);
                v.extend_from_slice(&row[2 * d..]);
            }
            keys.push(k);
            values.push(v);
            let proj = kernels::linear(&att, w(block::PROJ_W), Some(w(block::PROJ_B)), n, d, d);
            add_assign(&mut x, &proj);
            self.feed_forward(l, &mut x, n);
        }
        let last = &x[(n - 1) * d..];
        let log_probs = self.head(last);
        Ok(KvCache { len: n, keys, values, log_probs })
    }

    /// Appends one token and refreshes the next-token distribution.
    pub fn extend(&self, cache: &mut KvCache<T>, token: TokenId) -> Result<()> {
        let cfg = self.config();
        if cache.len >= cfg.max_seq_len {
            return Err(Error::SequenceTooLong { len: cache.len + 1, max: cfg.max_seq_len });
        }
        self.check_token(&[token])?;
        let d = cfg.embed_dim;
        let hd = d / cfg.heads;
        let scale = T::one() / T::of(hd as f64).sqrt();
        let p = self.params();
        let pos = cache.len;
        let mut x: Vec<T> =
            p[TOK_EMBED].row(token as usize).iter().zip(p[POS_EMBED].row(pos)).map(|(&a, &b)| a + b).collect();
        let t = pos + 1;
        let mut scores = vec![T::zero(); t];
        for l in 0..cfg.layers {
            let w = |i: usize| p[block_base(l) + i].data();
            let (h, _, _) = kernels::layer_norm(&x, w(block::LN1_G), w(block::LN1_B), d);
            let qkv = kernels::vec_mat(&h, w(block::QKV_W), w(block::QKV_B));
            cache.keys[l].extend_from_slice(&qkv[d..2 * d]);
            cache.values[l].extend_from_slice(&qkv[2 * d..]);
            let (keys, values) = (&cache.keys[l], &cache.values[l]);
            let mut att = vec![T::zero(); d];
            for head in 0..cfg.heads {
                let o = head * hd;
                let q = &qkv[o..o + hd];
                let mut max = T::neg_infinity();
                for (j, s) in scores.iter_mut().enumerate() {
                    *s = kernels::dot(q, &keys[j * d + o..j * d + o + hd]) * scale;
                    max = max.max(*s);
                }
                let mut z = T::zero();
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    z += *s;
                }
                let out = &mut att[o..o + hd];
                for (j, &s) in scores.iter().enumerate() {
                    let pj = s / z;
                    for (a, &v) in out.iter_mut().zip(&values[j * d + o..j * d + o + hd]) {
                        *a += pj * v;
                    }
                }
            }
            let proj = kernels::vec_mat(&att, w(block::PROJ_W), w(block::PROJ_B));
            add_assign(&mut x, &proj);
            self.feed_forward(l, &mut x, 1);
        }
        cache.log_probs = self.head(&x);
        cache.len = t;
        Ok(())
    }

    fn feed_forward(&self, l: usize, x: &mut [T], rows: usize) {
        let cfg = self.config();
        let (d, f) = (cfg.embed_dim, cfg.ff_dim);
        let w = |i: usize| self.params()[block_base(l) + i].data();
        let (h, _, _) = kernels::layer_norm(x, w(block::LN2_G), w(block::LN2_B), d);
        let mut hidden = if rows == 1 {
            kernels::vec_mat(&h, w(block::FF1_W), w(block::FF1_B))
        } else {
            kernels::linear(&h, w(block::FF1_W), Some(w(block::FF1_B)), rows, d, f)
        };
        hidden.iter_mut().for_each(|v| *v = kernels::gelu(*v));
        let out = if rows == 1 {
            kernels::vec_mat(&hidden, w(block::FF2_W), w(block::FF2_B))
        } else {
            kernels::linear(&hidden, w(block::FF2_W), Some(w(block::FF2_B)), rows, f, d)
        };
        add_assign(x, &out);
    }

    fn head(&self, x: &[T]) -> Vec<f64> {
        let cfg = self.config();
        let hb = head_base(cfg);
        let p = self.params();
        let (h, _, _) = kernels::layer_norm(x, p[hb].data(), p[hb + 1].data(), cfg.embed_dim);
        let logits = kernels::vec_mat(&h, p[hb + 2].data(), p[hb + 3].data());
        let mut lp = vec![T::zero(); logits.len()];
        kernels::log_softmax_into(&logits, &mut lp);
        let mut out: Vec<f64> = lp.iter().map(|v| v.to_f64_lossy()).collect();
        // Structural tokens never appear inside a response.
        for id in [PAD, BOS, SEP] {
            if let Some(v) = out.get_mut(id as usize) {
                *v = f64::NEG_INFINITY;
            }
        }
        out
    }

    fn check_token(&self, ids: &[TokenId]) -> Result<()> {
        let v = self.config().vocab_size;
        match ids.iter().find(|&&t| t as usize >= v) {
            Some(bad) => Err(Error::InvalidArgument(format!("token id {bad} outside vocabulary of {v}"))),
            None => Ok(()),
        }
    }
}

fn add_assign<T: Scalar>(x: &mut [T], y: &[T]) {
    for (a, &b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

impl<T: Scalar> LanguageModel for Model<T> {
    type State = KvCache<T>;

    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn start(&self, prompt: &[TokenId]) -> Result<Self::State> {
        self.prefill(prompt)
    }

    fn log_probs<'a>(&self, state: &'a Self::State) -> &'a [f64] {
        &state.log_probs
    }

    fn advance(&self, state: &mut Self::State, token: TokenId) -> Result<()> {
        self.extend(state, token)
    }

    fn room(&self, state: &Self::State) -> usize {
        self.config().max_seq_len.saturating_sub(state.len)
    }
}
