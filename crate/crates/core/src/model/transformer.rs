//! Decoder-only pre-norm transformer producing `log p(y_t | x, y_<t)`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::encode::{Batch, EncodedExample};
use crate::autodiff::kernels::AttnShape;
use crate::autodiff::{Array, Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) const TOK_EMBED: usize = 0;
pub(crate) const POS_EMBED: usize = 1;
pub(crate) const PER_LAYER: usize = 12;

/// Offsets of a block's tensors relative to its base index.
pub(crate) mod block {
    pub const LN1_G: usize = 0;
    pub const LN1_B: usize = 1;
    pub const QKV_W: usize = 2;
    pub const QKV_B: usize = 3;
    pub const PROJ_W: usize = 4;
    pub const PROJ_B: usize = 5;
    pub const LN2_G: usize = 6;
    pub const LN2_B: usize = 7;
    pub const FF1_W: usize = 8;
    pub const FF1_B: usize = 9;
    pub const FF2_W: usize = 10;
    pub const FF2_B: usize = 11;
}

const BLOCK_NAMES: [&str; PER_LAYER] = [
    "ln1.gain", "ln1.bias", "attn.qkv.weight", "attn.qkv.bias", "attn.proj.weight", "attn.proj.bias",
    "ln2.gain", "ln2.bias", "ffn.in.weight", "ffn.in.bias", "ffn.out.weight", "ffn.out.bias",
];

pub(crate) fn block_base(layer: usize) -> usize {
    2 + layer * PER_LAYER
}

pub(crate) fn head_base(cfg: &ModelConfig) -> usize {
    2 + cfg.layers * PER_LAYER
}

/// Names and shapes of every parameter tensor, in storage order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (v, d, f) = (cfg.vocab_size, cfg.embed_dim, cfg.ff_dim);
    let mut out = vec![
        ("embed.tokens".to_string(), vec![v, d]),
        ("embed.positions".to_string(), vec![cfg.max_seq_len, d]),
    ];
    for l in 0..cfg.layers {
        let shapes = [
            vec![d], vec![d], vec![d, 3 * d], vec![3 * d], vec![d, d], vec![d],
            vec![d], vec![d], vec![d, f], vec![f], vec![f, d], vec![d],
        ];
        for (name, shape) in BLOCK_NAMES.iter().zip(shapes) {
            out.push((format!("block{l}.{name}"), shape));
        }
    }
    out.push(("final_ln.gain".to_string(), vec![d]));
    out.push(("final_ln.bias".to_string(), vec![d]));
    out.push(("head.weight".to_string(), vec![d, v]));
    out.push(("head.bias".to_string(), vec![v]));
    out
}

/// Transformer parameters plus their configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Scalar> {
    config: ModelConfig,
    params: Vec<Array<T>>,
}

impl<T: Scalar> Model<T> {
    /// Normal(0, 0.02) weights, zero biases, unit gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::init_with_std(config, seed, 0.02)
    }

    pub fn init_with_std(config: ModelConfig, seed: u64, std: f64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let residual_scale = 1.0 / (2.0 * config.layers.max(1) as f64).sqrt();
        let params = param_layout(&config)
            .into_iter()
            .map(|(name, shape)| {
                let numel: usize = shape.iter().product();
                let data: Vec<T> = if name.ends_with(".gain") {
                    vec![T::one(); numel]
                } else if name.ends_with(".bias") {
                    vec![T::zero(); numel]
                } else {
                    let s = if name.ends_with("proj.weight") || name.ends_with("ffn.out.weight") { residual_scale } else { 1.0 };
                    (0..numel).map(|_| T::of(normal.sample(&mut rng) * s)).collect()
                };
                Array::new(shape, data).expect("layout shape")
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Assembles a model from tensors, checking them against the layout.
    pub fn from_params(config: ModelConfig, params: Vec<Array<T>>) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != params.len() {
            return Err(Error::Shape(format!("expected {} tensors, got {}", layout.len(), params.len())));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::Shape(format!("{name}: expected {shape:?}, got {:?}", p.shape())));
            }
            if !p.is_finite() {
                return Err(Error::InvalidArgument(format!("{name}: non-finite values")));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Array<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array<T>] {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        param_layout(&self.config).into_iter().map(|(n, _)| n).collect()
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Array<T>> {
        let idx = self.param_names().iter().position(|n| n == name)?;
        self.params.get_mut(idx)
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Array::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { config: self.config.clone(), params: self.params.iter().map(Array::cast).collect() }
    }

    /// Registers all tensors as trainable leaves.
    pub fn attach(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }

    /// Registers all tensors as constants (inference).
    pub fn attach_frozen(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.params.iter().map(|p| g.constant(p.clone())).collect()
    }

    /// Log-probabilities `[batch * seq, V]`; row `b * seq + i` predicts token `i + 1`.
    ///
    /// Dropout is applied only when `rng` is given and the configured rate is positive.
    pub fn forward(&self, g: &mut Graph<T>, vars: &[Var], batch: &Batch, mut rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let cfg = &self.config;
        if batch.seq > cfg.max_seq_len {
            return Err(Error::SequenceTooLong { len: batch.seq, max: cfg.max_seq_len });
        }
        if let Some(&bad) = batch.tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::InvalidArgument(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)));
        }
        let ids: Vec<usize> = batch.tokens.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..batch.batch).flat_map(|_| 0..batch.seq).collect();
        let tok = g.gather(vars[TOK_EMBED], &ids);
        let pos = g.gather(vars[POS_EMBED], &positions);
        let mut x = g.add(tok, pos);
        x = self.maybe_dropout(g, x, rng.as_deref_mut());
        let shape = AttnShape { batch: batch.batch, seq: batch.seq, heads: cfg.heads, dim: cfg.embed_dim };
        for l in 0..cfg.layers {
            let p = |i: usize| vars[block_base(l) + i];
            let h = g.layer_norm(x, p(block::LN1_G), p(block::LN1_B));
            let qkv = g.linear(h, p(block::QKV_W), p(block::QKV_B));
            let att = g.causal_attention(qkv, shape);
            let proj = g.linear(att, p(block::PROJ_W), p(block::PROJ_B));
            let proj = self.maybe_dropout(g, proj, rng.as_deref_mut());
            x = g.add(x, proj);
            let h = g.layer_norm(x, p(block::LN2_G), p(block::LN2_B));
            let f = g.linear(h, p(block::FF1_W), p(block::FF1_B));
            let f = g.gelu(f);
            let f = g.linear(f, p(block::FF2_W), p(block::FF2_B));
            let f = self.maybe_dropout(g, f, rng.as_deref_mut());
            x = g.add(x, f);
        }
        let hb = head_base(cfg);
        let h = g.layer_norm(x, vars[hb], vars[hb + 1]);
        let logits = g.linear(h, vars[hb + 2], vars[hb + 3]);
        g.log_softmax(logits)
    }

    fn maybe_dropout(&self, g: &mut Graph<T>, x: Var, rng: Option<&mut ChaCha8Rng>) -> Var {
        let rate = self.config.dropout;
        match rng {
            Some(rng) if rate > 0.0 => {
                let keep = T::of(1.0 / (1.0 - rate));
                let mask = (0..g.value(x).len())
                    .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
                    .collect();
                g.dropout(x, mask)
            }
            _ => x,
        }
    }

    /// Gradient-free forward pass.
    pub fn log_probs(&self, batch: &Batch) -> Result<Array<T>> {
        let mut g = Graph::new();
        let vars = self.attach_frozen(&mut g);
        let out = self.forward(&mut g, &vars, batch, None)?;
        Ok(g.value(out).clone())
    }

    /// `log p(y_t | x, y_<t)` for every target token and EOS.
    pub fn target_logprobs(&self, example: &EncodedExample) -> Result<Vec<T>> {
        let batch = Batch::of_examples(&[example]);
        let lp = self.log_probs(&batch)?;
        Ok(example.scored_positions().map(|p| lp.row(p - 1)[example.tokens[p] as usize]).collect())
    }

    /// `(row, token)` pairs selecting each scored token of `examples[b]` from a batch forward.
    pub fn scored_picks(examples: &[&EncodedExample], seq: usize) -> Vec<Vec<(usize, usize)>> {
        examples
            .iter()
            .enumerate()
            .map(|(b, e)| e.scored_positions().map(|p| (b * seq + p - 1, e.tokens[p] as usize)).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::encode::encode_example;

    fn tiny(v: usize) -> ModelConfig {
        ModelConfig { vocab_size: v, embed_dim: 8, layers: 2, heads: 2, ff_dim: 16, max_seq_len: 16, dropout: 0.0 }
    }

    #[test]
    fn rows_are_log_distributions() {
        let m = Model::<f32>::init_with_std(tiny(12), 1, 0.3).unwrap();
        let batch = Batch::from_sequences([&[1, 5, 6, 7, 3, 8][..], &[1, 9, 3, 10][..]]);
        let lp = m.log_probs(&batch).unwrap();
        assert_eq!(lp.shape(), &[12, 12]);
        for r in 0..lp.rows() {
            let s: f64 = lp.row(r).iter().map(|v| (*v as f64).exp()).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn future_tokens_do_not_affect_past() {
        let m = Model::<f32>::init_with_std(tiny(12), 2, 0.3).unwrap();
        let a = [1u32, 5, 6, 7, 3, 8, 9];
        let mut b = a;
        b[4] = 11;
        let la = m.log_probs(&Batch::from_sequences([&a[..]])).unwrap();
        let lb = m.log_probs(&Batch::from_sequences([&b[..]])).unwrap();
        for r in 0..4 {
            assert_eq!(la.row(r), lb.row(r), "row {r} changed");
        }
        assert_ne!(la.row(4), lb.row(4));
    }

    #[test]
    fn batch_permutation_permutes_outputs() {
        let m = Model::<f32>::init_with_std(tiny(12), 3, 0.3).unwrap();
        let s1 = [1u32, 5, 6, 3, 8];
        let s2 = [1u32, 9, 10, 11, 3];
        let ab = m.log_probs(&Batch::from_sequences([&s1[..], &s2[..]])).unwrap();
        let ba = m.log_probs(&Batch::from_sequences([&s2[..], &s1[..]])).unwrap();
        for r in 0..5 {
            assert_eq!(ab.row(r), ba.row(5 + r));
            assert_eq!(ab.row(5 + r), ba.row(r));
        }
    }

    #[test]
    fn zero_head_gives_uniform_target_logprobs() {
        let mut m = Model::<f32>::init(tiny(10), 4).unwrap();
        m.param_mut("head.weight").unwrap().data_mut().fill(0.0);
        let e = encode_example(&[vec![5, 6]], &[], &[7, 8], 16).unwrap();
        let lps = m.target_logprobs(&e).unwrap();
        assert_eq!(lps.len(), 3);
        for lp in lps {
            assert!((lp + (10f32).ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn overlong_sequences_rejected() {
        let m = Model::<f32>::init(tiny(10), 4).unwrap();
        let long: Vec<u32> = vec![5; 17];
        assert!(matches!(m.log_probs(&Batch::from_sequences([&long[..]])), Err(Error::SequenceTooLong { .. })));
    }

    #[test]
    fn init_is_deterministic() {
        let a = Model::<f32>::init(tiny(10), 9).unwrap();
        let b = Model::<f32>::init(tiny(10), 9).unwrap();
        assert_eq!(a, b);
    }
}
