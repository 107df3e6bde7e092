//! Optimization loop: batching, on-line generation for sequence-level
//! unlikelihood, running unigram statistics, Adam with warmup and
//! inverse-square-root decay.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Array, Graph};
use crate::data::Tokenized;
use crate::decoding::greedy;
use crate::error::{Error, Result};
use crate::metrics::{context_repetition, label_repetition, perplexity};
use crate::model::{encode_parts, encode_prompt, EncodedExample, Model};
use crate::objectives::{batch_loss, identity_candidates, sequence_candidates, MixWeights, Mode, Scaler, UlSequence};
use crate::scalar::Scalar;
use crate::text::TokenId;
use crate::vocab_stats::{HumanUnigram, RunningUnigram, DEFAULT_WINDOW};

/// `peak * min(step / warmup, sqrt(warmup / step))`.
pub fn lr_schedule(step: usize, peak: f64, warmup: usize) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    peak * (s / w).min((w / s).sqrt())
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &[Array<T>]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update; `names` label parameters in errors.
    pub fn step(&mut self, params: &mut [Array<T>], grads: &[Vec<T>], lr: f64, names: &[String]) -> Result<()> {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (c1, c2) = (1.0 - self.beta1.powi(self.t as i32), 1.0 - self.beta2.powi(self.t as i32));
        let step = T::of(lr / c1);
        let inv_c2 = T::of(1.0 / c2);
        let eps = T::of(self.eps);
        let one = T::one();
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                *w -= step * *mi / ((*vi * inv_c2).sqrt() + eps);
            }
            if !p.is_finite() {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(Error::NonFiniteUpdate { param: name });
            }
        }
        Ok(())
    }
}

/// Rescales gradients in place to a global L2 norm of at most `max_norm`; returns the pre-clip norm.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub weights: MixWeights,
    pub ngram: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub warmup: usize,
    pub seed: u64,
    /// Batches in the running unigram window.
    pub window: usize,
    pub eval_interval: usize,
    /// Length cap of generated continuations.
    pub gen_max_len: usize,
    pub clip: f64,
    /// Validation examples scored for perplexity (all when `None`).
    pub valid_limit: Option<usize>,
    /// Validation examples decoded for repetition metrics.
    pub valid_gen: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Mle,
            weights: MixWeights::uniform(1.0),
            ngram: 3,
            batch_size: 16,
            steps: 1000,
            lr: 1e-3,
            warmup: 100,
            seed: 0,
            window: DEFAULT_WINDOW,
            eval_interval: 100,
            gen_max_len: 32,
            clip: 1.0,
            valid_limit: Some(200),
            valid_gen: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.warmup == 0 || self.ngram == 0 || self.window == 0 {
            return Err(Error::Config("steps, batch_size, warmup, ngram and window must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config("clip must be positive".into()));
        }
        self.weights.validate()
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    /// Mean per-token likelihood loss since the previous row.
    pub mle_loss: f64,
    /// Mean per-example unlikelihood loss since the previous row.
    pub ul_loss: f64,
    pub lr: f64,
    pub valid_ppl: Option<f64>,
    pub valid_ctx_rep: Option<f64>,
    pub valid_lbl_rep: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

pub const LOG_HEADER: &str = "step,mle_loss,ul_loss,lr,valid_ppl,valid_ctx_rep,valid_lbl_rep";

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut out = String::from(LOG_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.8},{},{},{}\n",
                r.step,
                r.mle_loss,
                r.ul_loss,
                r.lr,
                opt(r.valid_ppl),
                opt(r.valid_ctx_rep),
                opt(r.valid_lbl_rep)
            ));
        }
        out
    }
}

/// Tokenized corpora for one run.
#[derive(Clone, Debug, Default)]
pub struct TrainData {
    /// Likelihood examples (the coherent set in contradiction mode).
    pub train: Vec<Tokenized>,
    /// Contradicting examples, used only in contradiction mode.
    pub negatives: Vec<Tokenized>,
    pub valid: Vec<Tokenized>,
    /// Gold unigram distribution, required by the vocabulary mode.
    pub human: Option<HumanUnigram>,
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    /// Parameters at the best validation perplexity.
    pub best: Model<f32>,
    pub best_step: usize,
    pub best_ppl: f64,
    pub log: TrainLog,
}

/// Endless shuffled index stream, reshuffled each epoch.
struct Cursor {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Cursor {
    fn new(n: usize, rng: ChaCha8Rng) -> Self {
        Self { order: (0..n).collect(), pos: n, rng }
    }

    fn take(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k && !self.order.is_empty() {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn encode_all(data: &[Tokenized], max: usize) -> Result<Vec<EncodedExample>> {
    data.iter().map(|t| t.encode(max)).collect()
}

/// Greedy continuation of each context under `model`.
pub fn generate_greedy<T: Scalar>(model: &Model<T>, contexts: &[&[TokenId]], max_len: usize) -> Result<Vec<Vec<TokenId>>> {
    let max_seq = model.config().max_seq_len;
    contexts
        .iter()
        .map(|c| {
            let prompt = encode_prompt(c, max_len, max_seq);
            Ok(greedy(model, &prompt, max_len)?.tokens)
        })
        .collect()
}

/// Trains `model` in place of a fresh copy and returns final and best parameters.
pub fn train(
    cfg: &TrainConfig,
    init: Model<f32>,
    data: &TrainData,
    mut progress: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let ul_active = cfg.weights.active(cfg.mode);
    if cfg.mode == Mode::Nli && ul_active && data.negatives.is_empty() {
        return Err(Error::InvalidArgument("contradiction mode needs contradicting examples".into()));
    }
    if cfg.mode == Mode::UlVocab && ul_active && data.human.is_none() {
        return Err(Error::InvalidArgument("vocabulary mode needs the human unigram distribution".into()));
    }
    let max_seq = init.config().max_seq_len;
    let vocab_size = init.config().vocab_size;
    let gold = encode_all(&data.train, max_seq)?;
    let negatives: Vec<UlSequence> = if cfg.mode == Mode::Nli && ul_active {
        data.negatives
            .iter()
            .map(|t| {
                let encoded = encode_parts(&t.context, &t.target, false, max_seq)?;
                let candidates =
                    identity_candidates(encoded.target(), &Scaler::Constant(cfg.weights.alpha_nli));
                Ok(UlSequence { encoded, candidates })
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let valid_take = cfg.valid_limit.unwrap_or(data.valid.len()).min(data.valid.len());
    let valid = encode_all(&data.valid[..valid_take], max_seq)?;
    let valid_gen: Vec<&Tokenized> = data.valid.iter().take(cfg.valid_gen).collect();
    let p_star = data.human.as_ref().map(HumanUnigram::distribution).unwrap_or_default();

    let mut model = init;
    let names = model.param_names();
    let mut adam = Adam::new(model.params());
    let mut cursor = Cursor::new(gold.len(), derived_rng(cfg.seed, 1));
    let mut neg_cursor = Cursor::new(negatives.len(), derived_rng(cfg.seed, 2));
    let mut dropout_rng = derived_rng(cfg.seed, 3);
    let mut stats = RunningUnigram::new(vocab_size, cfg.window)?;

    let mut log = TrainLog::default();
    let mut best = model.clone();
    let mut best_step = 0;
    let mut best_ppl = f64::INFINITY;
    let (mut mle_acc, mut ul_acc, mut acc_n) = (0.0, 0.0, 0usize);

    for step in 1..=cfg.steps {
        let idx = cursor.take(cfg.batch_size);
        let batch: Vec<&EncodedExample> = idx.iter().map(|&i| &gold[i]).collect();

        let mut ul_seqs: Vec<UlSequence> = Vec::new();
        if ul_active && cfg.mode.uses_generation() {
            let contexts: Vec<&[TokenId]> = idx.iter().map(|&i| data.train[i].context.as_slice()).collect();
            let generated = generate_greedy(&model, &contexts, cfg.gen_max_len)?;
            let snapshot = stats.distribution();
            if cfg.mode == Mode::UlVocab {
                stats.update(generated.iter().flatten());
            }
            let scaler = Scaler::VocabMismatch { p_model: &snapshot, p_star: &p_star };
            for (ctx, y) in contexts.iter().zip(&generated) {
                if y.is_empty() {
                    continue;
                }
                let candidates = sequence_candidates(cfg.mode, &cfg.weights, ctx, y, cfg.ngram, &scaler)?;
                let encoded = encode_parts(ctx, y, false, max_seq)?;
                ul_seqs.push(UlSequence { encoded, candidates });
            }
        }
        let neg_refs: Vec<&UlSequence> = if negatives.is_empty() {
            ul_seqs.iter().collect()
        } else {
            neg_cursor.take(cfg.batch_size).into_iter().map(|i| &negatives[i]).collect()
        };

        let mut g = Graph::new();
        let vars = model.attach(&mut g);
        let rng = (model.config().dropout > 0.0).then_some(&mut dropout_rng);
        let bl = batch_loss(&model, &mut g, &vars, &batch, &neg_refs, rng)?;
        g.backward(bl.loss)?;
        let mut grads: Vec<Vec<f32>> = vars.iter().map(|&v| g.grad_array(v).into_data()).collect();
        drop(g);
        clip_grad_norm(&mut grads, cfg.clip);
        let lr = lr_schedule(step, cfg.lr, cfg.warmup);
        adam.step(model.params_mut(), &grads, lr, &names)?;

        mle_acc += bl.mle_sum / bl.mle_tokens.max(1) as f64;
        ul_acc += bl.ul_sum / batch.len() as f64;
        acc_n += 1;

        if step % cfg.eval_interval.max(1) == 0 || step == cfg.steps {
            let valid_ppl = if valid.is_empty() { None } else { Some(perplexity(&model, &valid)?) };
            let (mut ctx_rep, mut lbl_rep) = (None, None);
            if !valid_gen.is_empty() {
                let contexts: Vec<&[TokenId]> = valid_gen.iter().map(|t| t.context.as_slice()).collect();
                let gens = generate_greedy(&model, &contexts, cfg.gen_max_len)?;
                let n = gens.len() as f64;
                let mut c = 0.0;
                let mut l = 0.0;
                for (y, ctx) in gens.iter().zip(&contexts) {
                    c += context_repetition(y, ctx, cfg.ngram)?;
                    l += label_repetition(y, cfg.ngram)?;
                }
                ctx_rep = Some(c / n);
                lbl_rep = Some(l / n);
            }
            let row = LogRow {
                step,
                mle_loss: mle_acc / acc_n as f64,
                ul_loss: ul_acc / acc_n as f64,
                lr,
                valid_ppl,
                valid_ctx_rep: ctx_rep,
                valid_lbl_rep: lbl_rep,
            };
            if let Some(p) = valid_ppl {
                if p < best_ppl {
                    best_ppl = p;
                    best_step = step;
                    best = model.clone();
                }
            }
            progress(&row);
            log.rows.push(row);
            (mle_acc, ul_acc, acc_n) = (0.0, 0.0, 0);
        }
    }
    if best_step == 0 {
        best = model.clone();
        best_step = cfg.steps;
    }
    Ok(TrainOutcome { model, best, best_step, best_ppl, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_schedule(100, 1e-3, 100), 1e-3);
        assert!((lr_schedule(400, 1e-3, 100) - 5e-4).abs() < 1e-15);
        assert!((lr_schedule(1, 1e-3, 100) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn adam_zero_grad_is_identity() {
        let mut p = vec![Array::from_vec(vec![1.0f64, -2.0])];
        let mut opt = Adam::new(&p);
        opt.step(&mut p, &[vec![0.0, 0.0]], 0.1, &[]).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut p = vec![Array::from_vec(vec![0.0f64, 0.0, 0.0])];
        let mut opt = Adam::new(&p);
        opt.step(&mut p, &[vec![0.5, -3.0, 1e-3]], 0.01, &[]).unwrap();
        for (w, s) in p[0].data().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((w - 0.01 * s).abs() < 1e-6, "{w}");
        }
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = vec![Array::from_vec(vec![0.0f64])];
        let mut opt = Adam::new(&p);
        let r = opt.step(&mut p, &[vec![f64::NAN]], 0.01, &["w".to_string()]);
        assert!(matches!(r, Err(Error::NonFiniteUpdate { .. })));
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![vec![3.0f64], vec![4.0]];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-12 && (g[1][0] - 0.8).abs() < 1e-12);
        let mut small = vec![vec![0.1f64]];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small[0][0], 0.1);
    }

    #[test]
    fn cursor_covers_each_epoch() {
        let mut c = Cursor::new(5, derived_rng(0, 0));
        let mut a = c.take(5);
        a.sort();
        assert_eq!(a, vec![0, 1, 2, 3, 4]);
        assert_eq!(c.take(7).len(), 7);
    }
}
