//! Autoregressive decoding: greedy, beam, beam with context n-gram blocking, nucleus.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::text::{TokenId, EOS};

/// Anything that can score the next token given a growing prefix.
pub trait LanguageModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;
    /// Consumes the prompt; the returned state exposes the first next-token distribution.
    fn start(&self, prompt: &[TokenId]) -> Result<Self::State>;
    /// Natural-log next-token distribution (`-inf` for impossible tokens).
    fn log_probs<'a>(&self, state: &'a Self::State) -> &'a [f64];
    fn advance(&self, state: &mut Self::State, token: TokenId) -> Result<()>;
    /// How many more tokens `advance` accepts.
    fn room(&self, _state: &Self::State) -> usize {
        usize::MAX
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Greedy,
    Beam,
    BeamBlock,
    Nucleus,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "beam" => Ok(Self::Beam),
            "beam-block" | "beam_block" => Ok(Self::BeamBlock),
            "nucleus" => Ok(Self::Nucleus),
            other => Err(Error::InvalidArgument(format!("unknown decoding strategy {other:?}"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Greedy => "greedy",
            Self::Beam => "beam",
            Self::BeamBlock => "beam-block",
            Self::Nucleus => "nucleus",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub beam_size: usize,
    pub block_n: usize,
    pub nucleus_p: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { strategy: Strategy::Greedy, beam_size: 5, block_n: 3, nucleus_p: 0.9, max_len: 32, seed: 0 }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be >= 1".into()));
        }
        if self.block_n == 0 {
            return Err(Error::Config("block_n must be >= 1".into()));
        }
        if !(self.nucleus_p > 0.0 && self.nucleus_p <= 1.0) {
            return Err(Error::Config("nucleus p must lie in (0, 1]".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be >= 1".into()));
        }
        Ok(())
    }

    /// Short label used in reports, e.g. `beam-block(5,3)`.
    pub fn label(&self) -> String {
        match self.strategy {
            Strategy::Greedy => "greedy".into(),
            Strategy::Beam => format!("beam({})", self.beam_size),
            Strategy::BeamBlock => format!("beam-block({},{})", self.beam_size, self.block_n),
            Strategy::Nucleus => format!("nucleus({})", self.nucleus_p),
        }
    }
}

/// A decoded continuation (EOS stripped) with its summed log-probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<TokenId>,
    pub score: f64,
    /// Set when n-gram blocking dead-ended and an unblocked step was taken.
    pub fallback: bool,
}

/// Runs the configured strategy. `context` feeds n-gram blocking; `index`
/// selects the sampling stream so parallel decodes stay reproducible.
pub fn decode<M: LanguageModel>(
    model: &M,
    prompt: &[TokenId],
    context: &[TokenId],
    cfg: &DecodeConfig,
    index: u64,
) -> Result<Decoded> {
    match cfg.strategy {
        Strategy::Greedy => greedy(model, prompt, cfg.max_len),
        Strategy::Beam => beam(model, prompt, cfg.beam_size, cfg.max_len),
        Strategy::BeamBlock => beam_block(model, prompt, context, cfg.beam_size, cfg.block_n, cfg.max_len),
        Strategy::Nucleus => nucleus(model, prompt, cfg.nucleus_p, cfg.max_len, cfg.seed, index),
    }
}

fn argmax(lp: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in lp.iter().enumerate() {
        if v == f64::NEG_INFINITY || v.is_nan() {
            continue;
        }
        if best.is_none_or(|b| v > lp[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn greedy<M: LanguageModel>(model: &M, prompt: &[TokenId], max_len: usize) -> Result<Decoded> {
    let mut state = model.start(prompt)?;
    let mut tokens = Vec::new();
    let mut score = 0.0;
    while tokens.len() < max_len {
        let lp = model.log_probs(&state);
        let Some(tok) = argmax(lp) else { break };
        score += lp[tok];
        if tok as TokenId == EOS {
            break;
        }
        tokens.push(tok as TokenId);
        if tokens.len() == max_len || model.room(&state) == 0 {
            break;
        }
        model.advance(&mut state, tok as TokenId)?;
    }
    Ok(Decoded { tokens, score, fallback: false })
}

pub fn beam<M: LanguageModel>(model: &M, prompt: &[TokenId], beam_size: usize, max_len: usize) -> Result<Decoded> {
    beam_search(model, prompt, beam_size, max_len, None)
}

/// Beam search that forbids completing any `block_n`-gram of `context`.
pub fn beam_block<M: LanguageModel>(
    model: &M,
    prompt: &[TokenId],
    context: &[TokenId],
    beam_size: usize,
    block_n: usize,
    max_len: usize,
) -> Result<Decoded> {
    if block_n == 0 {
        return Err(Error::InvalidArgument("block_n must be >= 1".into()));
    }
    let blocker = Blocker::new(context, block_n);
    beam_search(model, prompt, beam_size, max_len, Some(&blocker))
}

/// Maps each `(n-1)`-token prefix of a context n-gram to the tokens that would complete it.
struct Blocker {
    n: usize,
    next: HashMap<Vec<TokenId>, Vec<TokenId>>,
}

impl Blocker {
    fn new(context: &[TokenId], n: usize) -> Self {
        let mut next: HashMap<Vec<TokenId>, Vec<TokenId>> = HashMap::new();
        for w in context.windows(n) {
            let e = next.entry(w[..n - 1].to_vec()).or_default();
            if !e.contains(&w[n - 1]) {
                e.push(w[n - 1]);
            }
        }
        Self { n, next }
    }

    fn blocked(&self, prefix: &[TokenId]) -> &[TokenId] {
        if prefix.len() + 1 < self.n {
            return &[];
        }
        let key = &prefix[prefix.len() + 1 - self.n..];
        self.next.get(key).map(Vec::as_slice).unwrap_or(&[])
    }
}

struct Hyp<S> {
    tokens: Vec<TokenId>,
    score: f64,
    state: S,
}

fn better(a: (&[TokenId], f64), b: (&[TokenId], f64)) -> bool {
    match a.1.total_cmp(&b.1) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => a.0 < b.0,
    }
}

fn beam_search<M: LanguageModel>(
    model: &M,
    prompt: &[TokenId],
    beam_size: usize,
    max_len: usize,
    blocker: Option<&Blocker>,
) -> Result<Decoded> {
    if beam_size == 0 {
        return Err(Error::InvalidArgument("beam_size must be >= 1".into()));
    }
    let mut active = vec![Hyp { tokens: Vec::new(), score: 0.0, state: model.start(prompt)? }];
    // Completed (EOS or length-capped) hypotheses: tokens, score.
    let mut done: Vec<(Vec<TokenId>, f64)> = Vec::new();
    let mut fallback = false;
    let mut blocked = vec![false; model.vocab_size()];
    while !active.is_empty() {
        // (score, beam index, token)
        let mut expansions: Vec<(f64, usize, TokenId)> = Vec::new();
        for (bi, h) in active.iter().enumerate() {
            let lp = model.log_probs(&h.state);
            let mut n_blocked = 0;
            if let Some(b) = blocker {
                for &t in b.blocked(&h.tokens) {
                    if lp.get(t as usize).is_some_and(|v| v.is_finite()) {
                        blocked[t as usize] = true;
                        n_blocked += 1;
                    }
                }
            }
            let n_allowed = lp.iter().filter(|v| v.is_finite()).count();
            let unblock = n_blocked > 0 && n_blocked == n_allowed;
            fallback |= unblock;
            for (t, &v) in lp.iter().enumerate() {
                if v.is_finite() && (unblock || !blocked[t]) {
                    expansions.push((h.score + v, bi, t as TokenId));
                }
            }
            if let Some(b) = blocker {
                for &t in b.blocked(&h.tokens) {
                    if let Some(x) = blocked.get_mut(t as usize) {
                        *x = false;
                    }
                }
            }
        }
        expansions.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| active[a.1].tokens.cmp(&active[b.1].tokens))
                .then_with(|| a.2.cmp(&b.2))
        });
        let mut next: Vec<Hyp<M::State>> = Vec::with_capacity(beam_size);
        for (rank, &(score, bi, tok)) in expansions.iter().enumerate() {
            if next.len() == beam_size && rank >= beam_size {
                break;
            }
            let parent = &active[bi];
            if tok == EOS {
                if rank < beam_size {
                    done.push((parent.tokens.clone(), score));
                }
                continue;
            }
            if next.len() < beam_size {
                let mut tokens = parent.tokens.clone();
                tokens.push(tok);
                next.push(Hyp { tokens, score, state: parent.state.clone() });
            }
        }
        active = Vec::with_capacity(next.len());
        for mut h in next {
            let tok = *h.tokens.last().expect("non-empty");
            if h.tokens.len() >= max_len || model.room(&h.state) == 0 {
                done.push((h.tokens, h.score));
            } else {
                model.advance(&mut h.state, tok)?;
                active.push(h);
            }
        }
        let best_done = done.iter().map(|d| d.1).fold(f64::NEG_INFINITY, f64::max);
        let best_active = active.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        if !done.is_empty() && best_active <= best_done {
            break;
        }
    }
    let mut best: Option<(Vec<TokenId>, f64)> = None;
    for (tokens, score) in done {
        if best.as_ref().is_none_or(|b| better((&tokens, score), (&b.0, b.1))) {
            best = Some((tokens, score));
        }
    }
    let (tokens, score) = best.unwrap_or((Vec::new(), f64::NEG_INFINITY));
    Ok(Decoded { tokens, score, fallback })
}

/// Indices of the smallest probability prefix (descending, ties by id) whose mass reaches `p`.
pub fn nucleus_set(probs: &[f64], p: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let total: f64 = order.iter().map(|&i| probs[i]).sum();
    let mut cum = 0.0;
    let mut cut = order.len();
    for (k, &i) in order.iter().enumerate() {
        cum += probs[i];
        if cum >= p * total {
            cut = k + 1;
            break;
        }
    }
    order.truncate(cut);
    order
}

/// Draws one token from the renormalized nucleus.
pub fn sample_nucleus(probs: &[f64], p: f64, rng: &mut impl Rng) -> Option<usize> {
    let set = nucleus_set(probs, p);
    let mass: f64 = set.iter().map(|&i| probs[i]).sum();
    if set.is_empty() {
        return None;
    }
    let u = rng.gen::<f64>() * mass;
    let mut acc = 0.0;
    for &i in &set {
        acc += probs[i];
        if u < acc {
            return Some(i);
        }
    }
    set.last().copied()
}

/// Seeded sampling stream for decode number `index`.
pub fn decode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn nucleus<M: LanguageModel>(
    model: &M,
    prompt: &[TokenId],
    p: f64,
    max_len: usize,
    seed: u64,
    index: u64,
) -> Result<Decoded> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!("nucleus p must lie in (0, 1], got {p}")));
    }
    let mut rng = decode_rng(seed, index);
    let mut state = model.start(prompt)?;
    let mut tokens = Vec::new();
    let mut score = 0.0;
    let mut probs = Vec::new();
    while tokens.len() < max_len {
        let lp = model.log_probs(&state);
        probs.clear();
        probs.extend(lp.iter().map(|v| v.exp()));
        let Some(tok) = sample_nucleus(&probs, p, &mut rng) else { break };
        score += lp[tok];
        if tok as TokenId == EOS {
            break;
        }
        tokens.push(tok as TokenId);
        if tokens.len() == max_len || model.room(&state) == 0 {
            break;
        }
        model.advance(&mut state, tok as TokenId)?;
    }
    Ok(Decoded { tokens, score, fallback: false })
}

/// Test and verification helpers: small table-driven language models.
pub mod toy {
    use super::*;

    /// Next-token distribution is a pure function of the generated suffix.
    pub struct FnModel<F> {
        pub vocab: usize,
        pub f: F,
    }

    #[derive(Clone, Debug)]
    pub struct FnState {
        pub prefix: Vec<TokenId>,
        pub log_probs: Vec<f64>,
        pub prompt_len: usize,
    }

    impl<F> LanguageModel for FnModel<F>
    where
        F: Fn(&[TokenId]) -> Vec<f64>,
    {
        type State = FnState;

        fn vocab_size(&self) -> usize {
            self.vocab
        }

        fn start(&self, prompt: &[TokenId]) -> Result<FnState> {
            let prefix = prompt.to_vec();
            let log_probs = (self.f)(&prefix);
            Ok(FnState { prefix, log_probs, prompt_len: prompt.len() })
        }

        fn log_probs<'a>(&self, state: &'a FnState) -> &'a [f64] {
            &state.log_probs
        }

        fn advance(&self, state: &mut FnState, token: TokenId) -> Result<()> {
            state.prefix.push(token);
            state.log_probs = (self.f)(&state.prefix);
            Ok(())
        }
    }

    /// Normalizes arbitrary scores into a log-distribution.
    pub fn log_normalize(scores: &[f64]) -> Vec<f64> {
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
        scores.iter().map(|s| s - max - z.ln()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::toy::*;
    use super::*;

    fn deterministic_model() -> FnModel<impl Fn(&[TokenId]) -> Vec<f64>> {
        // Emits 5 6 7 then EOS with probability 1, whatever the prompt.
        FnModel {
            vocab: 8,
            f: |prefix: &[TokenId]| {
                let generated = prefix.iter().rev().take_while(|&&t| t >= 5).count();
                let next = if generated < 3 { 5 + generated } else { EOS as usize };
                (0..8).map(|t| if t == next { 0.0 } else { f64::NEG_INFINITY }).collect()
            },
        }
    }

    #[test]
    fn greedy_follows_certain_tokens() {
        let m = deterministic_model();
        let d = greedy(&m, &[1, 3], 10).unwrap();
        assert_eq!(d.tokens, vec![5, 6, 7]);
        assert_eq!(d.score, 0.0);
        let d = greedy(&m, &[1, 3], 2).unwrap();
        assert_eq!(d.tokens, vec![5, 6]);
    }

    #[test]
    fn greedy_breaks_ties_by_lowest_id() {
        let m = FnModel { vocab: 4, f: |p: &[TokenId]| if p.len() < 3 { vec![-1.0, -1.0, -5.0, -1.0] } else { vec![-9.0, -9.0, 0.0, -9.0] } };
        let d = greedy(&m, &[1], 5).unwrap();
        assert_eq!(d.tokens, vec![0, 0]);
    }

    #[test]
    fn nucleus_small_p_takes_top_token() {
        let probs = [0.0, 0.0, 0.0, 0.6, 0.3, 0.1];
        assert_eq!(nucleus_set(&probs, 0.5), vec![3]);
        assert_eq!(nucleus_set(&probs, 0.6), vec![3]);
        assert_eq!(nucleus_set(&probs, 0.7), vec![3, 4]);
        assert_eq!(nucleus_set(&probs, 1.0), vec![3, 4, 5]);
        let mut rng = decode_rng(1, 0);
        for _ in 0..100 {
            assert_eq!(sample_nucleus(&probs, 0.5, &mut rng), Some(3));
        }
    }

    #[test]
    fn blocker_finds_completions() {
        let b = Blocker::new(&[5, 6, 7, 5, 6, 8], 3);
        let mut got = b.blocked(&[9, 5, 6]).to_vec();
        got.sort();
        assert_eq!(got, vec![7, 8]);
        assert!(b.blocked(&[6]).is_empty());
        let b1 = Blocker::new(&[5, 6], 1);
        assert_eq!(b1.blocked(&[]), &[5, 6]);
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("beam-block".parse::<Strategy>().unwrap(), Strategy::BeamBlock);
        assert!("topk".parse::<Strategy>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = DecodeConfig::default();
        c.validate().unwrap();
        c.nucleus_p = 0.0;
        assert!(c.validate().is_err());
        let c = DecodeConfig { beam_size: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
