//! Candidate sets, scales and the likelihood / unlikelihood losses.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::{Batch, EncodedExample, Model};
use crate::scalar::Scalar;
use crate::text::{NgramIndex, TokenId};

/// Floor applied to `1 - p` before the log.
pub const ONE_MINUS_P_FLOOR: f64 = 1e-6;
/// Floor applied to `p*` in the mismatch ratio.
pub const P_STAR_FLOOR: f64 = 1e-8;

/// Per-position penalized tokens with their scales.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CandidateSet {
    pub positions: Vec<Vec<(TokenId, f64)>>,
}

impl CandidateSet {
    pub fn empty(len: usize) -> Self {
        Self { positions: vec![Vec::new(); len] }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn count(&self) -> usize {
        self.positions.iter().map(Vec::len).sum()
    }

    /// Positions carrying at least one candidate.
    pub fn marked(&self) -> Vec<bool> {
        self.positions.iter().map(|p| !p.is_empty()).collect()
    }

    /// Adds `scale` to the candidate `tok` at `t`, merging duplicates.
    pub fn add(&mut self, t: usize, tok: TokenId, scale: f64) {
        let slot = &mut self.positions[t];
        match slot.iter_mut().find(|(c, _)| *c == tok) {
            Some((_, b)) => *b += scale,
            None => slot.push((tok, scale)),
        }
    }

    /// Multiplies every scale by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        for p in &mut self.positions {
            for (_, b) in p.iter_mut() {
                *b *= factor;
            }
        }
        self
    }

    /// `a + b` position-wise; both must cover the same length.
    pub fn merge(mut self, other: &CandidateSet) -> Self {
        assert_eq!(self.len(), other.len(), "candidate sets of different length");
        for (t, p) in other.positions.iter().enumerate() {
            for &(tok, b) in p {
                self.add(t, tok, b);
            }
        }
        self
    }

    pub fn check_scales(&self) -> Result<()> {
        for p in &self.positions {
            for &(_, b) in p {
                if !b.is_finite() || b < 0.0 {
                    return Err(Error::NegativeScale(b));
                }
            }
        }
        Ok(())
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("n-gram size must be >= 1".into()));
    }
    Ok(())
}

/// Marks target tokens covered by any n-gram window that also occurs in the context.
pub fn context_copy_candidates(context: &[TokenId], target: &[TokenId], n: usize) -> Result<CandidateSet> {
    check_n(n)?;
    let mut out = CandidateSet::empty(target.len());
    if target.len() < n || context.len() < n {
        return Ok(out);
    }
    let index = NgramIndex::build(context, n)?;
    let mut covered = vec![false; target.len()];
    for (i, w) in target.windows(n).enumerate() {
        if index.contains(w) {
            covered[i..i + n].iter_mut().for_each(|c| *c = true);
        }
    }
    for (t, c) in covered.into_iter().enumerate() {
        if c {
            out.positions[t].push((target[t], 1.0));
        }
    }
    Ok(out)
}

/// Marks target tokens inside an n-gram that already occurred, ending strictly before it starts.
pub fn label_repeat_candidates(target: &[TokenId], n: usize) -> Result<CandidateSet> {
    check_n(n)?;
    let mut out = CandidateSet::empty(target.len());
    let mut first: HashMap<&[TokenId], usize> = HashMap::new();
    let mut covered = vec![false; target.len()];
    for (i, w) in target.windows(n).enumerate() {
        let j = *first.entry(w).or_insert(i);
        if j + n <= i {
            covered[i..i + n].iter_mut().for_each(|c| *c = true);
        }
    }
    for (t, c) in covered.into_iter().enumerate() {
        if c {
            out.positions[t].push((target[t], 1.0));
        }
    }
    Ok(out)
}

/// Scale rule for identity candidates.
#[derive(Clone, Copy, Debug)]
pub enum Scaler<'a> {
    Constant(f64),
    /// Model and human unigram distributions indexed by token id.
    VocabMismatch { p_model: &'a [f64], p_star: &'a [f64] },
}

impl Scaler<'_> {
    pub fn beta(&self, tok: TokenId) -> f64 {
        match *self {
            Scaler::Constant(c) => c,
            Scaler::VocabMismatch { p_model, p_star } => {
                let i = tok as usize;
                beta_vocab_mismatch(p_model.get(i).copied().unwrap_or(0.0), p_star.get(i).copied().unwrap_or(0.0))
            }
        }
    }
}

/// `p_model * ln(p_model / p*)` when the model over-produces the token, else 0.
pub fn beta_vocab_mismatch(p_model: f64, p_star: f64) -> f64 {
    if p_model > p_star {
        p_model * (p_model / p_star.max(P_STAR_FLOOR)).ln()
    } else {
        0.0
    }
}

/// Each position penalizes its own token.
pub fn identity_candidates(target: &[TokenId], scaler: &Scaler) -> CandidateSet {
    CandidateSet { positions: target.iter().map(|&t| vec![(t, scaler.beta(t))]).collect() }
}

/// `-sum log p(y_t)` over the scored tokens.
pub fn mle_loss(target_logprobs: &[f64]) -> Result<f64> {
    if target_logprobs.is_empty() {
        return Err(Error::EmptyTarget);
    }
    Ok(-target_logprobs.iter().sum::<f64>())
}

/// `-ln(max(1 - p, floor))` for a log-probability.
pub fn neg_log1m_p(logp: f64) -> f64 {
    -crate::autodiff::kernels::log1m_exp(logp, ONE_MINUS_P_FLOOR).0
}

/// `-sum_t sum_c beta * ln(1 - p(c))`; `log_probs[t]` is the next-token distribution at position t.
pub fn ul_loss<R: AsRef<[f64]>>(log_probs: &[R], candidates: &CandidateSet) -> Result<f64> {
    candidates.check_scales()?;
    if log_probs.len() < candidates.len() {
        return Err(Error::Shape(format!(
            "{} candidate positions but {} distributions",
            candidates.len(),
            log_probs.len()
        )));
    }
    let mut total = 0.0;
    for (lp, cands) in log_probs.iter().zip(&candidates.positions) {
        let lp = lp.as_ref();
        for &(tok, beta) in cands {
            if beta != 0.0 {
                total += beta * neg_log1m_p(lp[tok as usize]);
            }
        }
    }
    Ok(total)
}

/// Negative log-likelihood of the selected entries as a graph scalar.
pub fn mle_term<T: Scalar>(g: &mut Graph<T>, log_probs: Var, picks: &[(usize, usize)]) -> Var {
    let x = g.pick(log_probs, picks);
    let s = g.sum(x);
    g.scale(s, -T::one())
}

/// Unlikelihood of the selected entries, `(row, token, beta)`, as a graph scalar.
pub fn ul_term<T: Scalar>(g: &mut Graph<T>, log_probs: Var, picks: &[(usize, usize, f64)]) -> Var {
    let pairs: Vec<(usize, usize)> = picks.iter().map(|&(r, c, _)| (r, c)).collect();
    let weights = picks.iter().map(|&(_, _, b)| T::of(-b)).collect();
    let x = g.pick(log_probs, &pairs);
    let l = g.log1m_exp(x, T::of(ONE_MINUS_P_FLOOR));
    g.weighted_sum(l, weights)
}

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Mle,
    UlContext,
    UlLabel,
    UlBoth,
    UlVocab,
    Nli,
}

impl Mode {
    /// Modes that penalize a model-generated continuation.
    pub fn uses_generation(self) -> bool {
        matches!(self, Mode::UlContext | Mode::UlLabel | Mode::UlBoth | Mode::UlVocab)
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mle" => Mode::Mle,
            "ul-context" => Mode::UlContext,
            "ul-label" => Mode::UlLabel,
            "ul-both" => Mode::UlBoth,
            "ul-vocab" => Mode::UlVocab,
            "nli" | "ul-nli" => Mode::Nli,
            other => return Err(Error::InvalidArgument(format!("unknown objective {other:?}"))),
        })
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Mle => "mle",
            Mode::UlContext => "ul-context",
            Mode::UlLabel => "ul-label",
            Mode::UlBoth => "ul-both",
            Mode::UlVocab => "ul-vocab",
            Mode::Nli => "nli",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MixWeights {
    pub alpha_context: f64,
    pub alpha_label: f64,
    pub alpha_vocab: f64,
    pub alpha_nli: f64,
}

impl MixWeights {
    /// Same weight for every term.
    pub fn uniform(alpha: f64) -> Self {
        Self { alpha_context: alpha, alpha_label: alpha, alpha_vocab: alpha, alpha_nli: alpha }
    }

    pub fn validate(&self) -> Result<()> {
        for a in [self.alpha_context, self.alpha_label, self.alpha_vocab, self.alpha_nli] {
            if !a.is_finite() || a < 0.0 {
                return Err(Error::Config(format!("mixing weight must be finite and >= 0, got {a}")));
            }
        }
        Ok(())
    }

    /// Whether `mode` has a non-zero unlikelihood weight.
    pub fn active(&self, mode: Mode) -> bool {
        match mode {
            Mode::Mle => false,
            Mode::UlContext => self.alpha_context > 0.0,
            Mode::UlLabel => self.alpha_label > 0.0,
            Mode::UlBoth => self.alpha_context > 0.0 || self.alpha_label > 0.0,
            Mode::UlVocab => self.alpha_vocab > 0.0,
            Mode::Nli => self.alpha_nli > 0.0,
        }
    }
}

/// Candidates on a generated continuation with the mode's weights folded into the scales.
///
/// `scaler` is consulted only by the vocabulary mode.
pub fn sequence_candidates(
    mode: Mode,
    weights: &MixWeights,
    context: &[TokenId],
    generated: &[TokenId],
    n: usize,
    scaler: &Scaler,
) -> Result<CandidateSet> {
    let cs = match mode {
        Mode::Mle | Mode::Nli => CandidateSet::empty(generated.len()),
        Mode::UlContext => context_copy_candidates(context, generated, n)?.scaled(weights.alpha_context),
        Mode::UlLabel => label_repeat_candidates(generated, n)?.scaled(weights.alpha_label),
        Mode::UlBoth => context_copy_candidates(context, generated, n)?
            .scaled(weights.alpha_context)
            .merge(&label_repeat_candidates(generated, n)?.scaled(weights.alpha_label)),
        Mode::UlVocab => identity_candidates(generated, scaler).scaled(weights.alpha_vocab),
    };
    cs.check_scales()?;
    Ok(cs)
}

/// A sequence whose scored tokens carry unlikelihood candidates.
#[derive(Clone, Debug)]
pub struct UlSequence {
    /// `BOS context SEP y` (no EOS scored); scored positions align with `candidates`.
    pub encoded: EncodedExample,
    pub candidates: CandidateSet,
}

/// Loss of one batch: mean over likelihood examples of per-example sums.
#[derive(Clone, Copy, Debug)]
pub struct BatchLoss {
    pub loss: Var,
    /// Summed likelihood loss over the batch.
    pub mle_sum: f64,
    /// Summed unlikelihood loss over the batch (already weighted).
    pub ul_sum: f64,
    /// Scored likelihood tokens (for per-token reporting).
    pub mle_tokens: usize,
}

/// Builds `(sum MLE(gold) + sum UL(ul)) / |gold|` with one shared forward pass.
///
/// Used for every mode: sequence-level UL passes generated continuations, the
/// contradiction objective passes negative responses with identity candidates.
pub fn batch_loss<T: Scalar>(
    model: &Model<T>,
    g: &mut Graph<T>,
    vars: &[Var],
    gold: &[&EncodedExample],
    ul: &[&UlSequence],
    rng: Option<&mut rand_chacha::ChaCha8Rng>,
) -> Result<BatchLoss> {
    if gold.is_empty() {
        return Err(Error::InvalidArgument("likelihood batch is empty".into()));
    }
    let ul: Vec<&UlSequence> = ul.iter().copied().filter(|u| u.candidates.count() > 0).collect();
    let mut rows: Vec<&EncodedExample> = gold.to_vec();
    rows.extend(ul.iter().map(|u| &u.encoded));
    let batch = Batch::of_examples(&rows);
    let lp = model.forward(g, vars, &batch, rng)?;
    let seq = batch.seq;

    let picks: Vec<(usize, usize)> = Model::<T>::scored_picks(gold, seq).into_iter().flatten().collect();
    let mle = mle_term(g, lp, &picks);
    let mut loss = mle;
    let mut ul_picks = Vec::new();
    for (k, u) in ul.iter().enumerate() {
        let b = gold.len() + k;
        let positions: Vec<usize> = u.encoded.scored_positions().collect();
        if positions.len() != u.candidates.len() {
            return Err(Error::Shape(format!(
                "{} scored positions but {} candidate positions",
                positions.len(),
                u.candidates.len()
            )));
        }
        for (p, cands) in positions.iter().zip(&u.candidates.positions) {
            for &(tok, beta) in cands {
                if beta > 0.0 {
                    ul_picks.push((b * seq + p - 1, tok as usize, beta));
                }
            }
        }
    }
    let mut ul_sum = 0.0;
    if !ul_picks.is_empty() {
        let u = ul_term(g, lp, &ul_picks);
        ul_sum = g.value(u).data()[0].to_f64_lossy();
        loss = g.add(loss, u);
    }
    let mle_sum = g.value(mle).data()[0].to_f64_lossy();
    let loss = g.scale(loss, T::of(1.0 / gold.len() as f64));
    Ok(BatchLoss { loss, mle_sum, ul_sum, mle_tokens: picks.len() })
}

/// Scalar value of the mixed objective for one example, evaluated without a graph.
///
/// For vocabulary mode, `p_model` is the pre-update snapshot of the running
/// distribution and `p_star` the human distribution.
#[allow(clippy::too_many_arguments)]
pub fn ule_loss<T: Scalar>(
    model: &Model<T>,
    example: &EncodedExample,
    generated: Option<&[TokenId]>,
    mode: Mode,
    weights: &MixWeights,
    n: usize,
    p_model: &[f64],
    p_star: &[f64],
) -> Result<f64> {
    let gold: Vec<f64> = model.target_logprobs(example)?.iter().map(|v| v.to_f64_lossy()).collect();
    let mle = mle_loss(&gold)?;
    if !mode.uses_generation() || !weights.active(mode) {
        return Ok(mle);
    }
    let y = generated.ok_or_else(|| Error::MissingGenerated(mode.to_string()))?;
    if y.is_empty() {
        return Ok(mle);
    }
    let scaler = Scaler::VocabMismatch { p_model, p_star };
    let cands = sequence_candidates(mode, weights, example.context(), y, n, &scaler)?;
    let enc = crate::model::encode_parts(example.context(), y, false, model.config().max_seq_len)?;
    let lp = model.log_probs(&Batch::of_examples(&[&enc]))?;
    let rows: Vec<Vec<f64>> = enc
        .scored_positions()
        .map(|p| lp.row(p - 1).iter().map(|v| v.to_f64_lossy()).collect())
        .collect();
    Ok(mle + ul_loss(&rows, &cands)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(c: &CandidateSet) -> Vec<Vec<TokenId>> {
        c.positions.iter().map(|p| p.iter().map(|x| x.0).collect()).collect()
    }

    const A: TokenId = 10;
    const B: TokenId = 11;
    const C: TokenId = 12;
    const D: TokenId = 13;
    const E: TokenId = 14;
    const F: TokenId = 15;

    #[test]
    fn context_copy_example() {
        let c = context_copy_candidates(&[A, B, C, D], &[E, B, C, F], 2).unwrap();
        assert_eq!(toks(&c), vec![vec![], vec![B], vec![C], vec![]]);
        let full = context_copy_candidates(&[A, B, C], &[A, B, C], 2).unwrap();
        assert_eq!(toks(&full), vec![vec![A], vec![B], vec![C]]);
        let none = context_copy_candidates(&[A, B], &[C, D], 1).unwrap();
        assert_eq!(none.count(), 0);
    }

    #[test]
    fn label_repeat_examples() {
        let c = label_repeat_candidates(&[A, B, A, B], 2).unwrap();
        assert_eq!(toks(&c), vec![vec![], vec![], vec![A], vec![B]]);
        let c = label_repeat_candidates(&[A, A, A], 1).unwrap();
        assert_eq!(toks(&c), vec![vec![], vec![A], vec![A]]);
        // Self-overlapping repeat is not a repeat.
        let c = label_repeat_candidates(&[A, A, A], 2).unwrap();
        assert_eq!(c.count(), 0);
        assert!(label_repeat_candidates(&[A], 0).is_err());
    }

    #[test]
    fn beta_examples() {
        assert!((beta_vocab_mismatch(0.2, 0.1) - 0.2 * 2f64.ln()).abs() < 1e-15);
        assert!((beta_vocab_mismatch(0.2, 0.1) - 0.13863).abs() < 1e-5);
        assert_eq!(beta_vocab_mismatch(0.1, 0.2), 0.0);
        assert_eq!(beta_vocab_mismatch(0.3, 0.3), 0.0);
        assert_eq!(beta_vocab_mismatch(0.3, 0.0), 0.3 * (0.3f64 / 1e-8).ln());
    }

    #[test]
    fn identity_with_scalers() {
        let c = identity_candidates(&[A, B], &Scaler::Constant(1.0));
        assert_eq!(c.positions, vec![vec![(A, 1.0)], vec![(B, 1.0)]]);
        let p = vec![0.05; 20];
        let c = identity_candidates(&[A, B], &Scaler::VocabMismatch { p_model: &p, p_star: &p });
        assert!(c.positions.iter().all(|x| x[0].1 == 0.0));
    }

    #[test]
    fn mle_values() {
        let l = mle_loss(&[-(4f64.ln()); 3]).unwrap();
        assert!((l - 3.0 * 4f64.ln()).abs() < 1e-12);
        assert_eq!(mle_loss(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(mle_loss(&[]).is_err());
    }

    #[test]
    fn ul_values() {
        let lp = vec![vec![f64::NEG_INFINITY; 10], vec![0.5f64.ln(); 10]];
        let mut c = CandidateSet::empty(2);
        c.add(1, 3, 1.0);
        assert!((ul_loss(&lp, &c).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert_eq!(ul_loss(&lp, &CandidateSet::empty(2)).unwrap(), 0.0);
        let certain = vec![vec![0.0; 4]];
        let mut c = CandidateSet::empty(1);
        c.add(0, 2, 1.0);
        assert!((ul_loss(&certain, &c).unwrap() - 13.815510557964274).abs() < 1e-9);
        c.positions[0][0].1 = -1.0;
        assert!(ul_loss(&certain, &c).is_err());
    }

    #[test]
    fn ul_both_merges_weights() {
        let w = MixWeights { alpha_context: 2.0, alpha_label: 3.0, ..Default::default() };
        // B C copied from context and repeated.
        let ctx = [B, C];
        let y = [B, C, D, B, C];
        let c = sequence_candidates(Mode::UlBoth, &w, &ctx, &y, 2, &Scaler::Constant(1.0)).unwrap();
        assert_eq!(c.positions[0], vec![(B, 2.0)]);
        assert_eq!(c.positions[2], vec![]);
        assert_eq!(c.positions[3], vec![(B, 5.0)]);
    }

    #[test]
    fn mode_round_trip() {
        for m in [Mode::Mle, Mode::UlContext, Mode::UlLabel, Mode::UlBoth, Mode::UlVocab, Mode::Nli] {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
    }
}
