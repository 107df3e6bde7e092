//! Built-in verification: gradient checks on every loss plus brute-force
//! oracles for candidate generators, metrics, statistics, and decoders.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_difference_check, GradCheckOptions, Graph, Var};
use crate::decoding::{beam, beam_block, greedy, nucleus_set};
use crate::error::Result;
use crate::metrics::{context_repetition, label_repetition, perplexity, unigram_f1};
use crate::model::{encode_example, encode_parts, EncodedExample, Model, ModelConfig};
use crate::objectives::{
    batch_loss, context_copy_candidates, identity_candidates, label_repeat_candidates, sequence_candidates,
    CandidateSet, MixWeights, Mode, Scaler, UlSequence,
};
use crate::text::{TokenId, NUM_RESERVED};
use crate::vocab_stats::RunningUnigram;

pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Clone, Debug)]
pub struct SelftestOptions {
    /// Random tiny model configurations per gradient check.
    pub grad_configs: usize,
    /// Random (context, target) pairs for the candidate oracle.
    pub oracle_pairs: usize,
    pub seed: u64,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self { grad_configs: 20, oracle_pairs: 1000, seed: 0 }
    }
}

/// Runs every suite.
pub fn run(opts: &SelftestOptions) -> Vec<CheckResult> {
    let mut out = gradient_suite(opts.grad_configs, opts.seed);
    out.push(candidate_oracle(opts.oracle_pairs, opts.seed));
    out.extend(metric_values());
    out.push(window_recount(opts.seed));
    out.extend(decoding_invariants(opts.seed));
    out
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}

/// Fixed-width PASS/FAIL table.
pub fn format_table(results: &[CheckResult]) -> String {
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5);
    let mut s = String::new();
    for r in results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(s, "{status}  {:width$}  {}", r.name, r.detail);
    }
    s
}

/// Loss variants covered by the gradient suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Mle,
    UlContext,
    UlLabel,
    UlVocab,
    Ule(Mode),
    Nli,
}

impl LossKind {
    pub const ALL: [LossKind; 10] = [
        LossKind::Mle,
        LossKind::UlContext,
        LossKind::UlLabel,
        LossKind::UlVocab,
        LossKind::Ule(Mode::Mle),
        LossKind::Ule(Mode::UlContext),
        LossKind::Ule(Mode::UlLabel),
        LossKind::Ule(Mode::UlBoth),
        LossKind::Ule(Mode::UlVocab),
        LossKind::Nli,
    ];

    pub fn name(self) -> String {
        match self {
            LossKind::Mle => "mle".into(),
            LossKind::UlContext => "ul/context-copy".into(),
            LossKind::UlLabel => "ul/label-repeat".into(),
            LossKind::UlVocab => "ul/vocab".into(),
            LossKind::Ule(m) => format!("ule/{m}"),
            LossKind::Nli => "nli".into(),
        }
    }
}

/// A random tiny model and inputs for one gradient check.
pub struct GradCase {
    pub model: Model<f64>,
    pub gold: EncodedExample,
    pub ul: Vec<UlSequence>,
}

fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let heads = rng.gen_range(1..=2);
    ModelConfig {
        vocab_size: NUM_RESERVED + rng.gen_range(4..=8),
        embed_dim: heads * rng.gen_range(4..=6),
        layers: rng.gen_range(1..=2),
        heads,
        ff_dim: rng.gen_range(4..=10),
        max_seq_len: 24,
        dropout: 0.0,
    }
}

fn random_tokens(rng: &mut ChaCha8Rng, vocab: usize, len: std::ops::RangeInclusive<usize>) -> Vec<TokenId> {
    let len = rng.gen_range(len);
    (0..len).map(|_| rng.gen_range(NUM_RESERVED..vocab) as TokenId).collect()
}

/// Builds the inputs for `kind`; generated sequences are made to copy and repeat
/// so candidate sets are non-empty.
pub fn grad_case(kind: LossKind, seed: u64) -> Result<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = random_config(&mut rng);
    let v = cfg.vocab_size;
    let model = Model::<f64>::init_with_std(cfg, rng.gen(), 0.3)?;
    let ctx = random_tokens(&mut rng, v, 3..=6);
    let target = random_tokens(&mut rng, v, 1..=5);
    let gold = encode_parts(&ctx, &target, true, 24)?;
    let n = rng.gen_range(1..=3);
    let mut y: Vec<TokenId> = ctx[..n].to_vec();
    y.extend(random_tokens(&mut rng, v, 2..=2));
    y.extend_from_slice(&ctx[..n]);
    let p_model: Vec<f64> = normalized((0..v).map(|_| rng.gen_range(0.05..1.0)).collect());
    let p_star: Vec<f64> = normalized((0..v).map(|_| rng.gen_range(0.05..1.0)).collect());
    let scaler = Scaler::VocabMismatch { p_model: &p_model, p_star: &p_star };
    let alpha = rng.gen_range(0.5..2.0);
    let weights = MixWeights::uniform(alpha);
    let candidates = match kind {
        LossKind::Mle | LossKind::Ule(Mode::Mle) => None,
        LossKind::UlContext => Some(context_copy_candidates(&ctx, &y, n)?),
        LossKind::UlLabel => Some(label_repeat_candidates(&y, n)?),
        LossKind::UlVocab => Some(identity_candidates(&y, &scaler)),
        LossKind::Ule(mode) => Some(sequence_candidates(mode, &weights, &ctx, &y, n, &scaler)?),
        LossKind::Nli => {
            let neg = random_tokens(&mut rng, v, 1..=4);
            let encoded = encode_parts(&ctx, &neg, false, 24)?;
            let candidates = identity_candidates(&neg, &Scaler::Constant(alpha));
            return Ok(GradCase { model, gold, ul: vec![UlSequence { encoded, candidates }] });
        }
    };
    let ul = match candidates {
        Some(candidates) => vec![UlSequence { encoded: encode_parts(&ctx, &y, false, 24)?, candidates }],
        None => Vec::new(),
    };
    Ok(GradCase { model, gold, ul })
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Largest relative error of `kind` over `configs` random cases.
pub fn gradient_check(kind: LossKind, configs: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..configs {
        let case = grad_case(kind, seed.wrapping_mul(1000).wrapping_add(i as u64))?;
        let f = |g: &mut Graph<f64>, vars: &[Var]| -> Result<Var> {
            let ul: Vec<&UlSequence> = case.ul.iter().collect();
            Ok(batch_loss(&case.model, g, vars, &[&case.gold], &ul, None)?.loss)
        };
        let opts = GradCheckOptions { coords_per_param: 6, seed: i as u64, ..Default::default() };
        let rep = finite_difference_check(f, case.model.params(), &opts)?;
        worst = worst.max(rep.max_rel_error);
    }
    Ok(worst)
}

pub fn gradient_suite(configs: usize, seed: u64) -> Vec<CheckResult> {
    LossKind::ALL
        .iter()
        .map(|&kind| {
            let name = format!("grad {}", kind.name());
            match gradient_check(kind, configs, seed) {
                Ok(err) => CheckResult::new(name, err < GRAD_TOLERANCE, format!("max rel err {err:.2e} over {configs} configs")),
                Err(e) => CheckResult::new(name, false, e.to_string()),
            }
        })
        .collect()
}

/// Brute-force context-copy marks: position t is marked when some n-window
/// covering t equals some n-window of the context.
pub fn brute_context_copy(x: &[TokenId], y: &[TokenId], n: usize) -> Vec<bool> {
    let mut marked = vec![false; y.len()];
    for t in 0..y.len() {
        for i in 0..y.len() {
            if i > t || t >= i + n || i + n > y.len() {
                continue;
            }
            for j in 0..x.len() {
                if j + n <= x.len() && (0..n).all(|k| y[i + k] == x[j + k]) {
                    marked[t] = true;
                }
            }
        }
    }
    marked
}

/// Brute-force label-repeat marks: position t is marked when a window covering t
/// equals an earlier window ending before it starts.
pub fn brute_label_repeat(y: &[TokenId], n: usize) -> Vec<bool> {
    let mut marked = vec![false; y.len()];
    for t in 0..y.len() {
        for i in 0..y.len() {
            if i > t || t >= i + n || i + n > y.len() {
                continue;
            }
            for j in 0..i {
                if j + n <= i && (0..n).all(|k| y[i + k] == y[j + k]) {
                    marked[t] = true;
                }
            }
        }
    }
    marked
}

fn marks(c: &CandidateSet, y: &[TokenId]) -> Option<Vec<bool>> {
    c.positions
        .iter()
        .zip(y)
        .map(|(p, &tok)| match p.as_slice() {
            [] => Some(false),
            [(t, _)] if *t == tok => Some(true),
            _ => None,
        })
        .collect()
}

/// Counts generator/oracle disagreements over `pairs` random pairs per n.
pub fn candidate_mismatches(pairs: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    let mut mismatches = 0;
    for n in 1..=3 {
        for _ in 0..pairs {
            let x: Vec<TokenId> = (0..rng.gen_range(0..=20)).map(|_| rng.gen_range(0..5)).collect();
            let y: Vec<TokenId> = (0..rng.gen_range(0..=20)).map(|_| rng.gen_range(0..5)).collect();
            let cc = context_copy_candidates(&x, &y, n)?;
            let lr = label_repeat_candidates(&y, n)?;
            if marks(&cc, &y) != Some(brute_context_copy(&x, &y, n)) {
                mismatches += 1;
            }
            if marks(&lr, &y) != Some(brute_label_repeat(&y, n)) {
                mismatches += 1;
            }
        }
    }
    Ok(mismatches)
}

pub fn candidate_oracle(pairs: usize, seed: u64) -> CheckResult {
    let name = "candidates vs brute force";
    match candidate_mismatches(pairs, seed) {
        Ok(m) => CheckResult::new(name, m == 0, format!("{m} mismatches over {pairs} pairs x n=1..3")),
        Err(e) => CheckResult::new(name, false, e.to_string()),
    }
}

/// Worked metric values that must hold exactly.
pub fn metric_values() -> Vec<CheckResult> {
    let (a, b, c, d) = (10, 11, 12, 13);
    let mut out = Vec::new();
    let lr = label_repetition(&[a, b, a, b], 2).unwrap_or(f64::NAN);
    out.push(CheckResult::new("label_repetition([a,b,a,b],2)", lr == 1.0 / 3.0, format!("{lr}")));
    let cr = context_repetition(&[a, b, d], &[a, b, c], 2).unwrap_or(f64::NAN);
    out.push(CheckResult::new("context_repetition([a,b,d],[a,b,c],2)", cr == 0.5, format!("{cr}")));
    let f1 = unigram_f1(&[a, b, c], &[a, b, d]);
    out.push(CheckResult::new("unigram_f1([a,b,c],[a,b,d])", (f1 - 2.0 / 3.0).abs() < 1e-15, format!("{f1}")));
    let ppl = uniform_ppl(12);
    out.push(CheckResult::new(
        "perplexity(uniform, V=12)",
        ppl.as_ref().is_ok_and(|p| (p - 12.0).abs() < 1e-9),
        match ppl {
            Ok(p) => format!("{p}"),
            Err(e) => e.to_string(),
        },
    ));
    out
}

/// Perplexity of a model whose output head is zeroed, hence uniform.
pub fn uniform_ppl(v: usize) -> Result<f64> {
    let cfg = ModelConfig { vocab_size: v, embed_dim: 4, layers: 1, heads: 1, ff_dim: 4, max_seq_len: 16, dropout: 0.0 };
    let mut m = Model::<f64>::init(cfg, 7)?;
    for name in ["head.weight", "head.bias"] {
        if let Some(p) = m.param_mut(name) {
            p.data_mut().fill(0.0);
        }
    }
    let examples = vec![
        encode_example(&[vec![5, 6]], &[], &[7, 8, 9], 16)?,
        encode_example(&[vec![9]], &[vec![10]], &[11], 16)?,
    ];
    perplexity(&m, &examples)
}

/// Feeds k+3 random batches and compares window counts with a recount of the last k.
pub fn window_recount(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let (v, k) = (20, 8);
    let mut stats = match RunningUnigram::new(v, k) {
        Ok(s) => s,
        Err(e) => return CheckResult::new("running unigram window", false, e.to_string()),
    };
    let cold = stats.distribution().iter().all(|&p| p == 1.0 / v as f64);
    let mut batches: Vec<Vec<TokenId>> = Vec::new();
    for _ in 0..k + 3 {
        let b: Vec<TokenId> = (0..rng.gen_range(1..30)).map(|_| rng.gen_range(NUM_RESERVED..v) as TokenId).collect();
        stats.update(&b);
        batches.push(b);
    }
    let mut recount = vec![0u64; v];
    for b in &batches[batches.len() - k..] {
        for &t in b {
            recount[t as usize] += 1;
        }
    }
    let ok = cold && stats.counts() == recount.as_slice();
    CheckResult::new("running unigram window", ok, format!("cold start uniform: {cold}, k={k}"))
}

/// A random tiny transformer with a peaked output head.
pub fn random_transformer(seed: u64) -> Result<Model<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = random_config(&mut rng);
    cfg.vocab_size = NUM_RESERVED + 7;
    Model::init_with_std(cfg, rng.gen(), 0.5)
}

/// Beam(1) equals greedy, beam never scores below greedy, blocking holds.
pub fn decoding_invariants(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xBEA);
    let (mut same, mut better, mut blocked, mut fallbacks) = (0, 0, 0, 0);
    let trials = 100;
    for i in 0..trials {
        let Ok(m) = random_transformer(seed.wrapping_mul(7919).wrapping_add(i)) else {
            return vec![CheckResult::new("decoding invariants", false, "model init failed")];
        };
        let v = m.config().vocab_size;
        let ctx: Vec<TokenId> = (0..6).map(|_| rng.gen_range(NUM_RESERVED..v) as TokenId).collect();
        let prompt = crate::model::encode_prompt(&ctx, 8, m.config().max_seq_len);
        let (Ok(g), Ok(b1), Ok(b5)) = (greedy(&m, &prompt, 8), beam(&m, &prompt, 1, 8), beam(&m, &prompt, 5, 8)) else {
            return vec![CheckResult::new("decoding invariants", false, "decoder error")];
        };
        same += usize::from(g == b1);
        better += usize::from(b5.score >= g.score - 1e-9);
        match beam_block(&m, &prompt, &ctx, 5, 2, 8) {
            Ok(bb) if bb.fallback => fallbacks += 1,
            Ok(bb) if contains_blocked(&ctx, &bb.tokens, 2) => blocked += 1,
            Ok(_) => {}
            Err(_) => blocked += 1,
        }
    }
    let probs = [0.5, 0.2, 0.2, 0.1];
    let set = nucleus_set(&probs, 0.65);
    vec![
        CheckResult::new("beam(1) == greedy", same == trials as usize, format!("{same}/{trials}")),
        CheckResult::new("beam score >= greedy", better == trials as usize, format!("{better}/{trials}")),
        CheckResult::new("beam-block avoids context n-grams", blocked == 0, format!("{blocked} violations, {fallbacks} fallbacks")),
        CheckResult::new("nucleus set", set == vec![0, 1], format!("{set:?}")),
    ]
}

/// Whether `y` (continuing from nothing) completes any `n`-gram of `context`.
fn contains_blocked(context: &[TokenId], y: &[TokenId], n: usize) -> bool {
    y.windows(n).any(|w| context.windows(n).any(|c| c == w))
}
