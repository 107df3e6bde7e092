mod common;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ulkit_core::decoding::toy::{log_normalize, FnModel};
use ulkit_core::decoding::{beam, beam_block, greedy, nucleus, nucleus_set};
use ulkit_core::metrics::{context_repetition, label_repetition};
use ulkit_core::objectives::{
    beta_vocab_mismatch, context_copy_candidates, label_repeat_candidates, ul_loss, CandidateSet, ONE_MINUS_P_FLOOR,
};
use ulkit_core::text::{NgramIndex, TokenId, EOS, NUM_RESERVED};
use ulkit_core::vocab_stats::{class_fractions, frequency_classes, RunningUnigram};

use common::{as_marks, hashed_model, oracle_context_copy, oracle_label_repeat, sequence_score};

fn seq(vocab: TokenId, max_len: usize) -> impl Strategy<Value = Vec<TokenId>> {
    prop::collection::vec(0..vocab, 0..=max_len)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    #[test]
    fn ngram_index_matches_linear_scan(s in seq(6, 30), n in 1usize..4, probe in seq(6, 3)) {
        let idx = NgramIndex::build(&s, n).unwrap();
        let gram: Vec<TokenId> = probe.into_iter().chain(std::iter::repeat(0)).take(n).collect();
        let scan: Vec<usize> = (0..s.len().saturating_sub(n - 1)).filter(|&i| s.len() >= n && s[i..i + n] == gram[..]).collect();
        prop_assert_eq!(idx.lookup(&gram), &scan[..]);
        prop_assert_eq!(idx.contains(&gram), !scan.is_empty());
        for w in s.windows(n) {
            prop_assert!(idx.contains(w));
        }
    }

    #[test]
    fn context_copy_matches_brute_force(x in seq(5, 20), y in seq(5, 20), n in 1usize..=3) {
        let c = context_copy_candidates(&x, &y, n).unwrap();
        prop_assert_eq!(c.len(), y.len());
        prop_assert_eq!(as_marks(&c, &y), oracle_context_copy(&x, &y, n));
    }

    #[test]
    fn label_repeat_matches_brute_force(y in seq(5, 20), n in 1usize..=3) {
        let c = label_repeat_candidates(&y, n).unwrap();
        prop_assert_eq!(c.len(), y.len());
        prop_assert_eq!(as_marks(&c, &y), oracle_label_repeat(&y, n));
    }

    #[test]
    fn running_window_equals_recount(
        batches in prop::collection::vec(prop::collection::vec(0u32..12, 0..15), 1..20),
        k in 1usize..6,
    ) {
        let mut w = RunningUnigram::new(12, k).unwrap();
        for b in &batches {
            w.update(b);
        }
        let mut expect = vec![0u64; 12];
        for b in batches.iter().rev().take(k) {
            for &t in b {
                if t as usize >= NUM_RESERVED {
                    expect[t as usize] += 1;
                }
            }
        }
        prop_assert_eq!(w.counts(), &expect[..]);
        prop_assert_eq!(w.total(), expect.iter().sum::<u64>());
        prop_assert_eq!(w.batches(), batches.len().min(k));
        let d = w.distribution();
        let total: f64 = d.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12 || w.total() == 0);
        if w.total() == 0 {
            prop_assert!(d.iter().all(|&p| p == 1.0 / 12.0));
        }
    }

    #[test]
    fn ul_loss_nonnegative_and_zero_iff_inactive(
        logits in prop::collection::vec(prop::collection::vec(-6.0f64..6.0, 6), 1..6),
        picks in prop::collection::vec((0usize..6, 0u32..6, prop_oneof![Just(0.0), 0.0f64..3.0]), 0..10),
    ) {
        let lp: Vec<Vec<f64>> = logits.iter().map(|l| log_normalize(l)).collect();
        let mut c = CandidateSet::empty(lp.len());
        for &(t, tok, b) in &picks {
            c.add(t % lp.len(), tok, b);
        }
        let loss = ul_loss(&lp, &c).unwrap();
        prop_assert!(loss >= 0.0);
        let active = c.positions.iter().flatten().any(|&(_, b)| b > 0.0);
        prop_assert_eq!(loss > 0.0, active);
    }

    #[test]
    fn ul_loss_increases_with_candidate_probability(
        logits in prop::collection::vec(-4.0f64..4.0, 6),
        tok in 0usize..6,
        bump in 0.01f64..3.0,
        beta in 0.1f64..5.0,
    ) {
        let mut c = CandidateSet::empty(1);
        c.add(0, tok as TokenId, beta);
        let before = ul_loss(&[log_normalize(&logits)], &c).unwrap();
        let mut raised = logits.clone();
        raised[tok] += bump;
        let after = ul_loss(&[log_normalize(&raised)], &c).unwrap();
        prop_assert!(after > before, "{} !> {}", after, before);
    }

    #[test]
    fn ul_loss_clamps_certain_candidates(tok in 0usize..4) {
        let mut lp = vec![f64::NEG_INFINITY; 4];
        lp[tok] = 0.0;
        let mut c = CandidateSet::empty(1);
        c.add(0, tok as TokenId, 1.0);
        let loss = ul_loss(&[lp], &c).unwrap();
        prop_assert!((loss + ONE_MINUS_P_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn vocab_beta_zero_unless_overused(pm in 0.0f64..1.0, ps in 0.0f64..1.0) {
        let b = beta_vocab_mismatch(pm, ps);
        if pm <= ps {
            prop_assert_eq!(b, 0.0);
        } else {
            prop_assert!(b > 0.0);
        }
    }

    #[test]
    fn class_fractions_ignore_generation_order(
        p in prop::collection::vec(0.0f64..1.0, 5..20),
        gens in prop::collection::vec(prop::collection::vec(5u32..20, 1..8), 1..8),
        seed in any::<u64>(),
    ) {
        let total: f64 = p.iter().sum::<f64>() + 1e-9;
        let p: Vec<f64> = p.iter().map(|x| x / total).collect();
        let classes = frequency_classes(&p);
        let a = class_fractions(&gens, &classes).unwrap();
        let mut flat: Vec<TokenId> = gens.iter().flatten().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..flat.len()).rev() {
            flat.swap(i, rng.gen_range(0..=i));
        }
        let regrouped: Vec<Vec<TokenId>> = flat.chunks(3).map(<[TokenId]>::to_vec).collect();
        let b = class_fractions(&regrouped, &classes).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn beam_one_is_greedy(seed in any::<u64>(), bias in -2.0f64..2.0, max_len in 1usize..12) {
        let m = hashed_model(seed, 10, bias);
        let g = greedy(&m, &[1, 7, 3], max_len).unwrap();
        let b = beam(&m, &[1, 7, 3], 1, max_len).unwrap();
        prop_assert_eq!(&g.tokens, &b.tokens);
        prop_assert_eq!(g.score, b.score);
    }

    #[test]
    fn exhaustive_beam_finds_best_path(seed in any::<u64>(), bias in -2.0f64..2.0) {
        // With beam_size >= every partial path, beam search is exhaustive.
        let vocab = 8;
        let m = hashed_model(seed, vocab, bias);
        let prompt = [1, 6, 3];
        let max_len = 3;
        let symbols: Vec<TokenId> = (NUM_RESERVED as TokenId..vocab as TokenId).collect();
        let mut best: Option<(f64, Vec<TokenId>)> = None;
        let mut consider = |p: Vec<TokenId>| {
            let s = sequence_score(&m, &prompt, &p, max_len);
            if best.as_ref().is_none_or(|b| s > b.0 || (s == b.0 && p < b.1)) {
                best = Some((s, p));
            }
        };
        consider(vec![]);
        for &a in &symbols {
            consider(vec![a]);
            for &b in &symbols {
                consider(vec![a, b]);
                for &c in &symbols {
                    consider(vec![a, b, c]);
                }
            }
        }
        let (score, path) = best.unwrap();
        let d = beam(&m, &prompt, 1000, max_len).unwrap();
        prop_assert_eq!(&d.tokens, &path);
        prop_assert!((d.score - score).abs() < 1e-9);
    }

    #[test]
    fn beam_block_never_completes_context_ngrams(
        seed in any::<u64>(),
        context in prop::collection::vec(5u32..9, 0..12),
        n in 1usize..4,
        k in 1usize..5,
    ) {
        // Copy-loving model: strongly prefers continuing the context.
        let ctx = context.clone();
        let m = FnModel {
            vocab: 9,
            f: move |prefix: &[TokenId]| {
                let gen: Vec<TokenId> = prefix.iter().rev().take_while(|&&t| t >= 5).copied().collect();
                let mut h = DefaultHasher::new();
                (seed, prefix.len()).hash(&mut h);
                let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
                let mut s: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
                if let Some(&next) = ctx.get(gen.len()) {
                    s[next as usize] += 4.0;
                }
                for (t, v) in s.iter_mut().enumerate() {
                    if t < NUM_RESERVED && t != EOS as usize {
                        *v = f64::NEG_INFINITY;
                    }
                }
                log_normalize(&s)
            },
        };
        let mut prompt = vec![1];
        prompt.extend(&context);
        prompt.push(3);
        let d = beam_block(&m, &prompt, &context, k, n, 10).unwrap();
        if !d.fallback {
            prop_assert_eq!(context_repetition(&d.tokens, &context, n).unwrap(), 0.0);
        }
        if context.len() < n {
            prop_assert_eq!(d.tokens, beam(&m, &prompt, k, 10).unwrap().tokens);
        }
    }

    #[test]
    fn nucleus_is_reproducible(seed in any::<u64>(), p in 0.05f64..=1.0) {
        let m = hashed_model(seed ^ 0x55, 10, 0.0);
        let a = nucleus(&m, &[1, 3], p, 12, seed, 4).unwrap();
        let b = nucleus(&m, &[1, 3], p, 12, seed, 4).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn nucleus_set_is_minimal_prefix(raw in prop::collection::vec(0.001f64..1.0, 1..10), p in 0.01f64..=1.0) {
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let set = nucleus_set(&probs, p);
        let mass: f64 = set.iter().map(|&i| probs[i]).sum();
        prop_assert!(mass >= p - 1e-12);
        let without_last: f64 = set[..set.len() - 1].iter().map(|&i| probs[i]).sum();
        prop_assert!(without_last < p);
        let min_in = set.iter().map(|&i| probs[i]).fold(f64::INFINITY, f64::min);
        for i in (0..probs.len()).filter(|i| !set.contains(i)) {
            prop_assert!(probs[i] <= min_in);
        }
    }

    #[test]
    fn label_repetition_bounds(y in seq(6, 25), n in 1usize..4) {
        let r = label_repetition(&y, n).unwrap();
        prop_assert!((0.0..1.0).contains(&r));
    }
}

#[test]
fn beam_score_at_least_greedy_on_100_models() {
    let mut worse = Vec::new();
    for s in 0..100u64 {
        let m = hashed_model(s, 12, 0.5);
        let prompt = [1, 5, 6, 3];
        let g = greedy(&m, &prompt, 16).unwrap();
        let b = beam(&m, &prompt, 5, 16).unwrap();
        if b.score < g.score - 1e-9 {
            worse.push((s, g.score, b.score));
        }
    }
    assert!(worse.is_empty(), "beam below greedy: {worse:?}");
}

#[test]
fn nucleus_full_mass_matches_distribution() {
    // Chi-square goodness of fit over 50k single-token draws, V = 10.
    let probs = [0.3, 0.2, 0.15, 0.1, 0.08, 0.07, 0.05, 0.03, 0.015, 0.005];
    let lp: Vec<f64> = probs.iter().map(|p: &f64| p.ln()).collect();
    let m = FnModel { vocab: 10, f: move |_: &[TokenId]| lp.clone() };
    let draws = 50_000;
    let mut counts = [0f64; 10];
    for i in 0..draws {
        let d = nucleus(&m, &[1], 1.0, 1, 11, i).unwrap();
        let tok = d.tokens.first().copied().unwrap_or(EOS);
        counts[tok as usize] += 1.0;
    }
    let chi2: f64 = probs
        .iter()
        .zip(&counts)
        .map(|(p, c)| {
            let e = p * draws as f64;
            (c - e).powi(2) / e
        })
        .sum();
    // Upper 1% point of chi-square with 9 degrees of freedom.
    assert!(chi2 < 21.666, "chi2 = {chi2}");
}
