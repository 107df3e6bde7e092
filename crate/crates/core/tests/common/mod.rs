//! Brute-force oracles and toy models shared by the integration tests.
#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ulkit_core::decoding::toy::{log_normalize, FnModel};
use ulkit_core::decoding::LanguageModel;
use ulkit_core::objectives::CandidateSet;
use ulkit_core::text::{TokenId, EOS, NUM_RESERVED};

/// Tokens covered by a target window equal to some context window.
pub fn oracle_context_copy(x: &[TokenId], y: &[TokenId], n: usize) -> Vec<bool> {
    let mut marked = vec![false; y.len()];
    for t in 0..y.len() {
        for i in t.saturating_sub(n - 1)..=t {
            if i + n > y.len() {
                continue;
            }
            let hit = (0..x.len().saturating_sub(n - 1)).any(|j| x.len() >= n && x[j..j + n] == y[i..i + n]);
            if hit {
                marked[t] = true;
            }
        }
    }
    marked
}

/// Tokens covered by an occurrence with an identical, fully earlier occurrence.
pub fn oracle_label_repeat(y: &[TokenId], n: usize) -> Vec<bool> {
    let mut marked = vec![false; y.len()];
    for t in 0..y.len() {
        for i in t.saturating_sub(n - 1)..=t {
            if i + n > y.len() {
                continue;
            }
            if (0..i).any(|j| j + n <= i && y[j..j + n] == y[i..i + n]) {
                marked[t] = true;
            }
        }
    }
    marked
}

pub fn as_marks(c: &CandidateSet, y: &[TokenId]) -> Vec<bool> {
    c.positions
        .iter()
        .zip(y)
        .map(|(p, &tok)| {
            assert!(p.len() <= 1);
            if let Some(&(cand, beta)) = p.first() {
                assert_eq!(cand, tok);
                assert_eq!(beta, 1.0);
                true
            } else {
                false
            }
        })
        .collect()
}

/// Random but fixed next-token distribution per (model seed, generated suffix).
pub fn hashed_model(seed: u64, vocab: usize, eos_bias: f64) -> FnModel<impl Fn(&[TokenId]) -> Vec<f64>> {
    FnModel {
        vocab,
        f: move |prefix: &[TokenId]| {
            let mut h = DefaultHasher::new();
            (seed, prefix).hash(&mut h);
            let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
            let mut scores: Vec<f64> = (0..vocab).map(|_| rng.gen_range(-3.0..3.0)).collect();
            scores[EOS as usize] += eos_bias;
            for (t, s) in scores.iter_mut().enumerate() {
                if t < NUM_RESERVED && t != EOS as usize {
                    *s = f64::NEG_INFINITY;
                }
            }
            log_normalize(&scores)
        },
    }
}

/// Sum of log-probabilities of `tokens` (plus EOS when shorter than `max_len`).
pub fn sequence_score<M: LanguageModel>(m: &M, prompt: &[TokenId], tokens: &[TokenId], max_len: usize) -> f64 {
    let mut state = m.start(prompt).unwrap();
    let mut s = 0.0;
    for &t in tokens {
        s += m.log_probs(&state)[t as usize];
        m.advance(&mut state, t).unwrap();
    }
    if tokens.len() < max_len {
        s += m.log_probs(&state)[EOS as usize];
    }
    s
}
