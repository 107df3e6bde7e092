//! Unigram distributions over model generations and human targets, and frequency classes.

use std::collections::VecDeque;
use std::fmt;

use crate::error::{Error, Result};
use crate::text::{is_reserved, TokenId};

pub const DEFAULT_WINDOW: usize = 32;

/// Token counts over the last `capacity` batches of generations.
#[derive(Clone, Debug)]
pub struct RunningUnigram {
    vocab_size: usize,
    capacity: usize,
    window: VecDeque<Vec<(TokenId, u64)>>,
    counts: Vec<u64>,
    total: u64,
}

impl RunningUnigram {
    pub fn new(vocab_size: usize, capacity: usize) -> Result<Self> {
        if capacity == 0 || vocab_size == 0 {
            return Err(Error::Config("window and vocabulary must be non-empty".into()));
        }
        Ok(Self { vocab_size, capacity, window: VecDeque::new(), counts: vec![0; vocab_size], total: 0 })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn batches(&self) -> usize {
        self.window.len()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Buffered per-batch counts, oldest first.
    pub fn window(&self) -> impl Iterator<Item = &[(TokenId, u64)]> {
        self.window.iter().map(Vec::as_slice)
    }

    /// Pushes one batch of generated tokens; reserved ids are ignored.
    pub fn update<'a>(&mut self, tokens: impl IntoIterator<Item = &'a TokenId>) {
        let mut batch: Vec<(TokenId, u64)> = Vec::new();
        let mut sorted: Vec<TokenId> =
            tokens.into_iter().copied().filter(|&t| !is_reserved(t) && (t as usize) < self.vocab_size).collect();
        sorted.sort_unstable();
        for t in sorted {
            match batch.last_mut() {
                Some((last, c)) if *last == t => *c += 1,
                _ => batch.push((t, 1)),
            }
        }
        if self.window.len() == self.capacity {
            for (t, c) in self.window.pop_front().expect("full window") {
                self.counts[t as usize] -= c;
                self.total -= c;
            }
        }
        for &(t, c) in &batch {
            self.counts[t as usize] += c;
            self.total += c;
        }
        self.window.push_back(batch);
    }

    /// `count / |Y|`, or uniform `1 / V` before any token has been seen.
    pub fn p_model(&self, token: TokenId) -> f64 {
        if self.total == 0 {
            return 1.0 / self.vocab_size as f64;
        }
        self.counts.get(token as usize).map_or(0.0, |&c| c as f64 / self.total as f64)
    }

    /// Snapshot of `p_model` for every id.
    pub fn distribution(&self) -> Vec<f64> {
        (0..self.vocab_size).map(|t| self.p_model(t as TokenId)).collect()
    }
}

/// Token distribution of gold targets.
#[derive(Clone, Debug, PartialEq)]
pub struct HumanUnigram {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl HumanUnigram {
    pub fn p(&self, token: TokenId) -> f64 {
        self.counts.get(token as usize).map_or(0.0, |&c| c as f64 / self.total as f64)
    }

    pub fn distribution(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|t| self.p(t as TokenId)).collect()
    }
}

/// Counts non-reserved tokens over the given targets.
pub fn human_unigram<'a>(targets: impl IntoIterator<Item = &'a [TokenId]>, vocab_size: usize) -> Result<HumanUnigram> {
    let mut counts = vec![0u64; vocab_size];
    let mut seen = false;
    for t in targets {
        seen = true;
        for &tok in t {
            if !is_reserved(tok) {
                let slot = counts
                    .get_mut(tok as usize)
                    .ok_or_else(|| Error::InvalidArgument(format!("token {tok} outside vocabulary")))?;
                *slot += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    if !seen {
        return Err(Error::EmptyCorpus);
    }
    if total == 0 {
        return Err(Error::NoTokens);
    }
    Ok(HumanUnigram { counts, total })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FreqClass {
    Frequent,
    Medium,
    Rare,
    Rarest,
}

impl FreqClass {
    pub const ALL: [FreqClass; 4] = [FreqClass::Frequent, FreqClass::Medium, FreqClass::Rare, FreqClass::Rarest];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["freq", "med", "rare", "rarest"][self as usize]
    }
}

impl fmt::Display for FreqClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Cumulative-mass boundaries between classes.
pub const CLASS_BOUNDARIES: [f64; 3] = [0.4, 0.7, 0.9];
const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyClasses {
    pub classes: Vec<FreqClass>,
}

impl FrequencyClasses {
    pub fn class(&self, token: TokenId) -> FreqClass {
        self.classes.get(token as usize).copied().unwrap_or(FreqClass::Rarest)
    }

    /// Mass of `dist` falling in each class.
    pub fn masses(&self, dist: &[f64]) -> [f64; 4] {
        let mut m = [0.0; 4];
        for (t, &p) in dist.iter().enumerate() {
            m[self.class(t as TokenId).index()] += p;
        }
        m
    }
}

/// Greedy-inclusive partition: tokens in descending `p*` (ties by id) fill a
/// class until its cumulative mass reaches the next boundary.
pub fn frequency_classes(p_star: &[f64]) -> FrequencyClasses {
    let mut order: Vec<usize> = (0..p_star.len()).collect();
    order.sort_by(|&a, &b| p_star[b].total_cmp(&p_star[a]).then(a.cmp(&b)));
    let mut classes = vec![FreqClass::Rarest; p_star.len()];
    let mut class = 0;
    let mut cum = 0.0;
    for t in order {
        classes[t] = FreqClass::ALL[class];
        cum += p_star[t];
        while class < 3 && cum >= CLASS_BOUNDARIES[class] - BOUNDARY_TOL {
            class += 1;
        }
    }
    FrequencyClasses { classes }
}

/// Fraction of generated (non-reserved) tokens in each class.
pub fn class_fractions<S: AsRef<[TokenId]>>(generations: &[S], classes: &FrequencyClasses) -> Result<[f64; 4]> {
    let mut counts = [0u64; 4];
    for g in generations {
        for &t in g.as_ref() {
            if !is_reserved(t) {
                counts[classes.class(t).index()] += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::NoTokens);
    }
    Ok(counts.map(|c| c as f64 / total as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: TokenId = 5;
    const B: TokenId = 6;
    const C: TokenId = 7;

    #[test]
    fn window_keeps_last_batches() {
        let mut s = RunningUnigram::new(8, 2).unwrap();
        assert_eq!(s.p_model(A), 1.0 / 8.0);
        s.update(&[A, A, B]);
        s.update(&[B, C]);
        s.update(&[C, C]);
        assert_eq!(s.total(), 4);
        assert_eq!(s.p_model(C), 0.75);
        assert_eq!(s.p_model(A), 0.0);
        assert_eq!(s.batches(), 2);
    }

    #[test]
    fn reserved_tokens_ignored() {
        let mut s = RunningUnigram::new(8, 4).unwrap();
        s.update(&[0, 1, 2, 3, 4, A]);
        assert_eq!(s.total(), 1);
        assert_eq!(s.p_model(A), 1.0);
    }

    #[test]
    fn human_counts() {
        let h = human_unigram([&[A, A, B][..]], 8).unwrap();
        assert!((h.p(A) - 2.0 / 3.0).abs() < 1e-15);
        assert!((h.p(B) - 1.0 / 3.0).abs() < 1e-15);
        assert!(human_unigram(std::iter::empty::<&[TokenId]>(), 8).is_err());
    }

    #[test]
    fn greedy_class_examples() {
        let p = [0.5, 0.3, 0.15, 0.05];
        let c = frequency_classes(&p);
        assert_eq!(c.classes, vec![FreqClass::Frequent, FreqClass::Medium, FreqClass::Rare, FreqClass::Rarest]);
        let u = frequency_classes(&[0.1; 10]);
        let mut n = [0; 4];
        for k in &u.classes {
            n[k.index()] += 1;
        }
        assert_eq!(n, [4, 3, 2, 1]);
    }

    #[test]
    fn fractions_count_tokens() {
        let c = frequency_classes(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.3, 0.15, 0.05]);
        let f = class_fractions(&[vec![5, 5, 6], vec![8, 2]], &c).unwrap();
        assert_eq!(f, [0.5, 0.25, 0.0, 0.25]);
        assert!(class_fractions(&[vec![2u32]], &c).is_err());
    }
}
