//! Vocabulary, tokenization and n-gram utilities.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const UNK: TokenId = 4;
pub const NUM_RESERVED: usize = 5;

const RESERVED_NAMES: [&str; NUM_RESERVED] = ["<pad>", "<bos>", "<eos>", "<sep>", "<unk>"];

pub fn is_reserved(id: TokenId) -> bool {
    (id as usize) < NUM_RESERVED
}

/// Lowercases, splits on whitespace and peels ASCII punctuation into separate tokens.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars().flat_map(char::to_lowercase) {
            if ch.is_ascii_punctuation() {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.push(ch);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Token string <-> id bijection with five reserved ids at the front.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    /// Vocabulary holding only the reserved tokens.
    pub fn new() -> Self {
        let tokens: Vec<String> = RESERVED_NAMES.iter().map(|s| s.to_string()).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();
        Self { tokens, index }
    }

    /// Appends tokens in order; ids start right after the reserved block.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::new();
        for t in tokens {
            v.insert(t.as_ref())?;
        }
        Ok(v)
    }

    /// Builds a vocabulary from raw texts, most frequent first (ties by token string).
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in split_words(text) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut entries: Vec<(String, usize)> =
            counts.into_iter().filter(|(w, _)| !RESERVED_NAMES.contains(&w.as_str())).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(entries.into_iter().map(|(w, _)| w)).expect("deduplicated tokens")
    }

    fn insert(&mut self, token: &str) -> Result<TokenId> {
        if token.is_empty() || token.chars().any(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!("bad vocabulary token {token:?}")));
        }
        if self.index.contains_key(token) {
            return Err(Error::InvalidArgument(format!("duplicate vocabulary token {token:?}")));
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[NUM_RESERVED..]
    }

    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        split_words(text).iter().map(|w| self.id(w).unwrap_or(UNK)).collect()
    }

    /// Space-joined surface form; PAD/BOS/EOS/SEP are dropped, UNK prints as `<unk>`.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS | SEP))
            .map(|&id| self.token(id).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line; line `i` is id `i + 5`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for w in self.words() {
            s.push_str(w);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().filter(|l| !l.is_empty()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// All n-gram windows of `seq` as `(start, window)` in position order.
pub fn ngrams(seq: &[TokenId], n: usize) -> Result<Vec<(usize, &[TokenId])>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n-gram size must be >= 1".into()));
    }
    Ok(seq.windows(n).enumerate().collect())
}

/// Map from n-gram to its sorted start positions.
#[derive(Clone, Debug)]
pub struct NgramIndex {
    n: usize,
    positions: HashMap<Vec<TokenId>, Vec<usize>>,
}

impl NgramIndex {
    pub fn build(seq: &[TokenId], n: usize) -> Result<Self> {
        let mut positions: HashMap<Vec<TokenId>, Vec<usize>> = HashMap::new();
        for (start, gram) in ngrams(seq, n)? {
            positions.entry(gram.to_vec()).or_default().push(start);
        }
        Ok(Self { n, positions })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lookup(&self, gram: &[TokenId]) -> &[usize] {
        self.positions.get(gram).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, gram: &[TokenId]) -> bool {
        self.positions.contains_key(gram)
    }

    /// Number of distinct n-grams.
    pub fn distinct(&self) -> usize {
        self.positions.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(["i", "like", "running", "."]).unwrap()
    }

    #[test]
    fn tokenize_splits_punctuation() {
        let v = vocab();
        let ids = v.tokenize("I like running.");
        let want: Vec<TokenId> = ["i", "like", "running", "."].iter().map(|t| v.id(t).unwrap()).collect();
        assert_eq!(ids, want);
    }

    #[test]
    fn tokenize_empty_and_unknown() {
        let v = vocab();
        assert!(v.tokenize("").is_empty());
        assert_eq!(v.tokenize("zzzunknown"), vec![UNK]);
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::new();
        assert_eq!(v.id("<pad>"), Some(PAD));
        assert_eq!(v.id("<bos>"), Some(BOS));
        assert_eq!(v.id("<eos>"), Some(EOS));
        assert_eq!(v.id("<sep>"), Some(SEP));
        assert_eq!(v.id("<unk>"), Some(UNK));
        assert_eq!(vocab().id("i"), Some(5));
    }

    #[test]
    fn vocabulary_text_round_trip() {
        let v = Vocabulary::build(["b a a .", "c , a"]);
        assert_eq!(v.words()[0], "a");
        let back = Vocabulary::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn duplicate_tokens_rejected() {
        assert!(Vocabulary::from_tokens(["a", "a"]).is_err());
    }

    #[test]
    fn ngram_examples() {
        let (a, b, c) = (5, 6, 7);
        let seq = [a, b, c];
        let g = ngrams(&seq, 2).unwrap();
        assert_eq!(g, vec![(0, &[a, b][..]), (1, &[b, c][..])]);
        assert!(ngrams(&[a], 2).unwrap().is_empty());
        let seq = [a, b, a, b];
        let g = ngrams(&seq, 2).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g[0].1, g[2].1);
        assert!(ngrams(&[a], 0).is_err());
    }

    #[test]
    fn index_lookup() {
        let idx = NgramIndex::build(&[5, 6, 7, 8], 2).unwrap();
        assert_eq!(idx.lookup(&[6, 7]), &[1]);
        assert!(idx.lookup(&[8, 5]).is_empty());
        let idx = NgramIndex::build(&[5, 6, 5, 6], 2).unwrap();
        assert_eq!(idx.lookup(&[5, 6]), &[0, 2]);
    }
}
