//! Corpora: record format, tokenization into model inputs, synthetic generators.

mod corpus;
pub mod synth;

pub use corpus::{parse_jsonl, read_corpus, split_nli, to_jsonl, write_corpus, DialogueExample, Label, NliSplit};

use crate::error::Result;
use crate::metrics::SelectionPair;
use crate::model::{encode_parts, EncodedExample};
use crate::text::{TokenId, Vocabulary};

/// Token ids of one record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenized {
    /// Context sentences followed by history utterances.
    pub context: Vec<TokenId>,
    pub target: Vec<TokenId>,
    pub negative: Option<Vec<TokenId>>,
    pub label: Option<Label>,
}

impl Tokenized {
    pub fn encode(&self, max_seq_len: usize) -> Result<EncodedExample> {
        encode_parts(&self.context, &self.target, true, max_seq_len)
    }

    pub fn selection_pair(&self) -> Option<SelectionPair> {
        Some(SelectionPair {
            context: self.context.clone(),
            positive: self.target.clone(),
            negative: self.negative.clone()?,
            label: self.label?,
        })
    }
}

pub fn tokenize_example(vocab: &Vocabulary, ex: &DialogueExample) -> Tokenized {
    let mut context = Vec::new();
    for s in ex.context.iter().chain(&ex.history) {
        context.extend(vocab.tokenize(s));
    }
    Tokenized {
        context,
        target: vocab.tokenize(&ex.target),
        negative: ex.negative.as_deref().map(|n| vocab.tokenize(n)),
        label: ex.label,
    }
}

pub fn tokenize_corpus(vocab: &Vocabulary, corpus: &[DialogueExample]) -> Vec<Tokenized> {
    corpus.iter().map(|e| tokenize_example(vocab, e)).collect()
}

/// Vocabulary over every string of the given corpora.
pub fn build_vocab(corpus: &[DialogueExample]) -> Vocabulary {
    Vocabulary::build(corpus.iter().flat_map(DialogueExample::texts))
}
