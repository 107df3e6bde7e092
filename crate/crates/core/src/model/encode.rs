use crate::error::{Error, Result};
use crate::text::{TokenId, BOS, EOS, PAD, SEP};

/// `BOS context SEP target EOS`, with the loss mask on target tokens and EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub tokens: Vec<TokenId>,
    pub target_mask: Vec<bool>,
}

impl EncodedExample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sep_position(&self) -> usize {
        self.tokens.iter().position(|&t| t == SEP).expect("encoded example has a SEP")
    }

    /// Context tokens between BOS and SEP.
    pub fn context(&self) -> &[TokenId] {
        &self.tokens[1..self.sep_position()]
    }

    /// `BOS context SEP`.
    pub fn prompt(&self) -> &[TokenId] {
        &self.tokens[..=self.sep_position()]
    }

    /// Target tokens without EOS.
    pub fn target(&self) -> &[TokenId] {
        let start = self.sep_position() + 1;
        let end = if self.tokens.last() == Some(&EOS) { self.tokens.len() - 1 } else { self.tokens.len() };
        &self.tokens[start..end]
    }

    /// Positions whose token is scored (target tokens and EOS).
    pub fn scored_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.target_mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }
}

/// Flattens context sentences then history utterances into one token run.
pub fn join_context(context_sents: &[Vec<TokenId>], history: &[Vec<TokenId>]) -> Vec<TokenId> {
    context_sents.iter().chain(history).flatten().copied().collect()
}

/// Encodes one example, dropping leftmost context tokens when over `max_seq_len`.
pub fn encode_example(
    context_sents: &[Vec<TokenId>],
    history: &[Vec<TokenId>],
    target: &[TokenId],
    max_seq_len: usize,
) -> Result<EncodedExample> {
    encode_parts(&join_context(context_sents, history), target, true, max_seq_len)
}

/// Encodes a pre-joined context with a target; `with_eos` appends and scores EOS.
pub fn encode_parts(context: &[TokenId], target: &[TokenId], with_eos: bool, max_seq_len: usize) -> Result<EncodedExample> {
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let fixed = 2 + target.len() + usize::from(with_eos);
    if fixed > max_seq_len {
        return Err(Error::SequenceTooLong { len: fixed, max: max_seq_len });
    }
    let keep = context.len().min(max_seq_len - fixed);
    let context = &context[context.len() - keep..];
    let mut tokens = Vec::with_capacity(fixed + keep);
    tokens.push(BOS);
    tokens.extend_from_slice(context);
    tokens.push(SEP);
    tokens.extend_from_slice(target);
    if with_eos {
        tokens.push(EOS);
    }
    let mut target_mask = vec![false; tokens.len()];
    for m in &mut target_mask[keep + 2..] {
        *m = true;
    }
    Ok(EncodedExample { tokens, target_mask })
}

/// `BOS context SEP` leaving room for `reserve` generated tokens.
pub fn encode_prompt(context: &[TokenId], reserve: usize, max_seq_len: usize) -> Vec<TokenId> {
    let budget = max_seq_len.saturating_sub(2 + reserve);
    let keep = context.len().min(budget);
    let mut out = Vec::with_capacity(keep + 2);
    out.push(BOS);
    out.extend_from_slice(&context[context.len() - keep..]);
    out.push(SEP);
    out
}

/// Right-padded token matrix `[batch, seq]`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub tokens: Vec<TokenId>,
    pub batch: usize,
    pub seq: usize,
}

impl Batch {
    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a [TokenId]>) -> Self {
        let seqs: Vec<&[TokenId]> = seqs.into_iter().collect();
        let seq = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut tokens = vec![PAD; seqs.len() * seq];
        for (row, s) in tokens.chunks_mut(seq.max(1)).zip(&seqs) {
            row[..s.len()].copy_from_slice(s);
        }
        Self { tokens, batch: seqs.len(), seq }
    }

    pub fn of_examples(examples: &[&EncodedExample]) -> Self {
        Self::from_sequences(examples.iter().map(|e| e.tokens.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: TokenId = 10;
    const B: TokenId = 11;
    const C: TokenId = 12;
    const D: TokenId = 13;
    const E: TokenId = 14;

    #[test]
    fn layout_context_history_target() {
        let e = encode_example(&[vec![A, B]], &[vec![C]], &[D, E], 128).unwrap();
        assert_eq!(e.tokens, vec![BOS, A, B, C, SEP, D, E, EOS]);
        assert_eq!(e.target_mask, vec![false, false, false, false, false, true, true, true]);
        assert_eq!(e.context(), &[A, B, C]);
        assert_eq!(e.target(), &[D, E]);
    }

    #[test]
    fn no_context() {
        let e = encode_example(&[], &[], &[D, E], 128).unwrap();
        assert_eq!(e.tokens, vec![BOS, SEP, D, E, EOS]);
        assert_eq!(e.scored_positions().count(), 3);
    }

    #[test]
    fn context_truncated_from_left() {
        let e = encode_example(&[vec![A, B, C]], &[], &[D], 6).unwrap();
        assert_eq!(e.tokens, vec![BOS, B, C, SEP, D, EOS]);
    }

    #[test]
    fn errors() {
        assert!(matches!(encode_example(&[], &[], &[], 10), Err(Error::EmptyTarget)));
        assert!(matches!(encode_example(&[vec![A]], &[], &[D, D, D, D], 6), Err(Error::SequenceTooLong { .. })));
    }

    #[test]
    fn padding() {
        let b = Batch::from_sequences([&[1, 5, 6][..], &[1][..]]);
        assert_eq!(b.seq, 3);
        assert_eq!(b.tokens, vec![1, 5, 6, 1, PAD, PAD]);
    }
}
