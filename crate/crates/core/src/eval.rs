//! Read-only evaluation of a trained model on a corpus.

use crate::data::Tokenized;
use crate::decoding::{decode, DecodeConfig};
use crate::error::{Error, Result};
use crate::metrics::{
    context_repetition, label_repetition, perplexity, selection_accuracy, unigram_f1, MetricReport, SelectionPair,
};
use crate::model::{encode_prompt, EncodedExample, Model};
use crate::scalar::Scalar;
use crate::text::TokenId;
use crate::vocab_stats::{class_fractions, FrequencyClasses};

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub decode: DecodeConfig,
    pub ngram: usize,
    /// Decode at most this many examples (all when `None`).
    pub max_examples: Option<usize>,
    pub generate: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { decode: DecodeConfig::default(), ngram: 3, max_examples: None, generate: true }
    }
}

/// Metrics plus the decoded continuations they were computed from.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricReport,
    pub generations: Vec<Vec<TokenId>>,
    /// Decodes where context blocking hit a dead end.
    pub fallbacks: usize,
}

/// Decodes every context with the configured strategy; example `i` uses sampling stream `i`.
pub fn generate_all<T: Scalar>(
    model: &Model<T>,
    data: &[Tokenized],
    cfg: &DecodeConfig,
) -> Result<(Vec<Vec<TokenId>>, usize)> {
    cfg.validate()?;
    let max_seq = model.config().max_seq_len;
    let mut out = Vec::with_capacity(data.len());
    let mut fallbacks = 0;
    for (i, t) in data.iter().enumerate() {
        let prompt = encode_prompt(&t.context, cfg.max_len, max_seq);
        let d = decode(model, &prompt, &t.context, cfg, i as u64)?;
        fallbacks += usize::from(d.fallback);
        out.push(d.tokens);
    }
    Ok((out, fallbacks))
}

/// Perplexity on gold targets, decoding metrics, class fractions when
/// `classes` is given, and selection accuracy when records carry negatives.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    data: &[Tokenized],
    opts: &EvalOptions,
    classes: Option<&FrequencyClasses>,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let max_seq = model.config().max_seq_len;
    let encoded: Vec<EncodedExample> = data.iter().map(|t| t.encode(max_seq)).collect::<Result<_>>()?;
    let mut report = MetricReport {
        decode: opts.decode.label(),
        ngram: opts.ngram,
        ppl: Some(perplexity(model, &encoded)?),
        ..Default::default()
    };
    let mut generations = Vec::new();
    let mut fallbacks = 0;
    if opts.generate {
        let take = opts.max_examples.unwrap_or(data.len()).min(data.len());
        let subset = &data[..take];
        (generations, fallbacks) = generate_all(model, subset, &opts.decode)?;
        let n = generations.len() as f64;
        let (mut f1, mut ctx, mut lbl) = (0.0, 0.0, 0.0);
        for (y, t) in generations.iter().zip(subset) {
            f1 += unigram_f1(y, &t.target);
            ctx += context_repetition(y, &t.context, opts.ngram)?;
            lbl += label_repetition(y, opts.ngram)?;
        }
        report.f1 = Some(f1 / n);
        report.ctx_rep = Some(ctx / n);
        report.lbl_rep = Some(lbl / n);
        if let Some(c) = classes {
            report.classes = class_fractions(&generations, c).ok();
        }
    }
    let pairs: Vec<SelectionPair> = data.iter().filter_map(Tokenized::selection_pair).collect();
    if !pairs.is_empty() {
        report.selection = Some(selection_accuracy(model, &pairs)?);
    }
    Ok(Evaluation { report, generations, fallbacks })
}
