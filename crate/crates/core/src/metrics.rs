//! Repetition, overlap, perplexity and selection metrics.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::data::Label;
use crate::error::{Error, Result};
use crate::model::{encode_parts, Batch, EncodedExample, Model};
use crate::scalar::Scalar;
use crate::text::{is_reserved, TokenId};

fn content(seq: &[TokenId]) -> Vec<TokenId> {
    seq.iter().copied().filter(|&t| !is_reserved(t)).collect()
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("n-gram size must be >= 1".into()));
    }
    Ok(())
}

/// `1 - |unique n-grams| / |n-grams|`; 0 for sequences shorter than `n`.
pub fn label_repetition(y: &[TokenId], n: usize) -> Result<f64> {
    check_n(n)?;
    let y = content(y);
    if y.len() < n {
        return Ok(0.0);
    }
    let total = y.len() - n + 1;
    let unique: HashSet<&[TokenId]> = y.windows(n).collect();
    Ok((total - unique.len()) as f64 / total as f64)
}

/// Share of `y`'s n-gram occurrences whose tuple appears anywhere in `x`.
pub fn context_repetition(y: &[TokenId], x: &[TokenId], n: usize) -> Result<f64> {
    check_n(n)?;
    let (y, x) = (content(y), content(x));
    if y.len() < n {
        return Ok(0.0);
    }
    let ctx: HashSet<&[TokenId]> = x.windows(n).collect();
    let total = y.len() - n + 1;
    let hits = y.windows(n).filter(|w| ctx.contains(w)).count();
    Ok(hits as f64 / total as f64)
}

/// Multiset unigram F1 over non-reserved tokens.
pub fn unigram_f1(y: &[TokenId], gold: &[TokenId]) -> f64 {
    let (y, gold) = (content(y), content(gold));
    if y.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<TokenId, usize> = HashMap::new();
    for &t in &gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &y {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / y.len() as f64;
    let r = common as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Per-example `(summed NLL, scored tokens)`, evaluated in chunks of `chunk` sequences.
pub fn sequence_nll<T: Scalar>(model: &Model<T>, examples: &[EncodedExample], chunk: usize) -> Result<Vec<(f64, usize)>> {
    let mut out = Vec::with_capacity(examples.len());
    for part in examples.chunks(chunk.max(1)) {
        let refs: Vec<&EncodedExample> = part.iter().collect();
        let batch = Batch::of_examples(&refs);
        let lp = model.log_probs(&batch)?;
        for (b, e) in part.iter().enumerate() {
            let mut nll = 0.0;
            let mut n = 0;
            for p in e.scored_positions() {
                nll -= lp.row(b * batch.seq + p - 1)[e.tokens[p] as usize].to_f64_lossy();
                n += 1;
            }
            out.push((nll, n));
        }
    }
    Ok(out)
}

/// `exp(total NLL / total tokens)`.
pub fn pooled_perplexity(nll: &[(f64, usize)]) -> Result<f64> {
    if nll.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let tokens: usize = nll.iter().map(|x| x.1).sum();
    if tokens == 0 {
        return Err(Error::NoTokens);
    }
    let total: f64 = nll.iter().map(|x| x.0).sum();
    Ok((total / tokens as f64).exp())
}

/// Corpus perplexity over target tokens and EOS.
pub fn perplexity<T: Scalar>(model: &Model<T>, examples: &[EncodedExample]) -> Result<f64> {
    pooled_perplexity(&sequence_nll(model, examples, 32)?)
}

/// A coherent and a contradicting response to the same context.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionPair {
    pub context: Vec<TokenId>,
    pub positive: Vec<TokenId>,
    pub negative: Vec<TokenId>,
    pub label: Label,
}

/// Positive label types reported by selection accuracy.
pub const SELECTION_LABELS: [Label; 3] = [Label::Entail, Label::TripleEntail, Label::Neutral];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelectionReport {
    /// Indexed like [`SELECTION_LABELS`].
    pub correct: [usize; 3],
    pub total: [usize; 3],
    /// Sum of per-pair length-normalized perplexities, positives and negatives.
    pub ppl_pos_sum: [f64; 3],
    pub ppl_neg_sum: [f64; 3],
}

impl SelectionReport {
    pub fn accuracy(&self, label: Label) -> Option<f64> {
        let i = SELECTION_LABELS.iter().position(|&l| l == label)?;
        (self.total[i] > 0).then(|| self.correct[i] as f64 / self.total[i] as f64)
    }

    pub fn pairs(&self) -> usize {
        self.total.iter().sum()
    }

    pub fn mean_ppl_positive(&self) -> Option<f64> {
        let n = self.pairs();
        (n > 0).then(|| self.ppl_pos_sum.iter().sum::<f64>() / n as f64)
    }

    pub fn mean_ppl_negative(&self) -> Option<f64> {
        let n = self.pairs();
        (n > 0).then(|| self.ppl_neg_sum.iter().sum::<f64>() / n as f64)
    }

    /// Mean negative perplexity over mean positive perplexity.
    pub fn ppl_ratio(&self) -> Option<f64> {
        Some(self.mean_ppl_negative()? / self.mean_ppl_positive()?)
    }
}

/// Length-normalized perplexity of each candidate given its context; success
/// when the positive is strictly lower. Pairs with other labels are ignored.
pub fn selection_accuracy<T: Scalar>(model: &Model<T>, pairs: &[SelectionPair]) -> Result<SelectionReport> {
    let max = model.config().max_seq_len;
    let mut encoded = Vec::with_capacity(pairs.len() * 2);
    let mut kept = Vec::new();
    for p in pairs {
        if let Some(i) = SELECTION_LABELS.iter().position(|&l| l == p.label) {
            encoded.push(encode_parts(&p.context, &p.positive, true, max)?);
            encoded.push(encode_parts(&p.context, &p.negative, true, max)?);
            kept.push(i);
        }
    }
    let nll = sequence_nll(model, &encoded, 32)?;
    let mut report = SelectionReport::default();
    for (k, &i) in kept.iter().enumerate() {
        let pos = (nll[2 * k].0 / nll[2 * k].1 as f64).exp();
        let neg = (nll[2 * k + 1].0 / nll[2 * k + 1].1 as f64).exp();
        report.total[i] += 1;
        report.correct[i] += usize::from(pos < neg);
        report.ppl_pos_sum[i] += pos;
        report.ppl_neg_sum[i] += neg;
    }
    Ok(report)
}

/// CSV header of evaluation reports.
pub const REPORT_HEADER: &str =
    "model,dataset,decode,ngram,ppl,f1,ctx_rep,lbl_rep,freq,med,rare,rarest,sel_acc_entail,sel_acc_triple_entail,sel_acc_neutral";

/// CSV header of `analyze` output.
pub const ANALYZE_HEADER: &str = "model,dataset,decode,ngram,ppl,f1,ctx_rep,lbl_rep,freq,med,rare,rarest";

/// One evaluation row; absent metrics render as empty fields.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub model: String,
    pub dataset: String,
    pub decode: String,
    pub ngram: usize,
    pub ppl: Option<f64>,
    pub f1: Option<f64>,
    pub ctx_rep: Option<f64>,
    pub lbl_rep: Option<f64>,
    pub classes: Option<[f64; 4]>,
    pub selection: Option<SelectionReport>,
}

fn field(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl MetricReport {
    fn values(&self, with_selection: bool) -> Vec<String> {
        let mut v = vec![
            csv_escape(&self.model),
            csv_escape(&self.dataset),
            csv_escape(&self.decode),
            self.ngram.to_string(),
            field(self.ppl),
            field(self.f1),
            field(self.ctx_rep),
            field(self.lbl_rep),
        ];
        for i in 0..4 {
            v.push(field(self.classes.map(|c| c[i])));
        }
        if with_selection {
            for l in SELECTION_LABELS {
                v.push(field(self.selection.as_ref().and_then(|s| s.accuracy(l))));
            }
        }
        v
    }

    pub fn csv_row(&self) -> String {
        self.values(true).join(",")
    }

    pub fn analyze_row(&self) -> String {
        self.values(false).join(",")
    }

    /// Named values, for lookups and pretty printing.
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "ppl" => self.ppl,
            "f1" => self.f1,
            "ctx_rep" => self.ctx_rep,
            "lbl_rep" => self.lbl_rep,
            "freq" => self.classes.map(|c| c[0]),
            "med" => self.classes.map(|c| c[1]),
            "rare" => self.classes.map(|c| c[2]),
            "rarest" => self.classes.map(|c| c[3]),
            "sel_acc_entail" => self.selection.as_ref()?.accuracy(Label::Entail),
            "sel_acc_triple_entail" => self.selection.as_ref()?.accuracy(Label::TripleEntail),
            "sel_acc_neutral" => self.selection.as_ref()?.accuracy(Label::Neutral),
            _ => None,
        }
    }
}

/// Column-aligned rendering of CSV text.
pub fn pretty_table(csv: &str) -> String {
    let rows: Vec<Vec<String>> = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(csv.as_bytes())
        .records()
        .filter_map(|r| r.ok())
        .map(|r| r.iter().map(str::to_string).collect())
        .collect();
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in &rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| if c < 3 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}
