//! Line-delimited JSON corpus records.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coherence label of an NLI-derived example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "E")]
    Entail,
    #[serde(rename = "TE")]
    TripleEntail,
    #[serde(rename = "N")]
    Neutral,
    #[serde(rename = "C")]
    Contradict,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::Entail, Label::TripleEntail, Label::Neutral, Label::Contradict];

    pub fn code(self) -> &'static str {
        match self {
            Label::Entail => "E",
            Label::TripleEntail => "TE",
            Label::Neutral => "N",
            Label::Contradict => "C",
        }
    }

    /// Coherent labels go to the likelihood set.
    pub fn is_positive(self) -> bool {
        self != Label::Contradict
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Label::ALL
            .into_iter()
            .find(|l| l.code() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown label {s:?}")))
    }
}

/// Context sentences, history utterances and the gold response.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueExample {
    #[serde(default)]
    pub context: Vec<String>,
    #[serde(default)]
    pub history: Vec<String>,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative: Option<String>,
}

impl DialogueExample {
    pub fn new(context: Vec<String>, history: Vec<String>, target: impl Into<String>) -> Self {
        Self { context, history, target: target.into(), label: None, negative: None }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_negative(mut self, negative: impl Into<String>) -> Self {
        self.negative = Some(negative.into());
        self
    }

    /// All text of the example, for vocabulary building.
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.context
            .iter()
            .chain(&self.history)
            .map(String::as_str)
            .chain(std::iter::once(self.target.as_str()))
            .chain(self.negative.as_deref())
    }
}

/// One record per line.
pub fn to_jsonl(corpus: &[DialogueExample]) -> String {
    let mut out = String::new();
    for ex in corpus {
        out.push_str(&serde_json::to_string(ex).expect("serializable record"));
        out.push('\n');
    }
    out
}

/// Parses records; `origin` names the source in errors. Blank lines are skipped.
pub fn parse_jsonl(text: &str, origin: &str) -> Result<Vec<DialogueExample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Corpus { path: origin.into(), line: i + 1, msg };
        let ex: DialogueExample = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if ex.target.trim().is_empty() {
            return Err(err("empty target".into()));
        }
        if ex.negative.as_deref().is_some_and(|n| n.trim().is_empty()) {
            return Err(err("empty negative".into()));
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<DialogueExample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_jsonl(&text, &path.display().to_string())
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &[DialogueExample]) -> Result<()> {
    fs::write(path, to_jsonl(corpus))?;
    Ok(())
}

/// Likelihood set, unlikelihood set and selection pairs of a labelled corpus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NliSplit {
    pub positive: Vec<DialogueExample>,
    pub negative: Vec<DialogueExample>,
    /// Records that carry a contradicting alternative.
    pub pairs: Vec<DialogueExample>,
}

/// Labelled E/TE/N records form the likelihood set, C records the
/// unlikelihood set; any record with `negative` is also a selection pair.
/// Unlabelled records count as positive.
pub fn split_nli(corpus: &[DialogueExample]) -> NliSplit {
    let mut s = NliSplit::default();
    for ex in corpus {
        if ex.negative.is_some() {
            s.pairs.push(ex.clone());
        }
        match ex.label {
            Some(Label::Contradict) => s.negative.push(ex.clone()),
            _ => s.positive.push(ex.clone()),
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let c = vec![
            DialogueExample::new(vec!["i like tea .".into()], vec!["hi".into()], "me too"),
            DialogueExample::new(vec![], vec![], "a \"quoted\" word").with_label(Label::TripleEntail).with_negative("no"),
        ];
        let text = to_jsonl(&c);
        let back = parse_jsonl(&text, "mem").unwrap();
        assert_eq!(back, c);
        assert_eq!(to_jsonl(&back), text);
    }

    #[test]
    fn errors_name_the_line() {
        let text = "{\"context\":[],\"history\":[],\"target\":\"ok\"}\n{\"context\":[],\"hist";
        match parse_jsonl(text, "f.jsonl") {
            Err(Error::Corpus { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_label_and_field_rejected() {
        assert!(parse_jsonl("{\"target\":\"a\",\"label\":\"X\"}", "f").is_err());
        assert!(parse_jsonl("{\"target\":\"a\",\"speaker\":\"bot\"}", "f").is_err());
        assert!(parse_jsonl("{\"target\":\"  \"}", "f").is_err());
    }

    #[test]
    fn nli_split() {
        let c = vec![
            DialogueExample::new(vec![], vec![], "a").with_label(Label::Entail),
            DialogueExample::new(vec![], vec![], "b").with_label(Label::Contradict),
            DialogueExample::new(vec![], vec![], "c").with_label(Label::Neutral).with_negative("d"),
        ];
        let s = split_nli(&c);
        assert_eq!(s.positive.len(), 2);
        assert_eq!(s.negative.len(), 1);
        assert_eq!(s.pairs.len(), 1);
    }
}
