use std::collections::HashSet;

use ulkit_core::data::synth::{gen_dialogue_corpus, gen_nli_corpus, GenConfig, NliVariant};
use ulkit_core::data::{read_corpus, split_nli, write_corpus, DialogueExample, Label};

// Generated text is already whitespace-tokenized, so plain word trigrams serve as an oracle.
fn trigrams(text: &str) -> Vec<Vec<&str>> {
    let words: Vec<&str> = text.split_whitespace().collect();
    words.windows(3).map(<[&str]>::to_vec).collect()
}

fn ctx_rep(ex: &DialogueExample) -> f64 {
    let ctx: HashSet<Vec<&str>> = ex.context.iter().chain(&ex.history).flat_map(|s| trigrams(s)).collect();
    let y = trigrams(&ex.target);
    if y.is_empty() {
        return 0.0;
    }
    y.iter().filter(|g| ctx.contains(*g)).count() as f64 / y.len() as f64
}

fn lbl_rep(ex: &DialogueExample) -> f64 {
    let y = trigrams(&ex.target);
    if y.is_empty() {
        return 0.0;
    }
    let unique: HashSet<&Vec<&str>> = y.iter().collect();
    (y.len() - unique.len()) as f64 / y.len() as f64
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn human_repetition_matches_config() {
    let cfg = GenConfig::default();
    let s = gen_dialogue_corpus(&cfg).unwrap();
    let c = mean(s.train.iter().map(ctx_rep));
    let l = mean(s.train.iter().map(lbl_rep));
    assert!((c - cfg.copy_rate).abs() <= 0.05, "context repetition {c}");
    assert!(l <= 0.01, "label repetition {l}");
}

#[test]
fn splits_are_disjoint() {
    let s = gen_dialogue_corpus(&GenConfig { train: 2000, valid: 200, test: 200, ..Default::default() }).unwrap();
    let key = |e: &DialogueExample| serde_json::to_string(e).unwrap();
    let train: HashSet<String> = s.train.iter().map(key).collect();
    let valid: HashSet<String> = s.valid.iter().map(key).collect();
    assert!(s.test.iter().all(|e| !train.contains(&key(e)) && !valid.contains(&key(e))));
    assert!(valid.is_disjoint(&train));
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GenConfig { seed: 4, train: 300, valid: 30, test: 30, ..Default::default() };
    for (i, variant) in [None, Some(NliVariant::TwoUtterance), Some(NliVariant::FullDialogue)].into_iter().enumerate() {
        let gen = || match variant {
            None => gen_dialogue_corpus(&cfg).unwrap(),
            Some(v) => gen_nli_corpus(&cfg, v).unwrap(),
        };
        let (a, b) = (dir.path().join(format!("a{i}")), dir.path().join(format!("b{i}")));
        write_corpus(&a, &gen().train).unwrap();
        write_corpus(&b, &gen().train).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(read_corpus(&a).unwrap(), gen().train);
    }
}

#[test]
fn nli_label_counts_and_pairing() {
    let cfg = GenConfig { train: 600, valid: 90, test: 60, ..Default::default() };
    for v in NliVariant::ALL {
        let s = gen_nli_corpus(&cfg, v).unwrap();
        let count = |c: &[DialogueExample], l: Label| c.iter().filter(|e| e.label == Some(l)).count();
        assert_eq!(count(&s.train, Label::Contradict), 600);
        for l in [Label::Entail, Label::TripleEntail, Label::Neutral] {
            assert_eq!(count(&s.train, l), 200);
            assert_eq!(count(&s.valid, l), 30);
            assert_eq!(count(&s.test, l), 20);
        }
        let split = split_nli(&s.train);
        let pos: HashSet<(&[String], &[String], &str)> =
            split.positive.iter().map(|e| (&e.context[..], &e.history[..], e.target.as_str())).collect();
        assert!(split.negative.iter().all(|e| !pos.contains(&(&e.context[..], &e.history[..], e.target.as_str()))));
        for e in s.valid.iter().chain(&s.test) {
            let neg = e.negative.as_deref().expect("paired");
            assert_ne!(neg, e.target);
            assert!(e.label.is_some_and(Label::is_positive));
        }
    }
}
