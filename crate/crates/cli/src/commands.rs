use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use ulkit_core::data::synth::{gen_dialogue_corpus, gen_nli_corpus, GenConfig, NliVariant, Splits};
use ulkit_core::data::{build_vocab, read_corpus, split_nli, tokenize_corpus, write_corpus, DialogueExample, Tokenized};
use ulkit_core::decoding::{DecodeConfig, Strategy};
use ulkit_core::eval::{evaluate, generate_all, EvalOptions};
use ulkit_core::metrics::{pretty_table, ANALYZE_HEADER, REPORT_HEADER};
use ulkit_core::model::{Checkpoint, Model, ModelConfig};
use ulkit_core::objectives::{Mode, MixWeights};
use ulkit_core::selftest::{self, SelftestOptions};
use ulkit_core::text::Vocabulary;
use ulkit_core::train::{train, TrainConfig, TrainData};
use ulkit_core::vocab_stats::{frequency_classes, human_unigram, FrequencyClasses};

use crate::config::{usage, Resolver};
use crate::{Cli, Command, DecodeArgs, EvalArgs, GenDataArgs, GenerateArgs, SelftestArgs, TrainArgs};

pub fn dispatch(cli: Cli) -> anyhow::Result<u8> {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::GenData(a) => gen_data(a, cfg),
        Command::Train(a) => train_cmd(a, cfg),
        Command::Eval(a) => eval_cmd(a, cfg, cli.pretty, false),
        Command::Analyze(a) => eval_cmd(a, cfg, cli.pretty, true),
        Command::Generate(a) => generate(a, cfg),
        Command::Selftest(a) => selftest_cmd(a, cfg),
    }
}

fn write_splits(dir: &Path, s: &Splits) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, part) in [("train", &s.train), ("valid", &s.valid), ("test", &s.test)] {
        write_corpus(dir.join(format!("{name}.jsonl")), part)?;
    }
    Ok(())
}

fn gen_data(a: GenDataArgs, config: Option<&Path>) -> anyhow::Result<u8> {
    let mut r = Resolver::new("gen-data", config)?;
    let d = GenConfig::default();
    let task: String = r.value("task", a.task, "dialogue".into())?;
    let cfg = GenConfig {
        seed: r.seed("seed", a.seed)?,
        train: r.value("train", a.train, d.train)?,
        valid: r.value("valid", a.valid, d.valid)?,
        test: r.value("test", a.test, d.test)?,
        copy_rate: r.value("copy_rate", a.copy_rate, d.copy_rate)?,
        repeat_rate: r.value("repeat_rate", a.repeat_rate, d.repeat_rate)?,
        zipf_exponent: r.value("zipf", a.zipf, d.zipf_exponent)?,
    };
    let out = r.required_path("out", a.out)?;
    r.finish()?;
    cfg.validate()?;
    match task.as_str() {
        "dialogue" => write_splits(&out, &gen_dialogue_corpus(&cfg)?)?,
        "nli" => {
            for v in NliVariant::ALL {
                write_splits(&out.join(v.name()), &gen_nli_corpus(&cfg, v)?)?;
            }
        }
        other => return Err(usage(format!("unknown task {other:?} (expected dialogue or nli)"))),
    }
    Ok(0)
}

fn read_split(dir: &Path, split: &str) -> anyhow::Result<Vec<DialogueExample>> {
    let p = dir.join(format!("{split}.jsonl"));
    read_corpus(&p).with_context(|| format!("reading {}", p.display()))
}

/// Sibling path `<dir>/<stem><suffix>`.
fn beside(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn train_cmd(a: TrainArgs, config: Option<&Path>) -> anyhow::Result<u8> {
    let mut r = Resolver::new("train", config)?;
    let data_dirs = r.paths("data", a.data)?;
    if data_dirs.is_empty() {
        return Err(usage("train requires --data DIR"));
    }
    let d = TrainConfig::default();
    let mode = r.value("objective", a.objective, Mode::Mle)?;
    let alpha = r.value("alpha", a.alpha, 1.0)?;
    let weights = MixWeights {
        alpha_context: r.value("alpha_context", a.alpha_context, alpha)?,
        alpha_label: r.value("alpha_label", a.alpha_label, alpha)?,
        alpha_vocab: r.value("alpha_vocab", a.alpha_vocab, alpha)?,
        alpha_nli: r.value("alpha_nli", a.alpha_nli, alpha)?,
    };
    let tc = TrainConfig {
        mode,
        weights,
        ngram: r.value("ngram", a.ngram, d.ngram)?,
        batch_size: r.value("batch_size", a.batch_size, d.batch_size)?,
        steps: r.value("steps", a.steps, d.steps)?,
        lr: r.value("lr", a.lr, d.lr)?,
        warmup: r.value("warmup", a.warmup, d.warmup)?,
        seed: r.seed("seed", a.seed)?,
        window: r.value("window", a.window, d.window)?,
        eval_interval: r.value("eval_interval", a.eval_interval, d.eval_interval)?,
        gen_max_len: r.value("gen_max_len", a.gen_max_len, d.gen_max_len)?,
        clip: r.value("clip", a.clip, d.clip)?,
        valid_limit: Some(r.value("valid_limit", a.valid_limit, d.valid_limit.unwrap_or(usize::MAX))?),
        valid_gen: r.value("valid_gen", a.valid_gen, d.valid_gen)?,
    };
    let init_from = r.path("init_from", a.init_from)?;
    let out = r.value("out", a.out.map(|p| p.display().to_string()), "model.bin".into()).map(PathBuf::from)?;
    let log_path = r.path("log", a.log)?.unwrap_or_else(|| beside(&out, ".log.csv"));

    let mut train_set = Vec::new();
    let mut valid_set = Vec::new();
    for dir in &data_dirs {
        train_set.extend(read_split(dir, "train")?);
        valid_set.extend(read_split(dir, "valid")?);
    }

    let dims = [
        ("embed_dim", r.optional("embed_dim", a.embed_dim)?),
        ("layers", r.optional("layers", a.layers)?),
        ("heads", r.optional("heads", a.heads)?),
        ("ff_dim", r.optional("ff_dim", a.ff_dim)?),
        ("max_seq_len", r.optional("max_seq_len", a.max_seq_len)?),
    ];
    let dropout = r.optional("dropout", a.dropout)?;
    let (model, vocab) = match &init_from {
        Some(p) => {
            let ck = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
            let c = ck.model.config();
            let actual = [c.embed_dim, c.layers, c.heads, c.ff_dim, c.max_seq_len];
            for ((key, asked), have) in dims.iter().zip(actual) {
                match asked {
                    Some(v) if *v != have => {
                        return Err(usage(format!("{key} = {v} conflicts with the checkpoint's {have}")))
                    }
                    Some(_) => {}
                    None => r.note(key, have),
                }
            }
            if dropout.is_none() {
                r.note("dropout", c.dropout);
            }
            let mut model = ck.model;
            if let Some(d) = dropout {
                let mut mc = model.config().clone();
                mc.dropout = d;
                mc.validate()?;
                model = Model::from_params(mc, model.params().to_vec())?;
            }
            (model, ck.vocab)
        }
        None => {
            let mut all = train_set.clone();
            all.extend(valid_set.iter().cloned());
            let vocab = build_vocab(&all);
            let base = ModelConfig::new(vocab.len());
            let defaults = [base.embed_dim, base.layers, base.heads, base.ff_dim, base.max_seq_len];
            let mut v = [0usize; 5];
            for (i, ((key, asked), def)) in dims.iter().zip(defaults).enumerate() {
                v[i] = asked.unwrap_or(def);
                if asked.is_none() {
                    r.note(key, def);
                }
            }
            let dropout = dropout.unwrap_or_else(|| {
                r.note("dropout", base.dropout);
                base.dropout
            });
            let mc = ModelConfig {
                embed_dim: v[0],
                layers: v[1],
                heads: v[2],
                ff_dim: v[3],
                max_seq_len: v[4],
                dropout,
                ..base
            };
            mc.validate()?;
            (Model::init(mc, tc.seed)?, vocab)
        }
    };
    r.finish()?;
    tc.validate()?;

    // Labelled contradictions become unlikelihood examples; everything else is likelihood data.
    let split = split_nli(&train_set);
    let train_tok = tokenize_corpus(&vocab, &split.positive);
    let human = if mode == Mode::UlVocab {
        Some(human_unigram(train_tok.iter().map(|t| t.target.as_slice()), vocab.len())?)
    } else {
        None
    };
    let data = TrainData {
        negatives: if mode == Mode::Nli { tokenize_corpus(&vocab, &split.negative) } else { Vec::new() },
        valid: tokenize_corpus(&vocab, &split_nli(&valid_set).positive),
        train: train_tok,
        human,
    };
    eprintln!(
        "train: {} examples, {} negatives, {} valid, vocab {}, {} parameters",
        data.train.len(),
        data.negatives.len(),
        data.valid.len(),
        vocab.len(),
        model.num_params()
    );
    let outcome = train(&tc, model, &data, |row| {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        eprintln!(
            "step {:>6}  mle {:.4}  ul {:.4}  lr {:.2e}  valid_ppl {}  ctx_rep {}  lbl_rep {}",
            row.step,
            row.mle_loss,
            row.ul_loss,
            row.lr,
            opt(row.valid_ppl),
            opt(row.valid_ctx_rep),
            opt(row.valid_lbl_rep)
        );
    })?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let best_path = beside(&out, ".best.bin");
    Checkpoint::new(outcome.model, vocab.clone())?.save(&out)?;
    Checkpoint::new(outcome.best, vocab)?.save(&best_path)?;
    fs::write(&log_path, outcome.log.to_csv())?;
    eprintln!(
        "wrote {} and {} (best valid ppl {:.4} at step {}), log {}",
        out.display(),
        best_path.display(),
        outcome.best_ppl,
        outcome.best_step,
        log_path.display()
    );
    Ok(0)
}

fn resolve_decode(r: &mut Resolver, a: DecodeArgs) -> anyhow::Result<DecodeConfig> {
    let d = DecodeConfig::default();
    let cfg = DecodeConfig {
        strategy: r.value("decode", a.decode, Strategy::Greedy)?,
        beam_size: r.value("beam_size", a.beam_size, d.beam_size)?,
        block_n: r.value("block_n", a.block_n, d.block_n)?,
        nucleus_p: r.value("p", a.p, d.nucleus_p)?,
        max_len: r.value("max_len", a.max_len, d.max_len)?,
        seed: r.seed("seed", a.seed)?,
    };
    Ok(cfg)
}

fn load_model(path: &Path) -> anyhow::Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn load_data(path: &Path, vocab: &Vocabulary) -> anyhow::Result<Vec<Tokenized>> {
    let corpus = read_corpus(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(tokenize_corpus(vocab, &corpus))
}

fn classes_from(path: &Path, vocab: &Vocabulary) -> anyhow::Result<FrequencyClasses> {
    let human = load_data(path, vocab)?;
    let unigram = human_unigram(human.iter().map(|t| t.target.as_slice()), vocab.len())?;
    Ok(frequency_classes(&unigram.distribution()))
}

fn name_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn eval_cmd(a: EvalArgs, config: Option<&Path>, pretty: bool, analyze: bool) -> anyhow::Result<u8> {
    let mut r = Resolver::new(if analyze { "analyze" } else { "eval" }, config)?;
    let model_path = r.required_path("model", a.model)?;
    let data_path = r.required_path("data", a.data)?;
    let human_path = r.path("human_data", a.human_data)?.unwrap_or_else(|| data_path.clone());
    let ngram = r.value("ngram", a.ngram, 3usize)?;
    let max_examples = r.optional("max_examples", a.max_examples)?;
    let decode = resolve_decode(&mut r, a.decode)?;
    r.finish()?;
    if ngram == 0 {
        return Err(usage("ngram must be >= 1"));
    }
    decode.validate()?;

    let ck = load_model(&model_path)?;
    let data = load_data(&data_path, &ck.vocab)?;
    let classes = classes_from(&human_path, &ck.vocab)?;
    let opts = EvalOptions { decode, ngram, max_examples, generate: true };
    let ev = evaluate(&ck.model, &data, &opts, Some(&classes))?;
    let mut report = ev.report;
    report.model = name_of(&model_path);
    report.dataset = data_path.display().to_string();
    if ev.fallbacks > 0 {
        eprintln!("note: {} decodes fell back after context blocking left no candidates", ev.fallbacks);
    }
    let csv = if analyze {
        format!("{ANALYZE_HEADER}\n{}\n", report.analyze_row())
    } else {
        format!("{REPORT_HEADER}\n{}\n", report.csv_row())
    };
    print!("{}", if pretty { pretty_table(&csv) } else { csv });
    if !analyze {
        if let Some(s) = &report.selection {
            let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
            eprintln!(
                "selection: {} pairs, mean ppl(y+) {}, mean ppl(y-) {}, ratio {}",
                s.pairs(),
                f(s.mean_ppl_positive()),
                f(s.mean_ppl_negative()),
                f(s.ppl_ratio())
            );
        }
    }
    Ok(0)
}

fn generate(a: GenerateArgs, config: Option<&Path>) -> anyhow::Result<u8> {
    let mut r = Resolver::new("generate", config)?;
    let model_path = r.required_path("model", a.model)?;
    let data_path = r.required_path("data", a.data)?;
    let max_examples = r.optional("max_examples", a.max_examples)?;
    let decode = resolve_decode(&mut r, a.decode)?;
    r.finish()?;
    decode.validate()?;

    let ck = load_model(&model_path)?;
    let mut data = load_data(&data_path, &ck.vocab)?;
    if let Some(k) = max_examples {
        data.truncate(k);
    }
    let (gens, fallbacks) = generate_all(&ck.model, &data, &decode)?;
    let mut out = String::new();
    for g in &gens {
        out.push_str(&ck.vocab.detokenize(g));
        out.push('\n');
    }
    print!("{out}");
    if fallbacks > 0 {
        eprintln!("note: {fallbacks} decodes fell back after context blocking left no candidates");
    }
    Ok(0)
}

fn selftest_cmd(a: SelftestArgs, config: Option<&Path>) -> anyhow::Result<u8> {
    let mut r = Resolver::new("selftest", config)?;
    let d = SelftestOptions::default();
    let opts = SelftestOptions {
        seed: r.seed("seed", a.seed)?,
        grad_configs: r.value("grad_configs", a.grad_configs, d.grad_configs)?,
        oracle_pairs: r.value("oracle_pairs", a.oracle_pairs, d.oracle_pairs)?,
    };
    r.finish()?;
    let results = selftest::run(&opts);
    print!("{}", selftest::format_table(&results));
    if selftest::all_passed(&results) {
        Ok(0)
    } else {
        eprintln!("selftest: {} check(s) failed", results.iter().filter(|c| !c.passed).count());
        Ok(2)
    }
}
