//! Seeded template generators for persona dialogue and NLI-labelled corpora.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use super::corpus::{DialogueExample, Label};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    pub zipf_exponent: f64,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// Target corpus-level context repetition (trigram) of gold responses.
    pub copy_rate: f64,
    /// Fraction of responses that repeat one of their own clauses.
    pub repeat_rate: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { seed: 0, zipf_exponent: 1.1, train: 5000, valid: 500, test: 500, copy_rate: 0.15, repeat_rate: 0.0 }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("copy_rate", self.copy_rate), ("repeat_rate", self.repeat_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.train == 0 || self.valid == 0 || self.test == 0 {
            return Err(Error::Config("split sizes must be >= 1".into()));
        }
        if !(self.zipf_exponent > 0.0) {
            return Err(Error::Config("zipf exponent must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<DialogueExample>,
    pub valid: Vec<DialogueExample>,
    pub test: Vec<DialogueExample>,
}

struct Category {
    facts: &'static [&'static str],
    questions: &'static [&'static str],
    paraphrases: &'static [&'static str],
    values: &'static [&'static str],
}

const CATEGORIES: &[Category] = &[
    Category {
        facts: &["i love {v} .", "i enjoy {v} on weekends .", "i spend my free time {v} ."],
        questions: &["what do you do for fun ?", "do you have any hobbies ?"],
        paraphrases: &["{v} is what i do for fun .", "mostly {v} when i get the chance .", "you will find me {v} most days ."],
        values: &[
            "hiking", "swimming", "painting", "running", "cooking", "reading", "fishing", "gardening", "dancing",
            "singing", "surfing", "knitting", "baking", "cycling", "camping", "skating", "climbing", "drawing",
        ],
    },
    Category {
        facts: &["i have a pet {v} .", "i live with my {v} ."],
        questions: &["do you have any pets ?", "what animals do you like ?"],
        paraphrases: &["my {v} keeps me company .", "there is a {v} at my house .", "a {v} is my best friend ."],
        values: &[
            "dog", "cat", "parrot", "hamster", "rabbit", "turtle", "horse", "goldfish", "lizard", "snake", "ferret",
            "pony", "chicken", "duck", "frog", "mouse",
        ],
    },
    Category {
        facts: &["i work as a {v} .", "i am a {v} by trade ."],
        questions: &["what do you do for a living ?", "where do you work ?"],
        paraphrases: &["being a {v} pays the bills .", "my days are spent as a {v} .", "a {v} is my profession ."],
        values: &[
            "teacher", "nurse", "lawyer", "chef", "pilot", "farmer", "doctor", "plumber", "writer", "baker", "mechanic",
            "dentist", "painter", "cashier", "waiter", "banker", "driver", "librarian",
        ],
    },
    Category {
        facts: &["i eat {v} every day .", "i really like {v} ."],
        questions: &["what do you like to eat ?", "what is your favorite food ?"],
        paraphrases: &["nothing beats {v} for dinner .", "{v} all the way .", "i could eat {v} forever ."],
        values: &[
            "pizza", "sushi", "tacos", "pasta", "burgers", "salad", "curry", "steak", "noodles", "soup", "pancakes",
            "chocolate", "cheese", "rice", "bread", "fries",
        ],
    },
    Category {
        facts: &["i like the color {v} .", "i paint everything {v} ."],
        questions: &["what is your favorite color ?"],
        paraphrases: &["{v} makes me happy .", "everything i own is {v} ."],
        values: &["red", "blue", "green", "yellow", "purple", "orange", "pink", "black", "white", "gray", "brown", "gold"],
    },
    Category {
        facts: &["i listen to {v} music .", "i play {v} in a band ."],
        questions: &["what music do you like ?", "do you like music ?"],
        paraphrases: &["{v} is always on my radio .", "nothing is better than {v} ."],
        values: &["jazz", "rock", "pop", "country", "blues", "metal", "rap", "classical", "folk", "reggae", "punk", "soul"],
    },
    Category {
        facts: &["i play {v} with friends .", "i watch {v} on tv ."],
        questions: &["do you play any sports ?", "what sports do you like ?"],
        paraphrases: &["{v} is my game .", "we play {v} every sunday ."],
        values: &[
            "soccer", "tennis", "golf", "baseball", "hockey", "basketball", "volleyball", "boxing", "rugby", "cricket",
            "bowling", "football",
        ],
    },
    Category {
        facts: &["i live in {v} .", "i grew up in {v} ."],
        questions: &["where are you from ?", "where do you live ?"],
        paraphrases: &["{v} is my home .", "home for me is {v} ."],
        values: &[
            "paris", "london", "tokyo", "chicago", "boston", "denver", "dallas", "seattle", "miami", "berlin", "rome",
            "madrid", "sydney", "toronto",
        ],
    },
    Category {
        facts: &["i drink {v} every morning .", "i can not live without {v} ."],
        questions: &["what do you like to drink ?"],
        paraphrases: &["{v} gets me through the day .", "a cup of {v} sounds great ."],
        values: &["coffee", "tea", "juice", "milk", "soda", "water", "lemonade", "cocoa", "smoothies"],
    },
    Category {
        facts: &["i have {v} siblings ."],
        questions: &["do you have a big family ?"],
        paraphrases: &["there are {v} kids in my family .", "{v} siblings and i love them all ."],
        values: &["two", "three", "four", "five", "six"],
    },
];

/// Response openers with relative weights; none shares a first token with a
/// persona fact. The heaviest opener is slightly less likely than a quote at
/// the default copy rate, so likelihood-greedy decoding prefers quoting.
const OPENERS: &[(&str, f64)] = &[("well ,", 0.36), ("oh ,", 0.34), ("yes ,", 0.30)];

const GREETINGS: &[&str] = &["hi there !", "hello how are you ?", "good morning !", "hey nice to meet you ."];

const TOPICS: &[&str] =
    &["movies", "books", "science", "history", "politics", "travel", "art", "cars", "games", "nature", "space", "fashion"];
const ADJECTIVES: &[&str] =
    &["funny", "shy", "kind", "busy", "lazy", "smart", "quiet", "loud", "calm", "brave", "silly", "honest"];
const RELATIVES: &[&str] = &["mom", "dad", "brother", "sister", "uncle", "aunt", "cousin", "grandma"];
const PLACES: &[&str] =
    &["the beach", "the mountains", "the park", "the zoo", "the museum", "the lake", "the mall", "the library"];
const WEATHER: &[&str] = &["sunny", "rainy", "cold", "hot", "windy", "snowy"];
const ITEMS: &[&str] = &["car", "house", "boat", "bike", "computer", "guitar", "camera", "phone"];

/// Follow-up clauses joined by "and"; `{t}` topic, `{a}` adjective, `{r}` relative, `{p}` place, `{w}` weather, `{i}` item.
const CLAUSES: &[&str] = &[
    "do you like {t}",
    "what about you",
    "my friends say i am {a}",
    "we should talk about {t}",
    "i think {t} is great",
    "it makes me feel {a}",
    "my {r} lives nearby",
    "last week i went to {p}",
    "i want to visit {p} someday",
    "the weather here is {w}",
    "i am saving up for a {i}",
    "my {r} is very {a}",
    "tell me about yourself",
    "have you ever been to {p}",
];

/// Probability of appending another clause.
const CONTINUE_P: f64 = 0.55;
const MAX_CLAUSES: usize = 4;
const PERSONA_SIZE: usize = 4;
/// Initial guess of the copied share of a quoting response's trigrams.
const COPY_SHARE_PRIOR: f64 = 0.6;

struct ZipfPick {
    zipf: Zipf<f64>,
}

impl ZipfPick {
    fn new(n: usize, s: f64) -> Self {
        Self { zipf: Zipf::new(n as u64, s).expect("valid zipf") }
    }

    fn pick<'a>(&self, rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
        let k = self.zipf.sample(rng) as usize;
        items[(k - 1).min(items.len() - 1)]
    }
}

struct Samplers {
    s: f64,
}

impl Samplers {
    fn pick<'a>(&self, rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
        ZipfPick::new(items.len(), self.s).pick(rng, items)
    }
}

fn fill(template: &str, slot: &str, value: &str) -> String {
    template.replace(slot, value)
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn trigrams<'a>(w: &[&'a str]) -> Vec<[&'a str; 3]> {
    w.windows(3).map(|x| [x[0], x[1], x[2]]).collect()
}

fn has_repeated_trigram(w: &[&str]) -> bool {
    let mut seen = HashSet::new();
    trigrams(w).into_iter().any(|t| !seen.insert(t))
}

fn stream(seed: u64, split: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(split);
    r
}

fn record_key(ex: &DialogueExample) -> String {
    serde_json::to_string(ex).expect("serializable")
}

struct DialogueGen<'c> {
    cfg: &'c GenConfig,
    z: Samplers,
    /// Running sum and count of copied shares, for calibrating the quote probability.
    share_sum: f64,
    share_n: usize,
}

impl DialogueGen<'_> {
    fn clause(&self, rng: &mut ChaCha8Rng, template: &str) -> String {
        let mut s = template.to_string();
        for (slot, bank) in
            [("{t}", TOPICS), ("{a}", ADJECTIVES), ("{r}", RELATIVES), ("{p}", PLACES), ("{w}", WEATHER), ("{i}", ITEMS)]
        {
            if s.contains(slot) {
                s = s.replace(slot, self.z.pick(rng, bank));
            }
        }
        s
    }

    fn tail(&self, rng: &mut ChaCha8Rng) -> Vec<String> {
        let mut order: Vec<usize> = (0..CLAUSES.len()).collect();
        order.shuffle(rng);
        let mut out = Vec::new();
        for &c in order.iter().take(MAX_CLAUSES) {
            if !rng.gen_bool(CONTINUE_P) {
                break;
            }
            out.push(self.clause(rng, CLAUSES[c]));
        }
        out
    }

    fn quote_probability(&self) -> f64 {
        let share = if self.share_n == 0 { COPY_SHARE_PRIOR } else { self.share_sum / self.share_n as f64 };
        (self.cfg.copy_rate / share.max(1e-3)).min(1.0)
    }

    fn example(&mut self, rng: &mut ChaCha8Rng) -> DialogueExample {
        let mut cats: Vec<usize> = (0..CATEGORIES.len()).collect();
        cats.shuffle(rng);
        cats.truncate(PERSONA_SIZE);
        let values: Vec<&str> = cats.iter().map(|&c| self.z.pick(rng, CATEGORIES[c].values)).collect();
        let persona: Vec<String> = cats
            .iter()
            .zip(&values)
            .map(|(&c, v)| fill(CATEGORIES[c].facts.choose(rng).expect("facts"), "{v}", v))
            .collect();
        let asked = rng.gen_range(0..PERSONA_SIZE);
        let cat = &CATEGORIES[cats[asked]];
        let mut history = Vec::new();
        if rng.gen_bool(0.5) {
            history.push(GREETINGS.choose(rng).expect("greetings").to_string());
        }
        history.push(cat.questions.choose(rng).expect("questions").to_string());
        let context_words: Vec<String> =
            persona.iter().chain(&history).flat_map(|s| words(s)).map(str::to_string).collect();
        let ctx_refs: Vec<&str> = context_words.iter().map(String::as_str).collect();
        let ctx_tri: HashSet<[&str; 3]> = trigrams(&ctx_refs).into_iter().collect();

        let quote = rng.gen_bool(self.quote_probability());
        loop {
            let head = if quote {
                let m = if rng.gen_bool(0.5) { 2 } else { 3 };
                let start = asked.min(PERSONA_SIZE - m);
                persona[start..start + m].join(" ")
            } else {
                let opener = OPENERS.choose_weighted(rng, |o| o.1).expect("openers").0;
                let body = fill(cat.paraphrases.choose(rng).expect("paraphrases"), "{v}", values[asked]);
                format!("{opener} {body}")
            };
            let mut tail = self.tail(rng);
            let repeat = !tail.is_empty() && rng.gen_bool(self.cfg.repeat_rate);
            if repeat {
                let c = tail.choose(rng).expect("non-empty").clone();
                tail.push(c);
            }
            let head = head.trim_end_matches(" .").to_string();
            let mut target = head.clone();
            for c in &tail {
                target.push_str(" and ");
                target.push_str(c);
            }
            target.push_str(" .");
            let tw = words(&target);
            let head_len = words(&head).len();
            let tri = trigrams(&tw);
            // Copied trigrams must lie entirely inside the quoted head.
            let stray_copy = tri.iter().enumerate().any(|(i, t)| ctx_tri.contains(t) && (!quote || i + 3 > head_len));
            if stray_copy || (!repeat && has_repeated_trigram(&tw)) {
                continue;
            }
            if quote && !tri.is_empty() {
                let copied = tri.iter().filter(|t| ctx_tri.contains(*t)).count();
                self.share_sum += copied as f64 / tri.len() as f64;
                self.share_n += 1;
            }
            return DialogueExample::new(persona, history, target);
        }
    }
}

/// Persona dialogue: a fact-grounded question and a response that either
/// quotes the persona or paraphrases it, followed by chit-chat clauses.
pub fn gen_dialogue_corpus(cfg: &GenConfig) -> Result<Splits> {
    cfg.validate()?;
    let mut gen = DialogueGen { cfg, z: Samplers { s: cfg.zipf_exponent }, share_sum: 0.0, share_n: 0 };
    let mut seen = HashSet::new();
    let mut splits = Splits::default();
    for (k, (n, out)) in
        [(cfg.train, &mut splits.train), (cfg.valid, &mut splits.valid), (cfg.test, &mut splits.test)].into_iter().enumerate()
    {
        let mut rng = stream(cfg.seed, k as u64);
        while out.len() < n {
            let ex = gen.example(&mut rng);
            if seen.insert(record_key(&ex)) {
                out.push(ex);
            }
        }
    }
    Ok(splits)
}

/// Statement families of one relation. Negated forms are empty for relations without polarity.
struct Relation {
    values: &'static [&'static str],
    premise: &'static [&'static str],
    premise_neg: &'static [&'static str],
    entail: &'static [&'static str],
    entail_neg: &'static [&'static str],
    triple: &'static [&'static str],
    triple_neg: &'static [&'static str],
}

const RELATIONS: &[Relation] = &[
    Relation {
        values: CATEGORIES[0].values,
        premise: &["i love {v} .", "i enjoy {v} ."],
        premise_neg: &["i do not like {v} .", "i hate {v} ."],
        entail: &["{v} is my favorite hobby .", "i really like {v} ."],
        entail_neg: &["{v} is not for me .", "i never go {v} ."],
        triple: &["on weekends you will find me {v} .", "my friends and i go {v} a lot ."],
        triple_neg: &["i stay away from {v} .", "you will never catch me {v} ."],
    },
    Relation {
        values: CATEGORIES[1].values,
        premise: &["i have a {v} .", "i own a {v} ."],
        premise_neg: &["i do not have a {v} .", "i do not own a {v} ."],
        entail: &["my {v} is my best friend .", "i love my {v} ."],
        entail_neg: &["there is no {v} in my house .", "i never had a {v} ."],
        triple: &["i take my {v} to the park .", "my {v} sleeps on my bed ."],
        triple_neg: &["a {v} would not fit in my house .", "my landlord says no {v} ."],
    },
    Relation {
        values: CATEGORIES[2].values,
        premise: &["i work as a {v} .", "i am a {v} ."],
        premise_neg: &[],
        entail: &["my job is being a {v} .", "i have been a {v} for years ."],
        entail_neg: &[],
        triple: &["people pay me to be a {v} .", "i go to work early as a {v} ."],
        triple_neg: &[],
    },
    Relation {
        values: CATEGORIES[3].values,
        premise: &["i love {v} .", "i eat {v} every day ."],
        premise_neg: &["i do not eat {v} .", "i hate {v} ."],
        entail: &["my favorite food is {v} .", "i really like {v} ."],
        entail_neg: &["{v} makes me sick .", "i never eat {v} ."],
        triple: &["i cook {v} for my family .", "there is {v} on my plate every night ."],
        triple_neg: &["i always skip the {v} .", "please keep the {v} away from me ."],
    },
    Relation {
        values: CATEGORIES[5].values,
        premise: &["i listen to {v} .", "i love {v} music ."],
        premise_neg: &["i do not like {v} .", "i hate {v} music ."],
        entail: &["{v} is my favorite music .", "i really like {v} ."],
        entail_neg: &["{v} hurts my ears .", "i never listen to {v} ."],
        triple: &["i go to {v} concerts .", "my radio always plays {v} ."],
        triple_neg: &["i turn off the radio when {v} plays .", "my ears hate {v} ."],
    },
    Relation {
        values: CATEGORIES[6].values,
        premise: &["i play {v} .", "i love {v} ."],
        premise_neg: &["i do not play {v} .", "i hate {v} ."],
        entail: &["{v} is my favorite sport .", "i really like {v} ."],
        entail_neg: &["i never play {v} .", "{v} is not for me ."],
        triple: &["i watch {v} every weekend .", "my team plays {v} ."],
        triple_neg: &["{v} bores me to sleep .", "i change the channel when {v} is on ."],
    },
    Relation {
        values: CATEGORIES[7].values,
        premise: &["i live in {v} .", "i am from {v} ."],
        premise_neg: &[],
        entail: &["my home is in {v} .", "{v} is where i live ."],
        entail_neg: &[],
        triple: &["my house is near the center of {v} .", "i take the bus around {v} ."],
        triple_neg: &[],
    },
    Relation {
        values: CATEGORIES[8].values,
        premise: &["i drink {v} .", "i love {v} ."],
        premise_neg: &["i do not drink {v} .", "i hate {v} ."],
        entail: &["{v} is my favorite drink .", "i really like {v} ."],
        entail_neg: &["i never drink {v} .", "{v} is not for me ."],
        triple: &["i start every morning with {v} .", "i always order {v} ."],
        triple_neg: &["i pour {v} down the sink .", "no {v} for me thanks ."],
    },
    Relation {
        values: CATEGORIES[4].values,
        premise: &["my favorite color is {v} .", "i love {v} ."],
        premise_neg: &["i do not like {v} .", "i hate {v} ."],
        entail: &["i really like {v} .", "{v} is the best color ."],
        entail_neg: &["{v} is an ugly color .", "i never wear {v} ."],
        triple: &["my car is painted {v} .", "i wear {v} shirts ."],
        triple_neg: &["i never buy {v} clothes .", "my walls are anything but {v} ."],
    },
    Relation {
        values: CATEGORIES[9].values,
        premise: &["i have {v} siblings ."],
        premise_neg: &[],
        entail: &["there are {v} kids in my family ."],
        entail_neg: &[],
        triple: &["my parents raised {v} children ."],
        triple_neg: &[],
    },
];

/// Fraction of premises stated negatively, where the relation allows it.
const NEGATED_P: f64 = 0.3;
/// Fraction of contradictions of positive premises formed by negation rather than a conflicting value.
const FLIP_P: f64 = 0.5;

const NLI_HISTORY: &[&str] = &["tell me about yourself .", "what are you like ?", "what should i know about you ?"];

/// Which conditioning the NLI examples use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NliVariant {
    /// The premise is the only utterance.
    TwoUtterance,
    /// The premise sits among persona facts, followed by dialogue turns.
    FullDialogue,
}

impl NliVariant {
    pub const ALL: [NliVariant; 2] = [NliVariant::TwoUtterance, NliVariant::FullDialogue];

    pub fn name(self) -> &'static str {
        match self {
            NliVariant::TwoUtterance => "two-utterance",
            NliVariant::FullDialogue => "full-dialogue",
        }
    }
}

/// One premise triple and its statement.
struct Premise {
    rel: usize,
    value: &'static str,
    negated: bool,
    text: String,
}

struct NliGen {
    z: Samplers,
}

impl NliGen {
    fn value(&self, rng: &mut ChaCha8Rng, rel: usize) -> &'static str {
        self.z.pick(rng, RELATIONS[rel].values)
    }

    fn other_value(&self, rng: &mut ChaCha8Rng, rel: usize, not: &str) -> &'static str {
        loop {
            let v = self.value(rng, rel);
            if v != not {
                return v;
            }
        }
    }

    fn premise(&self, rng: &mut ChaCha8Rng, rel: usize) -> Premise {
        let r = &RELATIONS[rel];
        let value = self.value(rng, rel);
        let negated = !r.premise_neg.is_empty() && rng.gen_bool(NEGATED_P);
        let family = if negated { r.premise_neg } else { r.premise };
        Premise { rel, value, negated, text: fill(family.choose(rng).expect("templates"), "{v}", value) }
    }

    /// A coherent response of the given label; neutral ones avoid every relation in `stated`.
    fn positive(&self, rng: &mut ChaCha8Rng, p: &Premise, label: Label, stated: &[usize]) -> String {
        let r = &RELATIONS[p.rel];
        let family = match (label, p.negated) {
            (Label::Entail, false) => r.entail,
            (Label::Entail, true) => r.entail_neg,
            (Label::TripleEntail, false) => r.triple,
            (Label::TripleEntail, true) => r.triple_neg,
            _ => {
                let other = loop {
                    let o = rng.gen_range(0..RELATIONS.len());
                    if !stated.contains(&o) {
                        break o;
                    }
                };
                let o = &RELATIONS[other];
                let family = [o.premise, o.entail, o.triple].choose(rng).copied().expect("families");
                let v = self.value(rng, other);
                return fill(family.choose(rng).expect("templates"), "{v}", v);
            }
        };
        fill(family.choose(rng).expect("templates"), "{v}", p.value)
    }

    /// A response asserting the opposite of the premise.
    fn contradiction(&self, rng: &mut ChaCha8Rng, p: &Premise) -> String {
        let r = &RELATIONS[p.rel];
        let pick = |rng: &mut ChaCha8Rng, f: &[&str], v: &str| fill(f.choose(rng).expect("templates"), "{v}", v);
        if p.negated {
            let family = if rng.gen_bool(0.5) { r.premise } else { r.entail };
            return pick(rng, family, p.value);
        }
        if !r.premise_neg.is_empty() && rng.gen_bool(FLIP_P) {
            let family = if rng.gen_bool(0.5) { r.premise_neg } else { r.entail_neg };
            return pick(rng, family, p.value);
        }
        let v = self.other_value(rng, p.rel, p.value);
        let family = if rng.gen_bool(0.5) { r.premise } else { r.entail };
        pick(rng, family, v)
    }

    /// Context and history around a premise, plus the relations they state.
    fn frame(&self, rng: &mut ChaCha8Rng, p: &Premise, variant: NliVariant) -> (Vec<String>, Vec<String>, Vec<usize>) {
        match variant {
            NliVariant::TwoUtterance => (Vec::new(), vec![p.text.clone()], vec![p.rel]),
            NliVariant::FullDialogue => {
                let mut rels: Vec<usize> = (0..RELATIONS.len()).filter(|&r| r != p.rel).collect();
                rels.shuffle(rng);
                let mut persona: Vec<String> = rels[..PERSONA_SIZE - 1]
                    .iter()
                    .map(|&r| {
                        let v = self.value(rng, r);
                        fill(RELATIONS[r].premise.choose(rng).expect("templates"), "{v}", v)
                    })
                    .collect();
                persona.insert(rng.gen_range(0..PERSONA_SIZE), p.text.clone());
                let mut history = Vec::new();
                if rng.gen_bool(0.5) {
                    history.push(GREETINGS.choose(rng).expect("greetings").to_string());
                }
                history.push(NLI_HISTORY.choose(rng).expect("history").to_string());
                let mut stated = rels[..PERSONA_SIZE - 1].to_vec();
                stated.push(p.rel);
                (persona, history, stated)
            }
        }
    }

    fn example(&self, rng: &mut ChaCha8Rng, variant: NliVariant, label: Label, paired: bool) -> DialogueExample {
        let rel = rng.gen_range(0..RELATIONS.len());
        let p = self.premise(rng, rel);
        let (context, history, stated) = self.frame(rng, &p, variant);
        let target =
            if label == Label::Contradict { self.contradiction(rng, &p) } else { self.positive(rng, &p, label, &stated) };
        let ex = DialogueExample::new(context, history, target).with_label(label);
        if paired {
            let neg = self.contradiction(rng, &p);
            ex.with_negative(neg)
        } else {
            ex
        }
    }
}

/// Labelled corpora for one conditioning variant.
///
/// `train` holds `cfg.train` coherent records (E, TE, N in rotation) and as
/// many contradicting (C) records; `valid` and `test` hold coherent records
/// paired with a contradicting alternative for the same context.
pub fn gen_nli_corpus(cfg: &GenConfig, variant: NliVariant) -> Result<Splits> {
    cfg.validate()?;
    let gen = NliGen { z: Samplers { s: cfg.zipf_exponent } };
    let positive = [Label::Entail, Label::TripleEntail, Label::Neutral];
    let mut seen = HashSet::new();
    let mut splits = Splits::default();
    let base = match variant {
        NliVariant::TwoUtterance => 10,
        NliVariant::FullDialogue => 20,
    };
    let mut rng = stream(cfg.seed, base);
    let mut i = 0;
    while splits.train.len() < 2 * cfg.train {
        let label = if i % 2 == 0 { positive[(i / 2) % 3] } else { Label::Contradict };
        let ex = gen.example(&mut rng, variant, label, false);
        if seen.insert(record_key(&ex)) {
            splits.train.push(ex);
            i += 1;
        }
    }
    for (k, (n, out)) in [(cfg.valid, &mut splits.valid), (cfg.test, &mut splits.test)].into_iter().enumerate() {
        let mut rng = stream(cfg.seed, base + 1 + k as u64);
        while out.len() < n {
            let ex = gen.example(&mut rng, variant, positive[out.len() % 3], true);
            if seen.insert(record_key(&ex)) {
                out.push(ex);
            }
        }
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig { train: 60, valid: 12, test: 12, ..Default::default() }
    }

    #[test]
    fn dialogue_is_deterministic() {
        let a = gen_dialogue_corpus(&small()).unwrap();
        let b = gen_dialogue_corpus(&small()).unwrap();
        assert_eq!(a, b);
        let c = gen_dialogue_corpus(&GenConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn nli_counts() {
        let s = gen_nli_corpus(&small(), NliVariant::TwoUtterance).unwrap();
        assert_eq!(s.train.len(), 120);
        let c = s.train.iter().filter(|e| e.label == Some(Label::Contradict)).count();
        assert_eq!(c, 60);
        for l in [Label::Entail, Label::TripleEntail, Label::Neutral] {
            assert_eq!(s.train.iter().filter(|e| e.label == Some(l)).count(), 20);
            assert_eq!(s.valid.iter().filter(|e| e.label == Some(l)).count(), 4);
        }
        assert!(s.valid.iter().all(|e| e.negative.is_some()));
    }

    #[test]
    fn negated_premise_is_contradicted_by_affirmation() {
        let gen = NliGen { z: Samplers { s: 1.1 } };
        let mut rng = stream(0, 0);
        let p = Premise { rel: 0, value: "running", negated: true, text: "i do not like running .".into() };
        let mut seen = HashSet::new();
        for _ in 0..50 {
            seen.insert(gen.contradiction(&mut rng, &p));
        }
        assert!(seen.contains("i love running ."));
        assert!(seen.iter().all(|s| s.contains("running") && !s.contains("not") && !s.contains("never")));
    }

    #[test]
    fn bad_config_rejected() {
        assert!(GenConfig { copy_rate: 1.5, ..Default::default() }.validate().is_err());
        assert!(GenConfig { train: 0, ..Default::default() }.validate().is_err());
    }
}
