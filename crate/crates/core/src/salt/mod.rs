//! SALT: syntax-aware artificial-language translation tasks.
//!
//! Each task pairs English sentences with an artificial language produced by
//! a fresh out-of-vocabulary word mapping followed by one syntax rule.
//! Four demonstrations jointly cover every word and the rule needed to
//! translate the test sentence.

pub mod catalog;
pub mod lexicon;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset;
use crate::model::{
    DatasetKind, Demo, Difficulty, IclInstance, TaskBody, TaskFormat, TaskInstance,
};
use crate::seeding;

pub use catalog::{Catalog, SentenceTemplate};
pub use lexicon::Lexicon;

pub const DEMOS_PER_TASK: usize = 4;
const TOKEN_LEN: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SaltError {
    #[error("artificial token space exhausted: {needed} tokens needed, {available} available")]
    TokenSpaceExhausted { needed: usize, available: usize },
    #[error("word `{0}` has no vocabulary entry")]
    UnmappedWord(String),
    #[error("word `{0}` has no part of speech")]
    UnknownPos(String),
    #[error("template pool cannot cover {rule} at {complexity} complexity")]
    PoolCannotSatisfy {
        rule: SyntaxRule,
        complexity: Complexity,
    },
    #[error("catalog: {0}")]
    Catalog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pos {
    Pron,
    Noun,
    Verb,
    Adj,
    Adv,
    Conj,
}

impl Pos {
    /// Parses `pos` or `pos.class` word-bank tags.
    pub fn from_tag(tag: &str) -> Option<Pos> {
        match tag.split('.').next()? {
            "pron" => Some(Pos::Pron),
            "noun" => Some(Pos::Noun),
            "verb" => Some(Pos::Verb),
            "adj" => Some(Pos::Adj),
            "adv" => Some(Pos::Adv),
            "conj" => Some(Pos::Conj),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntaxRule {
    WordToWord,
    NounRepetition,
    VerbRepetition,
    AdjectiveRepetition,
    NounAdjectiveInversion,
    PredicateSubjectInversion,
    VerbAdverbInversion,
}

impl SyntaxRule {
    pub const ALL: [SyntaxRule; 7] = [
        SyntaxRule::WordToWord,
        SyntaxRule::NounRepetition,
        SyntaxRule::VerbRepetition,
        SyntaxRule::AdjectiveRepetition,
        SyntaxRule::NounAdjectiveInversion,
        SyntaxRule::PredicateSubjectInversion,
        SyntaxRule::VerbAdverbInversion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SyntaxRule::WordToWord => "word_to_word",
            SyntaxRule::NounRepetition => "noun_repetition",
            SyntaxRule::VerbRepetition => "verb_repetition",
            SyntaxRule::AdjectiveRepetition => "adjective_repetition",
            SyntaxRule::NounAdjectiveInversion => "noun_adjective_inversion",
            SyntaxRule::PredicateSubjectInversion => "predicate_subject_inversion",
            SyntaxRule::VerbAdverbInversion => "verb_adverb_inversion",
        }
    }
}

impl fmt::Display for SyntaxRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Complexity {
    Simple,
    Intermediate,
    Complex,
}

impl Complexity {
    pub fn difficulty(self) -> Difficulty {
        match self {
            Complexity::Simple => Difficulty::Easy,
            Complexity::Intermediate => Difficulty::Medium,
            Complexity::Complex => Difficulty::Hard,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Complexity::Simple => "simple",
            Complexity::Intermediate => "intermediate",
            Complexity::Complex => "complex",
        }
    }
}

impl fmt::Display for Complexity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The twelve (rule, complexity) translation modes.
pub const MODES: [(SyntaxRule, Complexity); 12] = [
    (SyntaxRule::WordToWord, Complexity::Simple),
    (SyntaxRule::NounRepetition, Complexity::Simple),
    (SyntaxRule::NounAdjectiveInversion, Complexity::Simple),
    (SyntaxRule::PredicateSubjectInversion, Complexity::Simple),
    (SyntaxRule::WordToWord, Complexity::Intermediate),
    (SyntaxRule::VerbRepetition, Complexity::Intermediate),
    (SyntaxRule::NounAdjectiveInversion, Complexity::Intermediate),
    (
        SyntaxRule::PredicateSubjectInversion,
        Complexity::Intermediate,
    ),
    (SyntaxRule::WordToWord, Complexity::Complex),
    (SyntaxRule::AdjectiveRepetition, Complexity::Complex),
    (SyntaxRule::VerbAdverbInversion, Complexity::Complex),
    (SyntaxRule::PredicateSubjectInversion, Complexity::Complex),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstituentLabel {
    Subject,
    Predicate,
    Connective,
}

/// Half-open token span `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constituent {
    pub label: ConstituentLabel,
    pub start: usize,
    pub end: usize,
}

/// Brackets a tag sequence into clauses split at conjunctions; within a
/// clause the subject runs up to the first verb or adverb.
pub fn derive_constituents(tags: &[Pos]) -> Vec<Constituent> {
    let mut out = Vec::new();
    let mut start = 0;
    let push_clause = |from: usize, to: usize, out: &mut Vec<Constituent>| {
        if from == to {
            return;
        }
        let split = (from..to)
            .find(|&i| matches!(tags[i], Pos::Verb | Pos::Adv))
            .unwrap_or(to);
        if split > from {
            out.push(Constituent {
                label: ConstituentLabel::Subject,
                start: from,
                end: split,
            });
        }
        if to > split {
            out.push(Constituent {
                label: ConstituentLabel::Predicate,
                start: split,
                end: to,
            });
        }
    };
    for (i, t) in tags.iter().enumerate() {
        if *t == Pos::Conj {
            push_clause(start, i, &mut out);
            out.push(Constituent {
                label: ConstituentLabel::Connective,
                start: i,
                end: i + 1,
            });
            start = i + 1;
        }
    }
    push_clause(start, tags.len(), &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleOutcome {
    pub tokens: Vec<String>,
    pub tags: Vec<Pos>,
    pub constituents: Vec<Constituent>,
    /// False when the rule found nothing to act on (the sequence is
    /// returned unchanged).
    pub applied: bool,
}

fn repeat_tag(
    tokens: &[String],
    tags: &[Pos],
    constituents: &[Constituent],
    target: Pos,
) -> RuleOutcome {
    let mut out_tokens = Vec::new();
    let mut out_tags = Vec::new();
    let mut new_index = Vec::with_capacity(tokens.len() + 1);
    for (tok, &tag) in tokens.iter().zip(tags) {
        new_index.push(out_tokens.len());
        out_tokens.push(tok.clone());
        out_tags.push(tag);
        if tag == target {
            out_tokens.push(tok.clone());
            out_tags.push(tag);
        }
    }
    new_index.push(out_tokens.len());
    let constituents = constituents
        .iter()
        .map(|c| Constituent {
            start: new_index[c.start],
            end: new_index[c.end],
            ..*c
        })
        .collect();
    RuleOutcome {
        applied: tags.contains(&target),
        tokens: out_tokens,
        tags: out_tags,
        constituents,
    }
}

fn swap_adjacent(
    tokens: &[String],
    tags: &[Pos],
    constituents: &[Constituent],
    first: Pos,
    second: Pos,
) -> RuleOutcome {
    let mut tokens = tokens.to_vec();
    let mut tags = tags.to_vec();
    let mut applied = false;
    let mut i = 0;
    while i + 1 < tokens.len() {
        if tags[i] == first && tags[i + 1] == second {
            tokens.swap(i, i + 1);
            tags.swap(i, i + 1);
            applied = true;
            i += 2;
        } else {
            i += 1;
        }
    }
    RuleOutcome {
        tokens,
        tags,
        constituents: constituents.to_vec(),
        applied,
    }
}

fn invert_clauses(tokens: &[String], tags: &[Pos], constituents: &[Constituent]) -> RuleOutcome {
    let mut order: Vec<Constituent> = Vec::with_capacity(constituents.len());
    let mut applied = false;
    let mut i = 0;
    while i < constituents.len() {
        let c = constituents[i];
        match constituents.get(i + 1) {
            Some(n)
                if c.label == ConstituentLabel::Subject
                    && n.label == ConstituentLabel::Predicate =>
            {
                order.push(*n);
                order.push(c);
                applied = true;
                i += 2;
            }
            _ => {
                order.push(c);
                i += 1;
            }
        }
    }
    let mut out_tokens = Vec::new();
    let mut out_tags = Vec::new();
    let mut out_cons = Vec::new();
    for c in order {
        let start = out_tokens.len();
        out_tokens.extend_from_slice(&tokens[c.start..c.end]);
        out_tags.extend_from_slice(&tags[c.start..c.end]);
        out_cons.push(Constituent {
            label: c.label,
            start,
            end: out_tokens.len(),
        });
    }
    RuleOutcome {
        tokens: out_tokens,
        tags: out_tags,
        constituents: out_cons,
        applied,
    }
}

/// Applies one syntax rule to a tagged, bracketed token sequence.
pub fn apply_rule(
    tokens: &[String],
    tags: &[Pos],
    constituents: &[Constituent],
    rule: SyntaxRule,
) -> RuleOutcome {
    assert_eq!(tokens.len(), tags.len(), "tags must align with tokens");
    match rule {
        SyntaxRule::WordToWord => RuleOutcome {
            tokens: tokens.to_vec(),
            tags: tags.to_vec(),
            constituents: constituents.to_vec(),
            applied: true,
        },
        SyntaxRule::NounRepetition => repeat_tag(tokens, tags, constituents, Pos::Noun),
        SyntaxRule::VerbRepetition => repeat_tag(tokens, tags, constituents, Pos::Verb),
        SyntaxRule::AdjectiveRepetition => repeat_tag(tokens, tags, constituents, Pos::Adj),
        SyntaxRule::NounAdjectiveInversion => {
            swap_adjacent(tokens, tags, constituents, Pos::Adj, Pos::Noun)
        }
        SyntaxRule::VerbAdverbInversion => {
            swap_adjacent(tokens, tags, constituents, Pos::Verb, Pos::Adv)
        }
        SyntaxRule::PredicateSubjectInversion => invert_clauses(tokens, tags, constituents),
    }
}

/// Injective English → artificial word mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VocabMap(BTreeMap<String, String>);

impl VocabMap {
    pub fn from_pairs<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        VocabMap(
            pairs
                .into_iter()
                .map(|(a, b)| (a.into(), b.into()))
                .collect(),
        )
    }

    /// Looks up a word as written, then lower-cased (sentence-initial
    /// capitals).
    pub fn get(&self, word: &str) -> Option<&str> {
        self.0
            .get(word)
            .or_else(|| self.0.get(&word.to_lowercase()))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    pub fn is_injective(&self) -> bool {
        let values: BTreeSet<&String> = self.0.values().collect();
        values.len() == self.0.len()
    }
}

fn all_tokens() -> impl Iterator<Item = String> {
    let letters = b'a'..=b'z';
    letters.clone().flat_map(move |a| {
        let letters = letters.clone();
        (b'a'..=b'z').flat_map(move |b| {
            letters
                .clone()
                .map(move |c| String::from_utf8(vec![a, b, c]).expect("ascii"))
        })
    })
}

/// Assigns each English word a distinct 3-letter token absent from the
/// lexicon.
pub fn synth_vocab<S: AsRef<str>>(
    english_words: &[S],
    lexicon: &Lexicon,
    seed: u64,
) -> Result<VocabMap, SaltError> {
    let words: BTreeSet<&str> = english_words.iter().map(|w| w.as_ref()).collect();
    if words.is_empty() {
        return Ok(VocabMap::default());
    }
    let available: Vec<String> = all_tokens().filter(|t| !lexicon.contains(t)).collect();
    if words.len() > available.len() {
        return Err(SaltError::TokenSpaceExhausted {
            needed: words.len(),
            available: available.len(),
        });
    }
    debug_assert!(available.iter().all(|t| t.len() == TOKEN_LEN));
    let mut rng = seeding::rng_for(seed, &["salt-vocab"]);
    let picked = available.choose_multiple(&mut rng, words.len());
    Ok(VocabMap(
        words
            .into_iter()
            .map(String::from)
            .zip(picked.cloned())
            .collect(),
    ))
}

/// Splits a sentence into words and its terminal punctuation.
pub fn tokenize(sentence: &str) -> (Vec<String>, Option<char>) {
    let trimmed = sentence.trim();
    let (body, punct) = match trimmed.chars().last() {
        Some(c) if matches!(c, '.' | '!' | '?') => (&trimmed[..trimmed.len() - 1], Some(c)),
        _ => (trimmed, None),
    };
    (body.split_whitespace().map(String::from).collect(), punct)
}

fn tags_for(words: &[String], pos: &BTreeMap<String, Pos>) -> Result<Vec<Pos>, SaltError> {
    words
        .iter()
        .map(|w| {
            pos.get(w)
                .or_else(|| pos.get(&w.to_lowercase()))
                .copied()
                .ok_or_else(|| SaltError::UnknownPos(w.clone()))
        })
        .collect()
}

/// Maps words through the vocabulary, then applies `rules` in order.
pub fn translate(
    english_sentence: &str,
    vocab: &VocabMap,
    rules: &[SyntaxRule],
    pos: &BTreeMap<String, Pos>,
) -> Result<String, SaltError> {
    let (words, punct) = tokenize(english_sentence);
    let tags = tags_for(&words, pos)?;
    let mut tokens: Vec<String> = words
        .iter()
        .map(|w| {
            vocab
                .get(w)
                .map(String::from)
                .ok_or_else(|| SaltError::UnmappedWord(w.clone()))
        })
        .collect::<Result<_, _>>()?;
    let mut tags = tags;
    let mut constituents = derive_constituents(&tags);
    for &rule in rules {
        let out = apply_rule(&tokens, &tags, &constituents, rule);
        tokens = out.tokens;
        tags = out.tags;
        constituents = out.constituents;
    }
    let mut s = tokens.join(" ");
    if let Some(p) = punct {
        s.push(p);
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaltPair {
    pub english: String,
    pub artificial: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaltTask {
    pub demos: Vec<SaltPair>,
    pub test_english: String,
    pub gold_translation: String,
    pub rules: Vec<SyntaxRule>,
    pub vocab: VocabMap,
    /// Part of speech of every word used by the task.
    pub pos: BTreeMap<String, Pos>,
    pub complexity: Complexity,
    pub difficulty: Difficulty,
}

fn exercises(words: &[String], pos: &BTreeMap<String, Pos>, rule: SyntaxRule) -> bool {
    let Ok(tags) = tags_for(words, pos) else {
        return false;
    };
    apply_rule(words, &tags, &derive_constituents(&tags), rule).applied
}

fn normalize_word(w: &str) -> String {
    w.to_lowercase()
}

/// Whether the demos jointly contain every word and every exercised rule
/// the test sentence needs.
pub fn check_coverage(task: &SaltTask) -> bool {
    let (test_words, _) = tokenize(&task.test_english);
    let demo_words: Vec<Vec<String>> = task.demos.iter().map(|d| tokenize(&d.english).0).collect();
    let seen: BTreeSet<String> = demo_words
        .iter()
        .flatten()
        .map(|w| normalize_word(w))
        .collect();
    if !test_words.iter().all(|w| seen.contains(&normalize_word(w))) {
        return false;
    }
    task.rules.iter().all(|&rule| {
        !exercises(&test_words, &task.pos, rule)
            || demo_words.iter().any(|d| exercises(d, &task.pos, rule))
    })
}

fn template_exercises(t: &SentenceTemplate, rule: SyntaxRule) -> bool {
    let tags = t.pos_sequence();
    let placeholder: Vec<String> = (0..tags.len()).map(|i| i.to_string()).collect();
    apply_rule(&placeholder, &tags, &t.constituent_spans(), rule).applied
}

fn render_sentence(words: &[String]) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.get(..1) {
        let upper = first.to_uppercase();
        s.replace_range(..1, &upper);
    }
    s.push('.');
    s
}

/// Fills a template, preferring still-uncovered words whose category
/// matches a slot.
fn fill_template<R: Rng>(
    t: &SentenceTemplate,
    catalog: &Catalog,
    wanted: &mut Vec<(String, String)>,
    rng: &mut R,
) -> Vec<String> {
    let mut words: Vec<String> = Vec::with_capacity(t.slots.len());
    for slot in &t.slots {
        if let Some(i) = wanted
            .iter()
            .position(|(w, tag)| tag == slot && !words.contains(w))
        {
            words.push(wanted.remove(i).0);
            continue;
        }
        let bank = &catalog.word_bank[slot];
        let pick = bank
            .iter()
            .filter(|w| !words.contains(w))
            .choose(rng)
            .unwrap_or(&bank[0]);
        words.push(pick.clone());
    }
    words
}

const BUILD_ATTEMPTS: usize = 200;

/// Assembles one task for a (rule, complexity) mode.
pub fn build_task(
    catalog: &Catalog,
    lexicon: &Lexicon,
    rule: SyntaxRule,
    complexity: Complexity,
    seed: u64,
) -> Result<SaltTask, SaltError> {
    let pool = catalog.templates_at(complexity);
    let exercising: Vec<&SentenceTemplate> = pool
        .iter()
        .copied()
        .filter(|t| template_exercises(t, rule))
        .collect();
    if exercising.is_empty() {
        return Err(SaltError::PoolCannotSatisfy { rule, complexity });
    }
    let mut rng = seeding::rng_for(seed, &["salt-task", rule.name(), complexity.name()]);

    for _ in 0..BUILD_ATTEMPTS {
        let test_t = *exercising.choose(&mut rng).expect("non-empty");
        let test_words = fill_template(test_t, catalog, &mut Vec::new(), &mut rng);
        let mut wanted: Vec<(String, String)> = test_words
            .iter()
            .cloned()
            .zip(test_t.slots.iter().cloned())
            .collect();
        wanted.shuffle(&mut rng);

        let mut demo_words = Vec::with_capacity(DEMOS_PER_TASK);
        for d in 0..DEMOS_PER_TASK {
            let t = if d == 0 {
                *exercising.choose(&mut rng).expect("non-empty")
            } else {
                *pool.choose(&mut rng).expect("non-empty")
            };
            demo_words.push(fill_template(t, catalog, &mut wanted, &mut rng));
        }
        if !wanted.is_empty() {
            continue;
        }
        let test_english = render_sentence(&test_words);
        let demo_english: Vec<String> = demo_words.iter().map(|w| render_sentence(w)).collect();
        let distinct: BTreeSet<&String> = demo_english.iter().collect();
        if distinct.len() != DEMOS_PER_TASK || distinct.contains(&test_english) {
            continue;
        }
        demo_words.shuffle(&mut rng);
        let demo_english: Vec<String> = demo_words.iter().map(|w| render_sentence(w)).collect();

        let all_words: Vec<&String> = demo_words.iter().flatten().chain(&test_words).collect();
        let pos: BTreeMap<String, Pos> = all_words
            .iter()
            .map(|w| {
                let p = catalog
                    .pos_of(w)
                    .expect("bank words carry a part of speech");
                ((*w).clone(), p)
            })
            .collect();
        let vocab_seed =
            seeding::derive_seed(seed, &["salt-vocab", rule.name(), complexity.name()]);
        let vocab = synth_vocab(&all_words, lexicon, vocab_seed)?;
        let rules = vec![rule];
        let demos = demo_english
            .into_iter()
            .map(|english| {
                let artificial = translate(&english, &vocab, &rules, &pos)?;
                Ok(SaltPair {
                    english,
                    artificial,
                })
            })
            .collect::<Result<Vec<_>, SaltError>>()?;
        let gold_translation = translate(&test_english, &vocab, &rules, &pos)?;
        let task = SaltTask {
            demos,
            test_english,
            gold_translation,
            rules,
            vocab,
            pos,
            complexity,
            difficulty: complexity.difficulty(),
        };
        if check_coverage(&task) {
            return Ok(task);
        }
    }
    Err(SaltError::PoolCannotSatisfy { rule, complexity })
}

/// Plans a batch: equal thirds per tier, modes within a tier round-robin.
pub fn batch_plan(count: usize) -> Vec<(SyntaxRule, Complexity)> {
    let tiers = [
        Complexity::Simple,
        Complexity::Intermediate,
        Complexity::Complex,
    ];
    let mut plan = Vec::with_capacity(count);
    for (ti, tier) in tiers.iter().enumerate() {
        let n = count / 3 + usize::from(ti < count % 3);
        let modes: Vec<_> = MODES.iter().filter(|(_, c)| c == tier).collect();
        plan.extend((0..n).map(|i| *modes[i % modes.len()]));
    }
    plan
}

pub fn generate_batch(
    catalog: &Catalog,
    lexicon: &Lexicon,
    count: usize,
    seed: u64,
) -> Result<Vec<SaltTask>, SaltError> {
    batch_plan(count)
        .into_par_iter()
        .enumerate()
        .map(|(i, (rule, cx))| {
            build_task(
                catalog,
                lexicon,
                rule,
                cx,
                seeding::derive_seed(seed, &["salt", &i.to_string()]),
            )
        })
        .collect()
}

impl SaltTask {
    /// Wrong-but-plausible translations: other rules over the same vocabulary
    /// and token-level perturbations of the gold.
    pub fn distractors(&self, k: usize, seed: u64) -> Vec<String> {
        let mut pool: Vec<String> = SyntaxRule::ALL
            .iter()
            .filter(|r| !self.rules.contains(r))
            .filter_map(|&r| translate(&self.test_english, &self.vocab, &[r], &self.pos).ok())
            .collect();
        let (gold_tokens, punct) = tokenize(&self.gold_translation);
        for i in 0..gold_tokens.len().saturating_sub(1) {
            let mut t = gold_tokens.clone();
            t.swap(i, i + 1);
            let mut s = t.join(" ");
            s.extend(punct);
            pool.push(s);
        }
        let mut rng = seeding::rng_for(seed, &["salt-distractors", &self.test_english]);
        pool.shuffle(&mut rng);
        let mut seen = BTreeSet::new();
        seen.insert(self.gold_translation.clone());
        pool.into_iter()
            .filter(|p| seen.insert(p.clone()))
            .take(k)
            .collect()
    }

    pub fn to_instance(&self, id: &str, format: TaskFormat, seed: u64) -> TaskInstance {
        let ftg = TaskInstance {
            id: id.to_string(),
            dataset: DatasetKind::Salt,
            modality: DatasetKind::Salt.modality(),
            difficulty: self.difficulty,
            format: TaskFormat::Ftg,
            body: TaskBody::Icl(IclInstance {
                demos: self
                    .demos
                    .iter()
                    .map(|d| Demo {
                        input: d.english.clone(),
                        output: d.artificial.clone(),
                    })
                    .collect(),
                test_input: self.test_english.clone(),
                gold_output: self.gold_translation.clone(),
                function_id: format!(
                    "salt/{}/{}",
                    self.rules
                        .iter()
                        .map(|r| r.name())
                        .collect::<Vec<_>>()
                        .join("+"),
                    self.complexity
                ),
                candidates: None,
            }),
        };
        match format {
            TaskFormat::Ftg => ftg,
            TaskFormat::Mcq => {
                let d = self.distractors(3, seed);
                dataset::project_mcq(&ftg, &d, seed).expect("distractors exclude gold")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn table8_pos() -> BTreeMap<String, Pos> {
        let c = Catalog::bundled();
        [
            "I",
            "like",
            "beautiful",
            "house",
            "giant",
            "elephant",
            "runs",
            "quickly",
        ]
        .iter()
        .map(|w| (w.to_string(), c.pos_of(w).unwrap()))
        .collect()
    }

    #[test]
    fn noun_adjective_inversion_swaps_pair() {
        let tags = [Pos::Pron, Pos::Verb, Pos::Adj, Pos::Noun];
        let out = apply_rule(
            &s(&["gkt", "ivo", "prr", "cbi"]),
            &tags,
            &derive_constituents(&tags),
            SyntaxRule::NounAdjectiveInversion,
        );
        assert_eq!(out.tokens, s(&["gkt", "ivo", "cbi", "prr"]));
        assert!(out.applied);
    }

    #[test]
    fn predicate_subject_inversion_moves_predicate_first() {
        let tags = [Pos::Adj, Pos::Noun, Pos::Verb, Pos::Adv];
        let cons = [
            Constituent {
                label: ConstituentLabel::Subject,
                start: 0,
                end: 2,
            },
            Constituent {
                label: ConstituentLabel::Predicate,
                start: 2,
                end: 4,
            },
        ];
        let out = apply_rule(
            &s(&["rgd", "krt", "uco", "xrk"]),
            &tags,
            &cons,
            SyntaxRule::PredicateSubjectInversion,
        );
        assert_eq!(out.tokens, s(&["uco", "xrk", "rgd", "krt"]));
    }

    #[test]
    fn word_to_word_is_identity() {
        let tags = [Pos::Adj, Pos::Noun];
        let toks = s(&["aaa", "bbb"]);
        let out = apply_rule(
            &toks,
            &tags,
            &derive_constituents(&tags),
            SyntaxRule::WordToWord,
        );
        assert_eq!(out.tokens, toks);
    }

    #[test]
    fn absent_pos_flags_identity() {
        let tags = [Pos::Pron, Pos::Verb];
        let toks = s(&["aaa", "bbb"]);
        let out = apply_rule(
            &toks,
            &tags,
            &derive_constituents(&tags),
            SyntaxRule::VerbAdverbInversion,
        );
        assert_eq!(out.tokens, toks);
        assert!(!out.applied);
    }

    #[test]
    fn repetition_doubles_in_place_and_keeps_spans() {
        let tags = [Pos::Adj, Pos::Noun, Pos::Verb, Pos::Adv];
        let out = apply_rule(
            &s(&["a", "n", "v", "d"]),
            &tags,
            &derive_constituents(&tags),
            SyntaxRule::NounRepetition,
        );
        assert_eq!(out.tokens, s(&["a", "n", "n", "v", "d"]));
        assert_eq!(out.constituents[0].end, 3);
        assert_eq!(out.constituents[1].start, 3);
    }

    #[test]
    fn table8_translations() {
        let pos = table8_pos();
        let v1 = VocabMap::from_pairs([
            ("I", "gkt"),
            ("like", "ivo"),
            ("beautiful", "prr"),
            ("house", "cbi"),
        ]);
        assert_eq!(
            translate(
                "I like beautiful house.",
                &v1,
                &[SyntaxRule::NounAdjectiveInversion],
                &pos
            )
            .unwrap(),
            "gkt ivo cbi prr."
        );
        let v2 = VocabMap::from_pairs([
            ("giant", "rgd"),
            ("elephant", "krt"),
            ("runs", "uco"),
            ("quickly", "xrk"),
        ]);
        assert_eq!(
            translate(
                "Giant elephant runs quickly.",
                &v2,
                &[SyntaxRule::PredicateSubjectInversion],
                &pos
            )
            .unwrap(),
            "uco xrk rgd krt."
        );
    }

    #[test]
    fn unmapped_word_is_an_error() {
        let pos = table8_pos();
        let v = VocabMap::from_pairs([("I", "gkt")]);
        assert_eq!(
            translate("I like house.", &v, &[], &pos),
            Err(SaltError::UnmappedWord("like".into()))
        );
    }

    #[test]
    fn vocab_is_oov_injective_and_seeded() {
        let lex = Lexicon::bundled();
        let words = ["I", "like", "beautiful", "house"];
        let v = synth_vocab(&words, lex, 5).unwrap();
        assert_eq!(v.len(), 4);
        assert!(v.is_injective());
        for (_, tok) in v.iter() {
            assert_eq!(tok.len(), 3);
            assert!(tok.chars().all(|c| c.is_ascii_lowercase()));
            assert!(!lex.contains(tok));
        }
        assert_eq!(v, synth_vocab(&words, lex, 5).unwrap());
        assert!(synth_vocab::<&str>(&[], lex, 5).unwrap().is_empty());
    }

    #[test]
    fn exhausted_token_space() {
        let all: Vec<String> = all_tokens().collect();
        let lex = Lexicon::from_words(all.iter().skip(1));
        assert!(matches!(
            synth_vocab(&["a", "b"], &lex, 1),
            Err(SaltError::TokenSpaceExhausted {
                needed: 2,
                available: 1
            })
        ));
    }

    #[test]
    fn built_task_has_easy_difficulty_and_oracle_gold() {
        let c = Catalog::bundled();
        let t = build_task(
            &c,
            Lexicon::bundled(),
            SyntaxRule::NounAdjectiveInversion,
            Complexity::Simple,
            3,
        )
        .unwrap();
        assert_eq!(t.difficulty, Difficulty::Easy);
        assert_eq!(t.demos.len(), DEMOS_PER_TASK);
        assert!(check_coverage(&t));
        assert_eq!(
            t.gold_translation,
            translate(&t.test_english, &t.vocab, &t.rules, &t.pos).unwrap()
        );
    }

    #[test]
    fn coverage_fails_without_rule_bearing_demos() {
        let c = Catalog::bundled();
        let mut t = build_task(
            &c,
            Lexicon::bundled(),
            SyntaxRule::VerbAdverbInversion,
            Complexity::Complex,
            8,
        )
        .unwrap();
        let pos = t.pos.clone();
        t.demos.retain(|d| {
            !exercises(
                &tokenize(&d.english).0,
                &pos,
                SyntaxRule::VerbAdverbInversion,
            )
        });
        assert!(!check_coverage(&t));
    }

    #[test]
    fn coverage_fails_on_undemonstrated_word() {
        let c = Catalog::bundled();
        let mut t = build_task(
            &c,
            Lexicon::bundled(),
            SyntaxRule::WordToWord,
            Complexity::Simple,
            1,
        )
        .unwrap();
        t.test_english = format!("{} elephantine", t.test_english.trim_end_matches('.'));
        assert!(!check_coverage(&t));
    }

    #[test]
    fn batch_plan_quotas() {
        let plan = batch_plan(1200);
        for cx in [
            Complexity::Simple,
            Complexity::Intermediate,
            Complexity::Complex,
        ] {
            assert_eq!(plan.iter().filter(|(_, c)| *c == cx).count(), 400);
        }
        for mode in MODES {
            assert_eq!(plan.iter().filter(|m| **m == mode).count(), 100);
        }
    }

    #[test]
    fn mcq_instance_has_four_candidates() {
        let c = Catalog::bundled();
        let t = build_task(
            &c,
            Lexicon::bundled(),
            SyntaxRule::PredicateSubjectInversion,
            Complexity::Intermediate,
            4,
        )
        .unwrap();
        let inst = t.to_instance("salt-1", TaskFormat::Mcq, 4);
        assert_eq!(inst.candidates().unwrap().len(), 4);
        assert!(crate::model::validate_instance(&inst).is_empty());
    }
}
