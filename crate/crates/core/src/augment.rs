//! Label-preserving text augmentation: thesaurus substitution, embedding
//! nearest-neighbour substitution and back-translation.
//!
//! Substitution strategies work on the tokenizer's pre-split words and
//! join them with single spaces; an unchanged example is returned verbatim.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{config_err, Error, Result};
use crate::label::LabeledExample;
use crate::model::SentimentModel;
use crate::rng::{self, Rng};
use crate::tokenizer::{split_words, Vocab, NUM_SPECIAL};

/// Word to synonym list. Self-references are dropped at construction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Thesaurus {
    entries: BTreeMap<String, Vec<String>>,
}

fn is_single_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

impl Thesaurus {
    pub fn new(entries: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut clean = BTreeMap::new();
        for (word, synonyms) in entries {
            if !is_single_token(&word) || word.to_lowercase() != word {
                return Err(Error::Data(format!("thesaurus key {word:?} must be a single lowercase token")));
            }
            if let Some(bad) = synonyms.iter().find(|s| !is_single_token(s)) {
                return Err(Error::Data(format!("synonym {bad:?} of {word:?} is not a single token")));
            }
            let kept: Vec<String> = synonyms.into_iter().filter(|s| *s != word).collect();
            if kept.is_empty() {
                return Err(Error::Data(format!("thesaurus entry {word:?} has no synonym other than itself")));
            }
            clean.insert(word, kept);
        }
        Ok(Self { entries: clean })
    }

    pub fn synonyms(&self, word: &str) -> Option<&[String]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Thesaurus,
    Embedding,
    BackTranslate,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Thesaurus => "thesaurus",
            Strategy::Embedding => "embedding",
            Strategy::BackTranslate => "backtranslate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Strategy::Thesaurus, Strategy::Embedding, Strategy::BackTranslate]
            .into_iter()
            .find(|v| v.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPolicy {
    pub strategy: Strategy,
    /// Per-word substitution probability.
    pub probability: f64,
    pub max_substitutions: usize,
    pub seed: u64,
}

impl AugmentPolicy {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            probability: 0.1,
            max_substitutions: 3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.probability > 0.0 && self.probability <= 1.0) {
            return Err(config_err(format!(
                "substitution probability must lie in (0, 1], got {}",
                self.probability
            )));
        }
        if self.max_substitutions == 0 {
            return Err(config_err("max_substitutions must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub example: LabeledExample,
    /// Substitutions applied (after the cap).
    pub substitutions: usize,
    /// Words selected by the Bernoulli draws, before the cap.
    pub selected: usize,
    /// True when the output text equals the input.
    pub no_op: bool,
}

impl Augmented {
    fn unchanged(example: &LabeledExample, selected: usize) -> Self {
        Self {
            example: example.clone(),
            substitutions: 0,
            selected,
            no_op: true,
        }
    }
}

/// A failed augmentation; `original` is the untouched input.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentFailure {
    pub original: LabeledExample,
    pub reason: String,
}

impl From<AugmentFailure> for Error {
    fn from(f: AugmentFailure) -> Self {
        Error::Augment(format!("example {}: {}", f.original.id, f.reason))
    }
}

/// Bernoulli selection over eligible words, applying at most `max`
/// replacements in word order.
fn substitute<F>(example: &LabeledExample, policy: &AugmentPolicy, rng: &mut Rng, mut replace: F) -> Augmented
where
    F: FnMut(&str, &mut Rng) -> Option<String>,
{
    let mut words = split_words(&example.text);
    let (mut selected, mut applied) = (0, 0);
    for w in words.iter_mut() {
        // Eligibility is probed first so ineligible words consume no draws.
        let mut probe = rng.clone();
        if replace(w, &mut probe).is_none() {
            continue;
        }
        if rng::unit(rng) < policy.probability {
            selected += 1;
            if applied < policy.max_substitutions {
                if let Some(new) = replace(w, rng) {
                    *w = new;
                    applied += 1;
                }
            }
        }
    }
    let text = words.join(" ");
    if applied == 0 || text == split_words(&example.text).join(" ") {
        return Augmented::unchanged(example, selected);
    }
    Augmented {
        example: LabeledExample::new(example.id, text, example.label),
        substitutions: applied,
        selected,
        no_op: false,
    }
}

/// Replaces covered words with a uniformly chosen synonym.
pub fn augment_thesaurus(example: &LabeledExample, th: &Thesaurus, policy: &AugmentPolicy, rng: &mut Rng) -> Augmented {
    substitute(example, policy, rng, |w, r| {
        th.synonyms(w).map(|syn| syn[rng::below(r, syn.len())].clone())
    })
}

fn cosine(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Cosine nearest neighbours in a model's token-embedding table.
#[derive(Debug, Clone)]
pub struct EmbeddingNeighbors {
    rows: Vec<Vec<f64>>,
    norms: Vec<f64>,
    candidate: Vec<bool>,
}

impl EmbeddingNeighbors {
    pub fn new(model: &SentimentModel, vocab: &Vocab) -> Result<Self> {
        if vocab.len() < NUM_SPECIAL + 2 {
            return Err(config_err(format!(
                "embedding substitution needs at least {} vocabulary entries, got {}",
                NUM_SPECIAL + 2,
                vocab.len()
            )));
        }
        if vocab.len() != model.config().vocab_size {
            return Err(config_err("model and vocabulary sizes differ"));
        }
        let table = model.token_embeddings();
        let width = table.shape()[1];
        let rows: Vec<Vec<f64>> = table.data().chunks(width).map(<[f64]>::to_vec).collect();
        let norms = rows.iter().map(|r| libm::sqrt(r.iter().map(|v| v * v).sum())).collect();
        let candidate = (0..vocab.len() as u32).map(|id| vocab.is_whole_word(id)).collect();
        Ok(Self { rows, norms, candidate })
    }

    /// Most similar whole-word token other than `id`; ties go to the lower
    /// id.
    pub fn nearest(&self, id: u32) -> Option<u32> {
        let id = id as usize;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.rows.len() {
            if j == id || !self.candidate[j] {
                continue;
            }
            let s = cosine(&self.rows[id], &self.rows[j], self.norms[id], self.norms[j]);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((j, s));
            }
        }
        best.map(|(j, _)| j as u32)
    }
}

/// Replaces in-vocabulary whole words by their embedding nearest neighbour.
pub fn augment_embedding(
    example: &LabeledExample,
    vocab: &Vocab,
    neighbors: &EmbeddingNeighbors,
    policy: &AugmentPolicy,
    rng: &mut Rng,
) -> Augmented {
    substitute(example, policy, rng, |w, _| {
        let id = vocab.id(w).filter(|&id| vocab.is_whole_word(id))?;
        let n = neighbors.nearest(id)?;
        vocab.token(n).map(ToString::to_string)
    })
}

pub trait Translator {
    /// Translates `text` into `target_language`.
    fn translate(&self, text: &str, target_language: &str) -> core::result::Result<String, String>;
}

/// Returns its input.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, text: &str, _: &str) -> core::result::Result<String, String> {
        Ok(text.into())
    }
}

/// Word-by-word dictionary translator keyed by target language. Words
/// without an entry, and languages without a dictionary, pass through.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StubTranslator {
    pub dictionaries: BTreeMap<String, BTreeMap<String, String>>,
}

impl Translator for StubTranslator {
    fn translate(&self, text: &str, target_language: &str) -> core::result::Result<String, String> {
        let Some(dict) = self.dictionaries.get(target_language) else {
            return Ok(text.into());
        };
        Ok(split_words(text)
            .into_iter()
            .map(|w| dict.get(&w).cloned().unwrap_or(w))
            .collect::<Vec<_>>()
            .join(" "))
    }
}

/// Round trip through `pivot` and back to `source`.
pub fn augment_backtranslate(
    example: &LabeledExample,
    translator: &dyn Translator,
    pivot: &str,
    source: &str,
) -> core::result::Result<Augmented, AugmentFailure> {
    let fail = |reason: String| AugmentFailure {
        original: example.clone(),
        reason,
    };
    let there = translator.translate(&example.text, pivot).map_err(fail)?;
    let back = translator.translate(&there, source).map_err(fail)?;
    if back.trim().is_empty() {
        return Err(fail("translation produced an empty text".into()));
    }
    if back == example.text || split_words(&back) == split_words(&example.text) {
        return Ok(Augmented::unchanged(example, 0));
    }
    Ok(Augmented {
        example: LabeledExample::new(example.id, back, example.label),
        substitutions: 0,
        selected: 0,
        no_op: false,
    })
}

/// Resources a strategy may draw on.
#[derive(Default, Clone, Copy)]
pub struct Resources<'a> {
    pub thesaurus: Option<&'a Thesaurus>,
    pub embeddings: Option<(&'a Vocab, &'a EmbeddingNeighbors)>,
    /// Translator, pivot language and source language.
    pub translator: Option<(&'a dyn Translator, &'a str, &'a str)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentedDataset {
    /// Each original followed by its accepted variants.
    pub examples: Vec<LabeledExample>,
    pub added: usize,
    pub no_ops: usize,
    pub skipped: usize,
    /// One message per failed attempt.
    pub failures: Vec<String>,
}

/// Adds up to `k` changed variants per example. Variants get fresh ids
/// above the largest input id; failures are counted and the original kept.
pub fn augment_dataset(
    data: &[LabeledExample],
    policy: &AugmentPolicy,
    resources: &Resources<'_>,
    k: usize,
) -> Result<AugmentedDataset> {
    policy.validate()?;
    if k == 0 {
        return Err(config_err("augmentation multiplier must be at least 1"));
    }
    let missing = |what: &str| config_err(format!("{} augmentation needs {what}", policy.strategy.name()));
    match policy.strategy {
        Strategy::Thesaurus if resources.thesaurus.is_none() => return Err(missing("a thesaurus")),
        Strategy::Embedding if resources.embeddings.is_none() => return Err(missing("a model")),
        Strategy::BackTranslate if resources.translator.is_none() => return Err(missing("a translator")),
        _ => {}
    }
    let mut next_id = data.iter().map(|e| e.id + 1).max().unwrap_or(0);
    let mut out = AugmentedDataset::default();
    for (i, ex) in data.iter().enumerate() {
        out.examples.push(ex.clone());
        for j in 0..k {
            let mut r = rng::derive(policy.seed, &[0xa6, i as u64, j as u64]);
            let attempt = match policy.strategy {
                Strategy::Thesaurus => Ok(augment_thesaurus(ex, resources.thesaurus.expect("checked"), policy, &mut r)),
                Strategy::Embedding => {
                    let (vocab, nn) = resources.embeddings.expect("checked");
                    Ok(augment_embedding(ex, vocab, nn, policy, &mut r))
                }
                Strategy::BackTranslate => {
                    let (t, pivot, source) = resources.translator.expect("checked");
                    augment_backtranslate(ex, t, pivot, source)
                }
            };
            match attempt {
                Ok(a) if a.no_op => out.no_ops += 1,
                Ok(a) => {
                    out.examples.push(LabeledExample::new(next_id, a.example.text, ex.label));
                    next_id += 1;
                    out.added += 1;
                }
                Err(f) => {
                    out.skipped += 1;
                    out.failures.push(format!("example {}: {}", f.original.id, f.reason));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::Sentiment;
    use crate::model::{EncoderConfig, Variant};
    use alloc::vec;

    fn th(pairs: &[(&str, &[&str])]) -> Thesaurus {
        Thesaurus::new(
            pairs
                .iter()
                .map(|(w, s)| (w.to_string(), s.iter().map(|x| x.to_string()).collect()))
                .collect(),
        )
        .unwrap()
    }

    fn ex(text: &str) -> LabeledExample {
        LabeledExample::new(0, text, Sentiment::Positive)
    }

    #[test]
    fn thesaurus_validation() {
        let mut m = BTreeMap::new();
        m.insert("good".to_string(), vec!["good".to_string()]);
        assert!(Thesaurus::new(m).is_err());
        let mut m = BTreeMap::new();
        m.insert("Good".to_string(), vec!["fine".to_string()]);
        assert!(Thesaurus::new(m).is_err());
        let mut m = BTreeMap::new();
        m.insert("good".to_string(), vec!["very fine".to_string()]);
        assert!(Thesaurus::new(m).is_err());
        assert_eq!(th(&[("good", &["good", "fine"])]).synonyms("good").unwrap(), &["fine".to_string()]);
    }

    #[test]
    fn empty_thesaurus_is_no_op() {
        let policy = AugmentPolicy::new(Strategy::Thesaurus);
        let input = ex("Good API, really");
        let out = augment_thesaurus(&input, &Thesaurus::default(), &policy, &mut rng::seeded(1));
        assert!(out.no_op);
        assert_eq!(out.example, input);
    }

    #[test]
    fn forced_substitution() {
        let policy = AugmentPolicy {
            probability: 1.0,
            max_substitutions: 10,
            ..AugmentPolicy::new(Strategy::Thesaurus)
        };
        let out = augment_thesaurus(&ex("good api"), &th(&[("good", &["great"])]), &policy, &mut rng::seeded(1));
        assert_eq!(out.example.text, "great api");
        assert_eq!(out.example.label, Sentiment::Positive);
        assert!(!out.no_op);
    }

    #[test]
    fn cap_limits_substitutions() {
        let policy = AugmentPolicy {
            probability: 1.0,
            max_substitutions: 2,
            ..AugmentPolicy::new(Strategy::Thesaurus)
        };
        let out = augment_thesaurus(&ex("a a a a"), &th(&[("a", &["b"])]), &policy, &mut rng::seeded(1));
        assert_eq!(out.example.text, "b b a a");
        assert_eq!((out.selected, out.substitutions), (4, 2));
    }

    #[test]
    fn binomial_mean_of_selections() {
        let words = ["w0", "w1", "w2", "w3", "w4", "w5", "w6", "w7", "w8", "w9"];
        let entries: Vec<(&str, &[&str])> = words.iter().map(|w| (*w, &["x"][..])).collect();
        let t = th(&entries);
        let input = ex(&words.join(" "));
        let policy = AugmentPolicy::new(Strategy::Thesaurus);
        let mut r = rng::seeded(42);
        let total: usize = (0..10_000).map(|_| augment_thesaurus(&input, &t, &policy, &mut r).selected).sum();
        let mean = total as f64 / 10_000.0;
        assert!((mean - 1.0).abs() <= 0.1, "{mean}");
    }

    fn embedding_model(vocab: &Vocab, seed: u64) -> SentimentModel {
        let cfg = EncoderConfig::new(vocab.len(), 8).with_hidden(8, 2);
        SentimentModel::new(cfg, Variant::BertLike, seed).unwrap()
    }

    fn twenty_token_vocab() -> Vocab {
        let mut tokens: Vec<String> = crate::tokenizer::SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        for w in ["api", "bug", "fix", "docs", "fast", "slow", "good", "bad", "test", "build", "cli", "ok"] {
            tokens.push(w.into());
        }
        tokens.extend(["##s", "##ed", "##ing"].iter().map(|s| s.to_string()));
        Vocab::from_tokens(tokens).unwrap()
    }

    #[test]
    fn neighbour_exclusions_exhaustive() {
        let vocab = twenty_token_vocab();
        assert_eq!(vocab.len(), 20);
        for seed in 0..5 {
            let model = embedding_model(&vocab, seed);
            let nn = EmbeddingNeighbors::new(&model, &vocab).unwrap();
            for id in 0..20u32 {
                let n = nn.nearest(id).unwrap();
                assert_ne!(n, id);
                assert!(!Vocab::is_special(n));
                assert!(!vocab.token(n).unwrap().starts_with("##"));
            }
        }
    }

    #[test]
    fn neighbour_matches_brute_force_scan() {
        let vocab = twenty_token_vocab();
        let model = embedding_model(&vocab, 9);
        let nn = EmbeddingNeighbors::new(&model, &vocab).unwrap();
        let table = model.token_embeddings();
        let w = table.shape()[1];
        let row = |i: usize| &table.data()[i * w..(i + 1) * w];
        for id in 0..vocab.len() {
            let mut best = usize::MAX;
            let mut best_sim = f64::NEG_INFINITY;
            for j in 0..vocab.len() {
                let tok = vocab.token(j as u32).unwrap();
                if j == id || j < NUM_SPECIAL || tok.starts_with("##") {
                    continue;
                }
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for k in 0..w {
                    dot += row(id)[k] * row(j)[k];
                    na += row(id)[k] * row(id)[k];
                    nb += row(j)[k] * row(j)[k];
                }
                let sim = dot / (libm::sqrt(na) * libm::sqrt(nb));
                if sim > best_sim {
                    best_sim = sim;
                    best = j;
                }
            }
            assert_eq!(nn.nearest(id as u32), Some(best as u32), "token {id}");
        }
    }

    #[test]
    fn embedding_substitution_stays_in_vocab() {
        let vocab = twenty_token_vocab();
        let model = embedding_model(&vocab, 2);
        let nn = EmbeddingNeighbors::new(&model, &vocab).unwrap();
        let policy = AugmentPolicy {
            probability: 1.0,
            max_substitutions: 10,
            ..AugmentPolicy::new(Strategy::Embedding)
        };
        let input = ex("good api build unknownword");
        let out = augment_embedding(&input, &vocab, &nn, &policy, &mut rng::seeded(3));
        let words = split_words(&out.example.text);
        assert_eq!(words.len(), 4);
        assert_eq!(words[3], "unknownword");
        for w in &words[..3] {
            assert!(vocab.id(w).is_some_and(|id| vocab.is_whole_word(id)));
        }
        assert_eq!(out.substitutions, 3);
        assert_eq!(out, augment_embedding(&input, &vocab, &nn, &policy, &mut rng::seeded(3)));
    }

    #[test]
    fn embedding_preconditions() {
        let tokens: Vec<String> = crate::tokenizer::SPECIAL_TOKENS.iter().map(|s| s.to_string()).chain(["a".to_string()]).collect();
        let vocab = Vocab::from_tokens(tokens).unwrap();
        let model = embedding_model(&vocab, 1);
        assert!(matches!(EmbeddingNeighbors::new(&model, &vocab), Err(Error::Config(_))));
        let zero = AugmentPolicy {
            probability: 0.0,
            ..AugmentPolicy::new(Strategy::Embedding)
        };
        assert!(matches!(zero.validate(), Err(Error::Config(_))));
    }

    fn stub() -> StubTranslator {
        let mut es = BTreeMap::new();
        es.insert("good".to_string(), "bueno".to_string());
        let mut en = BTreeMap::new();
        en.insert("bueno".to_string(), "great".to_string());
        let mut dictionaries = BTreeMap::new();
        dictionaries.insert("es".to_string(), es);
        dictionaries.insert("en".to_string(), en);
        StubTranslator { dictionaries }
    }

    #[test]
    fn backtranslation_round_trips() {
        let out = augment_backtranslate(&ex("good api"), &stub(), "es", "en").unwrap();
        assert_eq!(out.example.text, "great api");
        let same = augment_backtranslate(&ex("good api"), &IdentityTranslator, "es", "en").unwrap();
        assert!(same.no_op);
        assert_eq!(same.example, ex("good api"));
    }

    struct Broken;
    impl Translator for Broken {
        fn translate(&self, _: &str, _: &str) -> core::result::Result<String, String> {
            Err("service unavailable".into())
        }
    }

    #[test]
    fn failing_translator_keeps_original() {
        let input = ex("good api");
        let err = augment_backtranslate(&input, &Broken, "es", "en").unwrap_err();
        assert_eq!(err.original, input);
        let policy = AugmentPolicy::new(Strategy::BackTranslate);
        let res = Resources {
            translator: Some((&Broken, "es", "en")),
            ..Resources::default()
        };
        let out = augment_dataset(&[input.clone()], &policy, &res, 2).unwrap();
        assert_eq!(out.examples, vec![input]);
        assert_eq!(out.skipped, 2);
        assert!(matches!(Error::from(err), Error::Augment(_)));
    }

    fn corpus(n: usize) -> Vec<LabeledExample> {
        let words = ["good", "fine", "bad"];
        (0..n)
            .map(|i| LabeledExample::new(i, format!("the {} build", words[i % 3]), Sentiment::ALL[(i * 7 / 3) % 3]))
            .collect()
    }

    #[test]
    fn dataset_bounds_and_histogram() {
        let t = th(&[("good", &["great", "nice"]), ("bad", &["awful"]), ("fine", &["okay"]), ("build", &["release"])]);
        let data = corpus(100);
        let policy = AugmentPolicy {
            probability: 0.5,
            seed: 4,
            ..AugmentPolicy::new(Strategy::Thesaurus)
        };
        let res = Resources {
            thesaurus: Some(&t),
            ..Resources::default()
        };
        let out = augment_dataset(&data, &policy, &res, 2).unwrap();
        assert!(out.examples.len() >= 100 && out.examples.len() <= 300);
        assert_eq!(out.examples.len(), 100 + out.added);
        assert_eq!(out.added + out.no_ops + out.skipped, 200);
        assert!(out.examples.iter().all(|e| !e.text.trim().is_empty()));
        let ids: alloc::collections::BTreeSet<usize> = out.examples.iter().map(|e| e.id).collect();
        assert_eq!(ids.len(), out.examples.len());
        assert_eq!(out, augment_dataset(&data, &policy, &res, 2).unwrap());

        let forced = AugmentPolicy {
            probability: 1.0,
            ..policy
        };
        let out = augment_dataset(&data, &forced, &res, 2).unwrap();
        assert_eq!(out.examples.len(), 300);
        let hist = |xs: &[LabeledExample]| {
            let mut h = [0.0; 3];
            for e in xs {
                h[e.label.index()] += 1.0 / xs.len() as f64;
            }
            h
        };
        let (a, b) = (hist(&data), hist(&out.examples));
        for c in 0..3 {
            assert!((a[c] - b[c]).abs() <= 0.01, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn no_op_augmentation_returns_input() {
        let data = corpus(10);
        let policy = AugmentPolicy::new(Strategy::Thesaurus);
        let empty = Thesaurus::default();
        let res = Resources {
            thesaurus: Some(&empty),
            ..Resources::default()
        };
        let out = augment_dataset(&data, &policy, &res, 1).unwrap();
        assert_eq!(out.examples, data);
        assert_eq!(out.no_ops, 10);
        assert!(matches!(augment_dataset(&data, &policy, &res, 0), Err(Error::Config(_))));
        assert!(matches!(augment_dataset(&data, &policy, &Resources::default(), 1), Err(Error::Config(_))));
    }
}
