//! Dataset partitions, the stratified splitter and the synthetic corpus
//! generator.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{config_err, Error, Result};
use crate::label::{LabeledExample, Sentiment, NUM_CLASSES};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledExample>,
    pub validation: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    /// Where the examples came from.
    pub source: String,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.validation.len(), self.test.len()]
    }

    pub fn parts(&self) -> [&[LabeledExample]; 3] {
        [&self.train, &self.validation, &self.test]
    }

    /// Checks non-emptiness and id-disjointness of the three parts.
    pub fn check(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, part) in ["train", "validation", "test"].iter().zip(self.parts()) {
            if part.is_empty() {
                return Err(Error::Data(format!("{name} split is empty")));
            }
            for ex in part {
                if !seen.insert(ex.id) {
                    return Err(Error::Data(format!("example id {} appears in more than one split", ex.id)));
                }
            }
        }
        Ok(())
    }
}

/// Train/validation/test fractions of the 4480/498/2137 reference split.
pub const DEFAULT_RATIOS: [f64; 3] = [4480.0 / 7115.0, 498.0 / 7115.0, 2137.0 / 7115.0];

const ROUND_SLACK: f64 = 1e-9;

fn floor_slack(x: f64) -> usize {
    libm::floor(x + ROUND_SLACK) as usize
}

/// Integer parts of `total * ratios` summing to `total`; leftover units go
/// to the largest fractional remainders, ties to the lower index.
fn largest_remainder(total: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| total as f64 * r);
    let mut out = exact.map(floor_slack);
    let mut left = total - out.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    let frac = |i: usize| exact[i] - out[i] as f64;
    order.sort_by(|&a, &b| frac(b).partial_cmp(&frac(a)).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// Subsets of the three splits with exactly `k` members, as bitmasks.
fn subsets_of_size(k: usize) -> impl Iterator<Item = u8> {
    (0u8..8).filter(move |m| m.count_ones() as usize == k)
}

/// Per-label counts for each split. Every label starts at the floor of its
/// exact share; the remaining units are placed so that split totals match
/// `totals`, preferring the largest fractional shares.
fn allocate(label_counts: &[usize], ratios: &[f64; 3], totals: [usize; 3]) -> Result<Vec<[usize; 3]>> {
    let mut base: Vec<[usize; 3]> = label_counts.iter().map(|&n| ratios.map(|r| floor_slack(n as f64 * r))).collect();
    let frac: Vec<[f64; 3]> = label_counts
        .iter()
        .zip(&base)
        .map(|(&n, b)| core::array::from_fn(|s| n as f64 * ratios[s] - b[s] as f64))
        .collect();
    let row_deficit: Vec<usize> = label_counts.iter().zip(&base).map(|(&n, b)| n - b.iter().sum::<usize>()).collect();
    let mut col_deficit = [0usize; 3];
    for s in 0..3 {
        let have: usize = base.iter().map(|b| b[s]).sum();
        col_deficit[s] = totals[s]
            .checked_sub(have)
            .ok_or_else(|| Error::Data("split rounding is inconsistent".into()))?;
    }

    // Exhaustive search over at most 3^labels assignments.
    let choices: Vec<Vec<u8>> = row_deficit.iter().map(|&d| subsets_of_size(d).collect()).collect();
    let mut best: Option<(f64, Vec<u8>)> = None;
    let mut pick = alloc::vec![0usize; choices.len()];
    loop {
        let masks: Vec<u8> = pick.iter().zip(&choices).map(|(&i, c)| c[i]).collect();
        let fits = (0..3).all(|s| masks.iter().filter(|&&m| m & (1 << s) != 0).count() == col_deficit[s]);
        if fits {
            let score: f64 = masks
                .iter()
                .zip(&frac)
                .map(|(&m, f)| (0..3).filter(|&s| m & (1 << s) != 0).map(|s| f[s]).sum::<f64>())
                .sum();
            if best.as_ref().is_none_or(|(b, _)| score > *b + ROUND_SLACK) {
                best = Some((score, masks));
            }
        }
        let mut i = 0;
        loop {
            if i == pick.len() {
                let (_, masks) = best.ok_or_else(|| Error::Data("no stratified allocation matches the split sizes".into()))?;
                for (b, m) in base.iter_mut().zip(masks) {
                    for (s, slot) in b.iter_mut().enumerate() {
                        *slot += usize::from(m & (1 << s) != 0);
                    }
                }
                return Ok(base);
            }
            pick[i] += 1;
            if pick[i] < choices[i].len() {
                break;
            }
            pick[i] = 0;
            i += 1;
        }
    }
}

fn validate_ratios(ratios: &[f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(config_err(format!("split ratios must all be positive, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(config_err(format!("split ratios must sum to 1, got {sum}")));
    }
    Ok(())
}

/// Stratified, seed-deterministic partition. Within each part examples keep
/// their input order.
pub fn split_dataset(data: &[LabeledExample], ratios: [f64; 3], seed: u64, source: &str) -> Result<DatasetSplit> {
    validate_ratios(&ratios)?;
    let mut ids = BTreeSet::new();
    for ex in data {
        if !ids.insert(ex.id) {
            return Err(Error::Data(format!("duplicate example id {}", ex.id)));
        }
    }
    let mut by_label: [Vec<usize>; NUM_CLASSES] = Default::default();
    for (i, ex) in data.iter().enumerate() {
        by_label[ex.label.index()].push(i);
    }
    let present: Vec<usize> = (0..NUM_CLASSES).filter(|&c| !by_label[c].is_empty()).collect();
    let counts: Vec<usize> = present.iter().map(|&c| by_label[c].len()).collect();
    let totals = largest_remainder(data.len(), &ratios);
    let alloc_counts = allocate(&counts, &ratios, totals)?;

    let mut assignment = alloc::vec![0u8; data.len()];
    for (&c, sizes) in present.iter().zip(&alloc_counts) {
        if let Some(s) = sizes.iter().position(|&n| n == 0) {
            return Err(Error::Data(format!(
                "label {} has too few examples ({}) to appear in the {} split",
                Sentiment::ALL[c],
                by_label[c].len(),
                ["train", "validation", "test"][s]
            )));
        }
        let mut members = by_label[c].clone();
        let mut r = rng::derive(seed, &[0x5917, c as u64]);
        rng::shuffle(&mut r, &mut members);
        let mut at = 0;
        for (s, &n) in sizes.iter().enumerate() {
            for &i in &members[at..at + n] {
                assignment[i] = s as u8;
            }
            at += n;
        }
    }
    let mut parts: [Vec<LabeledExample>; 3] = Default::default();
    for (ex, &s) in data.iter().zip(&assignment) {
        parts[s as usize].push(ex.clone());
    }
    let [train, validation, test] = parts;
    let split = DatasetSplit {
        train,
        validation,
        test,
        source: source.into(),
        seed,
    };
    split.check()?;
    Ok(split)
}

/// Class-correlated marker words, indexed by [`Sentiment::index`].
pub const MARKERS: [&[&str]; NUM_CLASSES] = [
    &[
        "broken", "crashes", "terrible", "hate", "fails", "awful", "useless", "annoying", "slow", "frustrating",
        "regression", "horrible",
    ],
    &[
        "updated", "renamed", "moved", "merged", "bumped", "released", "documented", "tagged", "rebased",
        "scheduled", "listed", "configured",
    ],
    &[
        "great", "love", "awesome", "excellent", "perfect", "thanks", "helpful", "elegant", "fantastic", "clean",
        "amazing", "solid",
    ],
];

const SUBJECTS: &[&str] = &[
    "the api", "this build", "the parser", "our test suite", "the docs", "this patch", "the cli", "the compiler",
    "the installer", "that commit", "the plugin", "the release", "this module", "the dashboard",
];

const OBJECTS: &[&str] = &[
    "cache", "config", "linter", "server", "schema", "pipeline", "branch", "query", "script", "widget",
];

const TEMPLATES: &[&str] = &[
    "{s} {a} and {b}",
    "{s} is {a} after the {o} change , {b}",
    "i think {s} {a} because the {o} is {b}",
    "{a} work on {s} , the {o} looks {b}",
    "when the {o} runs {s} {a} {b}",
    "{s} {a} with the new {o} and {b}",
    "honestly {s} {a} , {b} {o} too",
    "{b} : {s} {a} on the {o}",
];

pub fn markers(label: Sentiment) -> &'static [&'static str] {
    MARKERS[label.index()]
}

/// The class whose lexicon contains `word`, if any.
pub fn marker_class(word: &str) -> Option<Sentiment> {
    Sentiment::ALL.into_iter().find(|c| markers(*c).contains(&word))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub num_train: usize,
    pub num_test: usize,
    /// Probability that one of a sentence's two markers is drawn from
    /// another class's lexicon.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_train: 3000,
            num_test: 600,
            noise: 0.05,
            seed: 13,
        }
    }
}

impl SyntheticConfig {
    /// Validation examples generated alongside training data.
    pub fn num_validation(&self) -> usize {
        (self.num_train / 10).max(NUM_CLASSES)
    }
}

fn pick<'a>(r: &mut Rng, items: &[&'a str]) -> &'a str {
    items[rng::below(r, items.len())]
}

fn synthetic_sentence(r: &mut Rng, label: Sentiment, noise: f64) -> String {
    let own = markers(label);
    let a = pick(r, own);
    let mut b = pick(r, own);
    while b == a {
        b = pick(r, own);
    }
    let (mut a, mut b) = (a, b);
    if rng::unit(r) < noise {
        let other = Sentiment::ALL[(label.index() + 1 + rng::below(r, NUM_CLASSES - 1)) % NUM_CLASSES];
        let bleed = pick(r, markers(other));
        if rng::below(r, 2) == 0 {
            a = bleed;
        } else {
            b = bleed;
        }
    }
    let template = pick(r, TEMPLATES);
    template
        .replace("{s}", pick(r, SUBJECTS))
        .replace("{o}", pick(r, OBJECTS))
        .replace("{a}", a)
        .replace("{b}", b)
}

/// Templated, class-balanced synthetic corpus. Texts are unique across all
/// three parts; ids run consecutively through train, validation and test.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<DatasetSplit> {
    if cfg.num_train < 30 || cfg.num_test < 30 {
        return Err(config_err("synthetic splits need at least 30 train and 30 test examples"));
    }
    if !(0.0..=1.0).contains(&cfg.noise) {
        return Err(config_err(format!("noise must lie in [0, 1], got {}", cfg.noise)));
    }
    let mut r = rng::derive(cfg.seed, &[0x5e_47]);
    let mut seen = BTreeSet::new();
    let mut next_id = 0;
    let mut part = |n: usize, r: &mut Rng| -> Result<Vec<LabeledExample>> {
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let label = Sentiment::ALL[i % NUM_CLASSES];
            let mut attempts = 0;
            let text = loop {
                let t = synthetic_sentence(r, label, cfg.noise);
                if seen.insert(t.clone()) {
                    break t;
                }
                attempts += 1;
                if attempts > 1000 {
                    return Err(config_err("synthetic sentence space exhausted; request fewer examples"));
                }
            };
            out.push(LabeledExample::new(next_id, text, label));
            next_id += 1;
        }
        rng::shuffle(r, &mut out);
        Ok(out)
    };
    let train = part(cfg.num_train, &mut r)?;
    let validation = part(cfg.num_validation(), &mut r)?;
    let test = part(cfg.num_test, &mut r)?;
    Ok(DatasetSplit {
        train,
        validation,
        test,
        source: String::from("synthetic"),
        seed: cfg.seed,
    })
}

/// Groups texts into documents of `per_document` sentences (the last may be
/// shorter but keeps at least two), in a seed-determined order.
pub fn pretraining_documents(texts: &[String], per_document: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if per_document < 2 {
        return Err(config_err("documents need at least two sentences"));
    }
    if texts.len() < 2 * per_document {
        return Err(config_err("corpus too small for two documents"));
    }
    let mut order: Vec<usize> = (0..texts.len()).collect();
    rng::shuffle(&mut rng::derive(seed, &[0xd0c]), &mut order);
    let mut docs: Vec<Vec<String>> = order
        .chunks(per_document)
        .map(|c| c.iter().map(|&i| texts[i].clone()).collect())
        .collect();
    if docs.last().is_some_and(|d| d.len() < 2) {
        let tail = docs.pop().expect("non-empty");
        docs.last_mut().expect("at least two documents").extend(tail);
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(counts: [usize; 3]) -> Vec<LabeledExample> {
        let mut out = Vec::new();
        let mut id = 0;
        // Interleave so the input is not grouped by label.
        let max = *counts.iter().max().unwrap();
        for i in 0..max {
            for c in 0..3 {
                if i < counts[c] {
                    out.push(LabeledExample::new(id, format!("text {id}"), Sentiment::ALL[c]));
                    id += 1;
                }
            }
        }
        out
    }

    #[test]
    fn reference_sizes_for_7115() {
        for counts in [[2087, 3022, 2006], [2372, 2372, 2371], [600, 5000, 1515]] {
            let data = dataset(counts);
            let s = split_dataset(&data, DEFAULT_RATIOS, 7, "gh").unwrap();
            assert_eq!(s.sizes(), [4480, 498, 2137], "{counts:?}");
        }
    }

    #[test]
    fn zero_ratio_rejected() {
        let data = dataset([10, 10, 10]);
        assert!(matches!(split_dataset(&data, [1.0, 0.0, 0.0], 1, "x"), Err(Error::Config(_))));
        assert!(matches!(split_dataset(&data, [0.5, 0.2, 0.2], 1, "x"), Err(Error::Config(_))));
    }

    #[test]
    fn tiny_stratum_rejected() {
        let data = dataset([50, 50, 2]);
        assert!(matches!(split_dataset(&data, DEFAULT_RATIOS, 1, "x"), Err(Error::Data(_))));
    }

    #[test]
    fn deterministic_per_seed() {
        let data = dataset([300, 200, 100]);
        let a = split_dataset(&data, DEFAULT_RATIOS, 3, "x").unwrap();
        let b = split_dataset(&data, DEFAULT_RATIOS, 3, "x").unwrap();
        let c = split_dataset(&data, DEFAULT_RATIOS, 4, "x").unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train, c.train);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn partition_and_stratification(
            counts in proptest::array::uniform3(60usize..600),
            seed in any::<u64>(),
        ) {
            let data = dataset(counts);
            let s = split_dataset(&data, DEFAULT_RATIOS, seed, "p").unwrap();
            let mut ids: Vec<usize> = s.parts().iter().flat_map(|p| p.iter().map(|e| e.id)).collect();
            ids.sort_unstable();
            prop_assert_eq!(ids, (0..data.len()).collect::<Vec<_>>());
            let n = data.len() as f64;
            for part in s.parts() {
                for c in Sentiment::ALL {
                    let full = counts[c.index()] as f64 / n;
                    let here = part.iter().filter(|e| e.label == c).count() as f64 / part.len() as f64;
                    prop_assert!((full - here).abs() <= 0.02, "{} vs {}", full, here);
                }
            }
            let totals = largest_remainder(data.len(), &DEFAULT_RATIOS);
            prop_assert_eq!(s.sizes(), totals);
        }
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let cfg = SyntheticConfig::default();
        let a = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, generate_synthetic(&cfg).unwrap());
        assert_eq!(a.sizes(), [3000, 300, 600]);
        a.check().unwrap();
        for part in a.parts() {
            let hist: Vec<usize> = Sentiment::ALL.iter().map(|&c| part.iter().filter(|e| e.label == c).count()).collect();
            let (lo, hi) = (hist.iter().min().unwrap(), hist.iter().max().unwrap());
            assert!(hi - lo <= 1, "{hist:?}");
        }
        let texts: BTreeSet<&str> = a.parts().iter().flat_map(|p| p.iter().map(|e| e.text.as_str())).collect();
        assert_eq!(texts.len(), 3900);
    }

    #[test]
    fn marker_probe_separates_noise_free_data() {
        let cfg = SyntheticConfig {
            noise: 0.0,
            ..SyntheticConfig::default()
        };
        let data = generate_synthetic(&cfg).unwrap();
        for ex in data.parts().iter().flat_map(|p| p.iter()) {
            let mut score = [0.0; NUM_CLASSES];
            for w in ex.text.split_whitespace() {
                if let Some(c) = marker_class(w) {
                    score[c.index()] += 1.0;
                }
            }
            assert_eq!(crate::label::argmax(&score), ex.label.index(), "{}", ex.text);
        }
    }

    #[test]
    fn noise_rate_is_respected() {
        let cfg = SyntheticConfig {
            num_train: 3000,
            noise: 0.2,
            ..SyntheticConfig::default()
        };
        let data = generate_synthetic(&cfg).unwrap();
        let bled = data
            .train
            .iter()
            .filter(|ex| ex.text.split_whitespace().any(|w| marker_class(w).is_some_and(|c| c != ex.label)))
            .count();
        let rate = bled as f64 / 3000.0;
        assert!((rate - 0.2).abs() < 0.03, "{rate}");
    }

    #[test]
    fn documents_group_all_texts() {
        let texts: Vec<String> = (0..21).map(|i| format!("s{i}")).collect();
        let docs = pretraining_documents(&texts, 4, 1).unwrap();
        assert_eq!(docs.iter().map(Vec::len).sum::<usize>(), 21);
        assert!(docs.iter().all(|d| d.len() >= 2));
        assert_eq!(docs.len(), 5);
    }
}
