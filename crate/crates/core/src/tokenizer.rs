//! Lowercasing word splitter, frequency-greedy subword vocabulary and
//! greedy longest-match encoding with `[CLS]`/`[SEP]` framing.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const NUM_SPECIAL: usize = 5;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Words longer than this encode to `[UNK]`.
const MAX_WORD_CHARS: usize = 100;
const CONTINUATION: &str = "##";

fn is_opaque(chunk: &str) -> bool {
    chunk.starts_with("http://")
        || chunk.starts_with("https://")
        || chunk.starts_with("www.")
        || (chunk.len() >= 2 && chunk.starts_with('`') && chunk.ends_with('`'))
}

/// Lowercases and splits on whitespace, then isolates ASCII punctuation.
/// URLs and backtick-quoted code literals survive as single words.
pub fn split_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        let chunk = chunk.to_lowercase();
        if is_opaque(&chunk) {
            words.push(chunk);
            continue;
        }
        let mut current = String::new();
        for c in chunk.chars() {
            if c.is_ascii_punctuation() {
                if !current.is_empty() {
                    words.push(core::mem::take(&mut current));
                }
                words.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: BTreeMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Builds a vocabulary from raw sentences.
    ///
    /// After the five specials come single-character pieces (`c` for word
    /// starts, `##c` for continuations) so every corpus word stays
    /// representable, then whole words with at least `min_frequency`
    /// occurrences. Within each group entries are ordered by descending
    /// frequency with lexicographic tie-breaks; the list is cut at
    /// `max_size`.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_size: usize, min_frequency: usize) -> Result<Self> {
        if max_size <= NUM_SPECIAL {
            return Err(config_err("vocabulary max_size must exceed the five special tokens"));
        }
        if min_frequency == 0 {
            return Err(config_err("min_frequency must be at least 1"));
        }
        let mut word_counts: BTreeMap<String, usize> = BTreeMap::new();
        for line in corpus {
            for w in split_words(line.as_ref()) {
                *word_counts.entry(w).or_default() += 1;
            }
        }
        if word_counts.is_empty() {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut piece_counts: BTreeMap<String, usize> = BTreeMap::new();
        for (w, &c) in &word_counts {
            for (i, ch) in w.chars().enumerate() {
                let piece = if i == 0 {
                    ch.to_string()
                } else {
                    format!("{CONTINUATION}{ch}")
                };
                *piece_counts.entry(piece).or_default() += c;
            }
        }
        let by_frequency = |m: BTreeMap<String, usize>| {
            let mut v: Vec<(String, usize)> = m.into_iter().collect();
            v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            v.into_iter().map(|(t, _)| t)
        };
        let pieces = by_frequency(piece_counts);
        let words = by_frequency(word_counts.into_iter().filter(|(_, c)| *c >= min_frequency).collect());

        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut seen: BTreeMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        for t in pieces.chain(words) {
            if tokens.len() >= max_size {
                break;
            }
            if seen.contains_key(&t) {
                continue;
            }
            seen.insert(t.clone(), tokens.len() as u32);
            tokens.push(t);
        }
        Ok(Self {
            token_to_id: seen,
            id_to_token: tokens,
        })
    }

    /// Vocabulary from an ordered token list whose first five entries are
    /// the specials.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_SPECIAL || tokens[..NUM_SPECIAL].iter().zip(SPECIAL_TOKENS).any(|(a, b)| a != b) {
            return Err(Error::Data("vocabulary must start with [PAD] [UNK] [CLS] [SEP] [MASK]".into()));
        }
        let mut token_to_id = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!("vocabulary line {i}: invalid token {t:?}")));
            }
            if token_to_id.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Data(format!("vocabulary line {i}: duplicate token {t:?}")));
            }
        }
        Ok(Self {
            token_to_id,
            id_to_token: tokens,
        })
    }

    /// Parses the one-token-per-line file format.
    pub fn parse(text: &str) -> Result<Self> {
        let tokens = text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
        Self::from_tokens(tokens)
    }

    /// Renders the file format: one token per line, line number = id.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.id_to_token {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    /// FNV-1a of the rendered vocabulary file.
    pub fn fingerprint(&self) -> u64 {
        fnv1a(self.to_file_string().as_bytes())
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIAL
    }

    /// True for entries that can stand alone as a word (not `##` pieces,
    /// not specials).
    pub fn is_whole_word(&self, id: u32) -> bool {
        !Self::is_special(id) && self.token(id).is_some_and(|t| !t.starts_with(CONTINUATION))
    }

    /// Greedy longest-match segmentation of one pre-split word.
    pub fn tokenize_word(&self, word: &str) -> Vec<u32> {
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(core::iter::once(word.len()))
            .collect();
        let chars = bounds.len() - 1;
        if chars == 0 {
            return Vec::new();
        }
        if chars > MAX_WORD_CHARS {
            return vec![UNK];
        }
        let mut out = Vec::new();
        let mut start = 0;
        let mut piece = String::new();
        while start < chars {
            let mut found = None;
            for end in (start + 1..=chars).rev() {
                piece.clear();
                if start > 0 {
                    piece.push_str(CONTINUATION);
                }
                piece.push_str(&word[bounds[start]..bounds[end]]);
                if let Some(id) = self.id(&piece) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    out.push(id);
                    start = end;
                }
                None => return vec![UNK],
            }
        }
        out
    }

    /// Token ids for `text` plus the index of the source word per token.
    pub fn tokenize(&self, text: &str) -> (Vec<u32>, Vec<usize>) {
        let mut ids = Vec::new();
        let mut words = Vec::new();
        for (wi, w) in split_words(text).iter().enumerate() {
            for id in self.tokenize_word(w) {
                ids.push(id);
                words.push(wi);
            }
        }
        (ids, words)
    }

    /// `[CLS] text [SEP]`, truncated then padded to exactly `max_len`.
    pub fn encode_single(&self, text: &str, max_len: usize) -> Result<TokenizedExample> {
        if max_len < 3 {
            return Err(config_err("encode_single needs max_len >= 3"));
        }
        let (mut ids, mut words) = self.tokenize(text);
        ids.truncate(max_len - 2);
        words.truncate(max_len - 2);
        let mut ex = TokenizedExample::with_capacity(max_len);
        ex.push(CLS, 0, None);
        for (id, w) in ids.into_iter().zip(words) {
            ex.push(id, 0, Some(w));
        }
        ex.push(SEP, 0, None);
        ex.pad_to(max_len);
        Ok(ex)
    }

    /// `[CLS] a [SEP] b [SEP]` with longest-first truncation.
    pub fn encode_pair(&self, text_a: &str, text_b: &str, max_len: usize) -> Result<TokenizedExample> {
        if max_len < 5 {
            return Err(config_err("encode_pair needs max_len >= 5"));
        }
        let (mut a, mut wa) = self.tokenize(text_a);
        let (mut b, mut wb) = self.tokenize(text_b);
        let budget = max_len - 3;
        while a.len() + b.len() > budget {
            if a.len() > b.len() {
                a.pop();
                wa.pop();
            } else {
                b.pop();
                wb.pop();
            }
        }
        let offset = split_words(text_a).len();
        let mut ex = TokenizedExample::with_capacity(max_len);
        ex.push(CLS, 0, None);
        for (id, w) in a.into_iter().zip(wa) {
            ex.push(id, 0, Some(w));
        }
        ex.push(SEP, 0, None);
        for (id, w) in b.into_iter().zip(wb) {
            ex.push(id, 1, Some(offset + w));
        }
        ex.push(SEP, 1, None);
        ex.pad_to(max_len);
        Ok(ex)
    }

    /// Joins tokens back into text, gluing `##` pieces and dropping
    /// framing tokens.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            if matches!(id, PAD | CLS | SEP) {
                continue;
            }
            let tok = self.token(id).unwrap_or(SPECIAL_TOKENS[UNK as usize]);
            if let Some(rest) = tok.strip_prefix(CONTINUATION) {
                out.push_str(rest);
            } else {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
        out
    }
}

/// An encoded sequence ready for the encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedExample {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub attention_mask: Vec<u8>,
    /// Source word index per token; `None` for specials and padding.
    pub word_ids: Vec<Option<usize>>,
}

impl TokenizedExample {
    fn with_capacity(n: usize) -> Self {
        Self {
            token_ids: Vec::with_capacity(n),
            segment_ids: Vec::with_capacity(n),
            attention_mask: Vec::with_capacity(n),
            word_ids: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, id: u32, segment: u8, word: Option<usize>) {
        self.token_ids.push(id);
        self.segment_ids.push(segment);
        self.attention_mask.push(1);
        self.word_ids.push(word);
    }

    fn pad_to(&mut self, max_len: usize) {
        let segment = self.segment_ids.last().copied().unwrap_or(0);
        while self.token_ids.len() < max_len {
            self.token_ids.push(PAD);
            self.segment_ids.push(segment);
            self.attention_mask.push(0);
            self.word_ids.push(None);
        }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of leading non-padding positions.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().rposition(|&m| m == 1).map_or(0, |p| p + 1)
    }

    /// True when segment 1 is present.
    pub fn is_pair(&self) -> bool {
        self.segment_ids.iter().zip(&self.attention_mask).any(|(&s, &m)| s == 1 && m == 1)
    }

    /// Positions eligible for masking: real tokens that are not specials.
    pub fn maskable_positions(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.attention_mask[i] == 1 && !Vocab::is_special(self.token_ids[i]))
            .collect()
    }

    /// Structural invariants: equal lengths, mask exactly on non-PAD
    /// positions, at most two SEPs, monotone segments.
    pub fn check(&self) -> Result<()> {
        let n = self.token_ids.len();
        if self.segment_ids.len() != n || self.attention_mask.len() != n || self.word_ids.len() != n {
            return Err(Error::Contract("tokenized example fields differ in length".into()));
        }
        if self.token_ids.first() != Some(&CLS) {
            return Err(Error::Contract("tokenized example must begin with [CLS]".into()));
        }
        for i in 0..n {
            if (self.attention_mask[i] == 1) != (self.token_ids[i] != PAD) {
                return Err(Error::Contract(format!("attention mask disagrees with padding at {i}")));
            }
            if i > 0 && self.segment_ids[i] < self.segment_ids[i - 1] {
                return Err(Error::Contract("segment ids must be non-decreasing".into()));
            }
        }
        if self.token_ids.iter().filter(|&&t| t == SEP).count() > 2 {
            return Err(Error::Contract("more than two [SEP] tokens".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab_of(extra: &[&str]) -> Vocab {
        let mut t: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        t.extend(extra.iter().map(|s| s.to_string()));
        Vocab::from_tokens(t).unwrap()
    }

    #[test]
    fn build_small_corpus() {
        let v = Vocab::build(&["bug bug fix"], 100, 1).unwrap();
        assert!(v.id("bug").is_some());
        assert!(v.id("fix").is_some());
        assert_eq!(&v.tokens()[..5], &SPECIAL_TOKENS.map(String::from));
    }

    #[test]
    fn build_respects_bounds_and_errors() {
        assert!(Vocab::build(&["a b c"], 5, 1).is_err());
        assert!(Vocab::build(&["a b c"], 10, 0).is_err());
        assert!(matches!(Vocab::build::<&str>(&[], 10, 1), Err(Error::Data(_))));
        assert!(matches!(Vocab::build(&["   "], 10, 1), Err(Error::Data(_))));
        let v = Vocab::build(&["alpha beta gamma delta epsilon"], 8, 1).unwrap();
        assert_eq!(v.len(), 8);
    }

    #[test]
    fn min_frequency_filters_whole_words() {
        let v = Vocab::build(&["merge merge rebase"], 100, 2).unwrap();
        assert!(v.id("merge").is_some());
        assert!(v.id("rebase").is_none());
        // Still representable through character pieces.
        let ids = v.tokenize_word("rebase");
        assert!(!ids.contains(&UNK));
        assert_eq!(v.decode(&ids), "rebase");
    }

    #[test]
    fn build_is_deterministic_with_lexicographic_ties() {
        let a = Vocab::build(&["zeta alpha", "alpha zeta"], 100, 1).unwrap();
        let b = Vocab::build(&["zeta alpha", "alpha zeta"], 100, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.id("alpha").unwrap() < a.id("zeta").unwrap());
    }

    #[test]
    fn undecomposable_word_is_unk() {
        let v = vocab_of(&["bug"]);
        assert_eq!(v.tokenize_word("xyz"), vec![UNK]);
        let ex = v.encode_single("xyz", 6).unwrap();
        assert_eq!(ex.token_ids[..3], [CLS, UNK, SEP]);
    }

    #[test]
    fn greedy_longest_match() {
        let v = vocab_of(&["sent", "##iment", "sentiment"]);
        assert_eq!(v.tokenize_word("sentiment"), vec![v.id("sentiment").unwrap()]);
        let v = vocab_of(&["sent", "##iment"]);
        assert_eq!(v.tokenize_word("sentiment"), vec![v.id("sent").unwrap(), v.id("##iment").unwrap()]);
    }

    #[test]
    fn empty_text_encodes_to_framing() {
        let v = vocab_of(&["a"]);
        let ex = v.encode_single("", 5).unwrap();
        assert_eq!(ex.token_ids, vec![CLS, SEP, PAD, PAD, PAD]);
        assert_eq!(ex.attention_mask, vec![1, 1, 0, 0, 0]);
        assert!(v.encode_single("a", 2).is_err());
    }

    #[test]
    fn overlong_text_truncates_then_appends_sep() {
        let v = vocab_of(&["a"]);
        let ex = v.encode_single("a a a a a a a a a a", 6).unwrap();
        assert_eq!(ex.len(), 6);
        assert_eq!(ex.token_ids[5], SEP);
        assert!(ex.attention_mask.iter().all(|&m| m == 1));
    }

    #[test]
    fn pair_segments() {
        let v = vocab_of(&["a", "b"]);
        let ex = v.encode_pair("a", "b", 5).unwrap();
        assert_eq!(ex.segment_ids, vec![0, 0, 0, 1, 1]);
        assert!(ex.is_pair());
        let ex = v.encode_pair("a", "b", 8).unwrap();
        assert_eq!(ex.segment_ids, vec![0, 0, 0, 1, 1, 1, 1, 1]);
        assert_eq!(ex.attention_mask, vec![1, 1, 1, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn longest_first_truncation_balances_equal_inputs() {
        let v = vocab_of(&["a", "b"]);
        let long_a = "a ".repeat(20);
        let long_b = "b ".repeat(20);
        let ex = v.encode_pair(&long_a, &long_b, 13).unwrap();
        let a = ex.token_ids.iter().filter(|&&t| t == v.id("a").unwrap()).count();
        let b = ex.token_ids.iter().filter(|&&t| t == v.id("b").unwrap()).count();
        assert_eq!((a, b), (5, 5));
    }

    #[test]
    fn opaque_words_and_punctuation() {
        assert_eq!(split_words("Fix the BUG, please!"), vec!["fix", "the", "bug", ",", "please", "!"]);
        assert_eq!(
            split_words("see https://github.com/x/y and `foo::bar()`"),
            vec!["see", "https://github.com/x/y", "and", "`foo::bar()`"]
        );
    }

    #[test]
    fn vocab_file_round_trip_and_fingerprint() {
        let v = Vocab::build(&["the build is broken", "nice fix"], 50, 1).unwrap();
        let text = v.to_file_string();
        let w = Vocab::parse(&text).unwrap();
        assert_eq!(v, w);
        assert_eq!(v.fingerprint(), fnv1a(text.as_bytes()));
        assert!(Vocab::parse("[PAD]\n[UNK]\n").is_err());
        assert!(Vocab::parse("[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\na\na\n").is_err());
    }

    #[test]
    fn fnv1a_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    fn word() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["api", "bug", "fix", "merge", "crash", "docs", "great", "slow", "ok", "zzq"])
            .prop_map(String::from)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn pair_encoding_invariants(
            a in prop::collection::vec(word(), 0..12),
            b in prop::collection::vec(word(), 0..12),
            max_len in 5usize..20,
        ) {
            let v = Vocab::build(&["api bug fix merge crash docs great slow ok"], 40, 1).unwrap();
            let ex = v.encode_pair(&a.join(" "), &b.join(" "), max_len).unwrap();
            prop_assert_eq!(ex.len(), max_len);
            prop_assert!(ex.check().is_ok());
            prop_assert!(!ex.token_ids.contains(&MASK));
            let last_real = ex.real_len() - 1;
            for i in ex.real_len()..ex.len() {
                prop_assert_eq!(ex.segment_ids[i], ex.segment_ids[last_real]);
            }
            prop_assert_eq!(ex.clone(), v.encode_pair(&a.join(" "), &b.join(" "), max_len).unwrap());
        }

        #[test]
        fn word_segmentation_terminates_without_empty_pieces(w in "[a-z]{0,12}") {
            let v = Vocab::build(&["merge rebase commit"], 30, 1).unwrap();
            let ids = v.tokenize_word(&w);
            prop_assert!(ids.len() <= w.len());
            for id in ids {
                prop_assert!(!v.token(id).unwrap().is_empty());
            }
        }
    }
}
