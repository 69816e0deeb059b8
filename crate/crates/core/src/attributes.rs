//! Target-attribute selection from caption phrase frequencies.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Placeholder substituted by [`render_prompts`].
pub const PLACEHOLDER: &str = "{attribute}";

pub const DEFAULT_TEMPLATE: &str = "A photo of {attribute}";

/// Default attribute count for an evaluation.
pub const DEFAULT_N_ATTRIBUTES: usize = 20;

/// Stop words used by the fallback tokenizer when no stoplist is supplied.
pub const DEFAULT_STOPLIST: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "have", "her", "his",
    "in", "is", "it", "its", "of", "on", "or", "that", "the", "their", "there", "this", "to",
    "two", "up", "very", "while", "with",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttributeError {
    #[error("no input records or phrases")]
    EmptyInput,
    #[error("template must contain {PLACEHOLDER} exactly once: {0:?}")]
    BadTemplate(String),
    #[error("caption record has an empty id")]
    EmptyId,
    #[error("caption record {0:?} has an empty phrase")]
    EmptyPhrase(String),
    #[error("duplicate attribute phrase {0:?}")]
    DuplicatePhrase(String),
    #[error("attribute {0:?} has a zero count")]
    ZeroCount(String),
    #[error("attribute phrases are not in descending count order at position {0}")]
    Unsorted(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub id: String,
    pub caption: String,
    /// Pre-extracted attribute phrases. Empty means "tokenize the caption".
    #[serde(default)]
    pub phrases: Vec<String>,
}

impl CaptionRecord {
    pub fn validate(&self) -> Result<(), AttributeError> {
        if self.id.is_empty() {
            return Err(AttributeError::EmptyId);
        }
        if self.phrases.iter().any(String::is_empty) {
            return Err(AttributeError::EmptyPhrase(self.id.clone()));
        }
        Ok(())
    }
}

/// Ordered target attributes with their caption counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSet {
    phrases: Vec<String>,
    counts: Vec<u64>,
    template: String,
}

impl AttributeSet {
    /// Phrases must be unique, counts positive, and the order descending by
    /// count with ties in lexicographic order.
    pub fn new(phrases: Vec<String>, counts: Vec<u64>, template: String) -> Result<Self, AttributeError> {
        if phrases.is_empty() || phrases.len() != counts.len() {
            return Err(AttributeError::EmptyInput);
        }
        let mut seen = BTreeSet::new();
        for (p, &c) in phrases.iter().zip(&counts) {
            if p.is_empty() {
                return Err(AttributeError::EmptyPhrase(p.clone()));
            }
            if !seen.insert(p.as_str()) {
                return Err(AttributeError::DuplicatePhrase(p.clone()));
            }
            if c == 0 {
                return Err(AttributeError::ZeroCount(p.clone()));
            }
        }
        for i in 1..phrases.len() {
            let ordered = counts[i - 1] > counts[i] || (counts[i - 1] == counts[i] && phrases[i - 1] < phrases[i]);
            if !ordered {
                return Err(AttributeError::Unsorted(i));
            }
        }
        check_template(&template)?;
        Ok(Self { phrases, counts, template })
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

/// Result of [`select_top_attributes`]; `underfull` is set when fewer than
/// the requested number of distinct phrases existed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub attributes: AttributeSet,
    pub underfull: bool,
}

/// Counts each distinct phrase once per caption.
///
/// Records without pre-extracted phrases fall back to lowercased,
/// punctuation-stripped unigrams plus bigrams of adjacent non-stop tokens.
pub fn count_phrases(
    captions: &[CaptionRecord],
    stoplist: &BTreeSet<String>,
) -> Result<BTreeMap<String, u64>, AttributeError> {
    if captions.is_empty() {
        return Err(AttributeError::EmptyInput);
    }
    let mut freq = BTreeMap::new();
    for rec in captions {
        rec.validate()?;
        let phrases: BTreeSet<String> = if rec.phrases.is_empty() {
            fallback_phrases(&rec.caption, stoplist)
        } else {
            rec.phrases.iter().map(|p| normalize_phrase(p)).filter(|p| !p.is_empty()).collect()
        };
        for p in phrases {
            if stoplist.contains(&p) {
                continue;
            }
            *freq.entry(p).or_insert(0) += 1;
        }
    }
    Ok(freq)
}

/// Lowercases, turns punctuation into whitespace and collapses runs of
/// whitespace.
pub fn normalize_phrase(text: &str) -> String {
    tokens(text).collect::<Vec<_>>().join(" ")
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '-'))
        .map(|t| t.trim_matches(|c| c == '\'' || c == '-').to_lowercase())
        .filter(|t| !t.is_empty())
}

fn fallback_phrases(caption: &str, stoplist: &BTreeSet<String>) -> BTreeSet<String> {
    let toks: Vec<String> = tokens(caption).collect();
    let keep: Vec<bool> = toks.iter().map(|t| !stoplist.contains(t)).collect();
    let mut out = BTreeSet::new();
    for (i, t) in toks.iter().enumerate() {
        if keep[i] {
            out.insert(t.clone());
        }
        if i + 1 < toks.len() && keep[i] && keep[i + 1] {
            let mut bigram = t.clone();
            bigram.push(' ');
            bigram.push_str(&toks[i + 1]);
            out.insert(bigram);
        }
    }
    out
}

/// The `n` most frequent phrases, descending by count, ties lexicographic.
pub fn select_top_attributes(
    freq: &BTreeMap<String, u64>,
    n: usize,
    template: &str,
) -> Result<Selection, AttributeError> {
    let mut ranked: Vec<(&String, u64)> = freq.iter().filter(|(_, &c)| c > 0).map(|(p, &c)| (p, c)).collect();
    if ranked.is_empty() || n == 0 {
        return Err(AttributeError::EmptyInput);
    }
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let underfull = ranked.len() < n;
    ranked.truncate(n);
    let phrases = ranked.iter().map(|(p, _)| (*p).clone()).collect();
    let counts = ranked.iter().map(|(_, c)| *c).collect();
    let attributes = AttributeSet::new(phrases, counts, template.to_string())?;
    Ok(Selection { attributes, underfull })
}

fn check_template(template: &str) -> Result<(), AttributeError> {
    if template.matches(PLACEHOLDER).count() != 1 {
        return Err(AttributeError::BadTemplate(template.to_string()));
    }
    Ok(())
}

/// One prompt per attribute with the placeholder substituted.
pub fn render_prompts(attrs: &AttributeSet) -> Result<Vec<String>, AttributeError> {
    check_template(&attrs.template)?;
    Ok(attrs.phrases.iter().map(|p| attrs.template.replacen(PLACEHOLDER, p, 1)).collect())
}

pub fn default_stoplist() -> BTreeSet<String> {
    DEFAULT_STOPLIST.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn rec(id: &str, caption: &str, phrases: &[&str]) -> CaptionRecord {
        CaptionRecord {
            id: id.to_string(),
            caption: caption.to_string(),
            phrases: phrases.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn stop(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn fallback_hand_count() {
        let caps = [rec("1", "a man with a hat", &[]), rec("2", "a man smiling", &[])];
        let f = count_phrases(&caps, &stop(&["a", "with"])).unwrap();
        assert_eq!(f["man"], 2);
        assert_eq!(f["hat"], 1);
        assert_eq!(f["smiling"], 1);
        // the only adjacent non-stop pair
        assert_eq!(f["man smiling"], 1);
        assert_eq!(f.len(), 4);
    }

    #[test]
    fn phrases_counted_once_per_caption() {
        let caps = [rec("1", "ignored", &["woman", "woman"])];
        let f = count_phrases(&caps, &BTreeSet::new()).unwrap();
        assert_eq!(f["woman"], 1);
        assert_eq!(f.len(), 1);
    }

    #[test]
    fn punctuation_and_case_are_normalized() {
        let caps = [rec("1", "A Man, smiling!", &[]), rec("2", "x", &["Blonde  Hair"])];
        let f = count_phrases(&caps, &stop(&["a"])).unwrap();
        assert_eq!(f["man"], 1);
        assert_eq!(f["man smiling"], 1);
        assert_eq!(f["blonde hair"], 1);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert_eq!(count_phrases(&[], &BTreeSet::new()), Err(AttributeError::EmptyInput));
        assert_eq!(
            count_phrases(&[rec("", "c", &[])], &BTreeSet::new()),
            Err(AttributeError::EmptyId)
        );
        assert_eq!(
            select_top_attributes(&BTreeMap::new(), 3, DEFAULT_TEMPLATE).unwrap_err(),
            AttributeError::EmptyInput
        );
    }

    #[test]
    fn planted_frequencies_are_recovered() {
        use rand::{Rng, SeedableRng};
        let vocab = ["beard", "hat", "smile", "glasses", "necklace"];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut planted = BTreeMap::new();
        let caps: Vec<CaptionRecord> = (0..1000)
            .map(|i| {
                let phrases: Vec<String> = vocab
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| rng.random_bool(0.15 + 0.15 * *k as f64))
                    .map(|(_, w)| w.to_string())
                    .collect();
                for p in &phrases {
                    *planted.entry(p.clone()).or_insert(0u64) += 1;
                }
                let mut phrases = phrases;
                if phrases.is_empty() {
                    phrases.push("background".to_string());
                    *planted.entry("background".to_string()).or_insert(0u64) += 1;
                }
                // duplicates must not inflate counts
                let dup = phrases[0].clone();
                phrases.push(dup);
                CaptionRecord { id: format!("img{i}"), caption: String::new(), phrases }
            })
            .collect();
        let f = count_phrases(&caps, &BTreeSet::new()).unwrap();
        assert_eq!(f, planted);
    }

    #[test]
    fn top_attributes_follow_caption_frequency() {
        let freq: BTreeMap<String, u64> =
            [("man", 20262), ("woman", 9352), ("he", 8212)].iter().map(|(p, c)| (p.to_string(), *c)).collect();
        let sel = select_top_attributes(&freq, 2, DEFAULT_TEMPLATE).unwrap();
        assert_eq!(sel.attributes.phrases(), &["man".to_string(), "woman".to_string()]);
        assert_eq!(sel.attributes.counts(), &[20262, 9352]);
        assert!(!sel.underfull);
    }

    #[test]
    fn ties_break_lexicographically() {
        let freq: BTreeMap<String, u64> = [("b", 5), ("a", 5)].iter().map(|(p, c)| (p.to_string(), *c)).collect();
        let sel = select_top_attributes(&freq, 1, DEFAULT_TEMPLATE).unwrap();
        assert_eq!(sel.attributes.phrases(), &["a".to_string()]);
    }

    #[test]
    fn underfull_selection_warns() {
        let freq: BTreeMap<String, u64> =
            [("x", 3), ("y", 2), ("z", 1)].iter().map(|(p, c)| (p.to_string(), *c)).collect();
        let sel = select_top_attributes(&freq, 10, DEFAULT_TEMPLATE).unwrap();
        assert_eq!(sel.attributes.len(), 3);
        assert!(sel.underfull);
    }

    #[test]
    fn prompts_substitute_the_placeholder() {
        let a = AttributeSet::new(vec!["beard".into()], vec![1], DEFAULT_TEMPLATE.into()).unwrap();
        assert_eq!(render_prompts(&a).unwrap(), vec!["A photo of beard".to_string()]);
        let a = AttributeSet::new(vec!["x".into()], vec![1], "{attribute}".into()).unwrap();
        assert_eq!(render_prompts(&a).unwrap(), vec!["x".to_string()]);
        assert!(matches!(
            AttributeSet::new(vec!["x".into()], vec![1], "A photo".into()),
            Err(AttributeError::BadTemplate(_))
        ));
        assert!(matches!(
            AttributeSet::new(vec!["x".into()], vec![1], "{attribute} {attribute}".into()),
            Err(AttributeError::BadTemplate(_))
        ));
    }

    proptest::proptest! {
        #[test]
        fn selection_dominates_and_is_order_invariant(
            counts in proptest::collection::btree_map("[a-f]{1,3}", 1u64..50, 1..30),
            n in 1usize..10,
        ) {
            let sel = select_top_attributes(&counts, n, DEFAULT_TEMPLATE).unwrap();
            let chosen: BTreeSet<&String> = sel.attributes.phrases().iter().collect();
            let min_chosen = *sel.attributes.counts().iter().min().unwrap();
            for (p, &c) in &counts {
                if !chosen.contains(p) {
                    proptest::prop_assert!(c <= min_chosen);
                }
            }
            let caps: Vec<CaptionRecord> = counts.iter().enumerate().flat_map(|(i, (p, &c))| {
                (0..c).map(move |j| CaptionRecord { id: format!("{i}-{j}"), caption: String::new(), phrases: vec![p.clone()] })
            }).collect();
            let mut rev = caps.clone();
            rev.reverse();
            let stop = BTreeSet::new();
            proptest::prop_assert_eq!(count_phrases(&caps, &stop).unwrap(), count_phrases(&rev, &stop).unwrap());
        }
    }
}
