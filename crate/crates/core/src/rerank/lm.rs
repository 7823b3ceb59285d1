//! Interpolated Witten-Bell n-gram language model.
//!
//! For a context `h` with shortened context `h'`:
//!
//! ```text
//! P(w | h) = (c(h, w) + T(h) * P(w | h')) / (c(h) + T(h))
//! ```
//!
//! where `c(h)` counts tokens seen after `h` and `T(h)` counts distinct
//! followers. Unseen contexts back off to `P(w | h')`. The empty context
//! interpolates with the uniform distribution over the vocabulary, which is
//! the training tokens plus `</s>` and `<unk>`. Contexts are clipped at the
//! sentence start rather than padded with repeated `<s>`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::write_atomic;
use crate::parser::ModelIoError;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const DEFAULT_ORDER: usize = 3;

const LM_FORMAT: &str = "topparse-ngram-lm";
const LM_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LmError {
    #[error("language model training data is empty")]
    EmptyCorpus,
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct ContextStats {
    total: u64,
    followers: HashMap<u32, u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NGramLm {
    order: usize,
    /// Token strings by id. Id 0 is `<s>`, 1 is `</s>`, 2 is `<unk>`.
    words: Vec<String>,
    ids: HashMap<String, u32>,
    contexts: HashMap<Vec<u32>, ContextStats>,
    /// Raw n-gram counts of every order, kept for the model file.
    ngrams: BTreeMap<Vec<u32>, u64>,
}

const BOS_ID: u32 = 0;
const EOS_ID: u32 = 1;
const UNK_ID: u32 = 2;

impl NGramLm {
    /// Trains on whitespace-free token sequences.
    pub fn train<S: AsRef<[String]>>(sequences: &[S], order: usize) -> Result<Self, LmError> {
        if order == 0 {
            return Err(LmError::ZeroOrder);
        }
        if sequences.is_empty() {
            return Err(LmError::EmptyCorpus);
        }
        let mut lm = NGramLm::empty(order);
        for seq in sequences {
            let mut ids = vec![BOS_ID];
            ids.extend(seq.as_ref().iter().map(|w| lm.intern(w)));
            ids.push(EOS_ID);
            for i in 1..ids.len() {
                for m in 0..order.min(i + 1) {
                    *lm.ngrams.entry(ids[i - m..=i].to_vec()).or_insert(0) += 1;
                }
            }
        }
        lm.rebuild_contexts();
        Ok(lm)
    }

    fn empty(order: usize) -> Self {
        let mut lm = NGramLm {
            order,
            words: Vec::new(),
            ids: HashMap::new(),
            contexts: HashMap::new(),
            ngrams: BTreeMap::new(),
        };
        for w in [BOS, EOS, UNK] {
            lm.intern(w);
        }
        lm
    }

    fn intern(&mut self, w: &str) -> u32 {
        if let Some(&id) = self.ids.get(w) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(w.to_string());
        self.ids.insert(w.to_string(), id);
        id
    }

    fn rebuild_contexts(&mut self) {
        self.contexts.clear();
        for (gram, &count) in &self.ngrams {
            let (word, context) = gram.split_last().expect("n-grams are non-empty");
            let stats = self.contexts.entry(context.to_vec()).or_default();
            stats.total += count;
            *stats.followers.entry(*word).or_insert(0) += count;
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Vocabulary size: training tokens plus `</s>` and `<unk>`.
    pub fn vocab_size(&self) -> usize {
        self.words.len() - 1
    }

    /// Predictable tokens, i.e. everything but `<s>`.
    pub fn vocab(&self) -> impl Iterator<Item = &str> {
        self.words[1..].iter().map(String::as_str)
    }

    fn id(&self, w: &str) -> u32 {
        self.ids.get(w).copied().unwrap_or(UNK_ID)
    }

    fn prob_ids(&self, word: u32, context: &[u32]) -> f64 {
        let lower = match context.split_first() {
            Some((_, rest)) => self.prob_ids(word, rest),
            None => 1.0 / self.vocab_size() as f64,
        };
        match self.contexts.get(context) {
            None => lower,
            Some(stats) => {
                let c = stats.followers.get(&word).copied().unwrap_or(0) as f64;
                let t = stats.followers.len() as f64;
                (c + t * lower) / (stats.total as f64 + t)
            }
        }
    }

    /// `P(word | context)`; only the last `order - 1` context tokens are used.
    pub fn prob(&self, word: &str, context: &[&str]) -> f64 {
        let keep = context.len().min(self.order - 1);
        let ctx: Vec<u32> = context[context.len() - keep..]
            .iter()
            .map(|w| self.id(w))
            .collect();
        self.prob_ids(self.id(word), &ctx)
    }

    /// Natural-log probability of `tokens` followed by `</s>`.
    pub fn log_prob(&self, tokens: &[String]) -> f64 {
        let mut ids = vec![BOS_ID];
        ids.extend(tokens.iter().map(|w| self.id(w)));
        ids.push(EOS_ID);
        (1..ids.len())
            .map(|i| {
                let start = i.saturating_sub(self.order - 1);
                self.prob_ids(ids[i], &ids[start..i]).ln()
            })
            .sum()
    }

    /// Per-token perplexity over `sequences`, counting each `</s>`.
    pub fn perplexity<S: AsRef<[String]>>(&self, sequences: &[S]) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for s in sequences {
            total += self.log_prob(s.as_ref());
            count += s.as_ref().len() + 1;
        }
        (-total / count as f64).exp()
    }

    /// Contexts seen in training, as token strings.
    pub fn observed_contexts(&self) -> Vec<Vec<&str>> {
        let mut out: Vec<Vec<&str>> = self
            .contexts
            .keys()
            .map(|c| c.iter().map(|&i| self.words[i as usize].as_str()).collect())
            .collect();
        out.sort();
        out
    }

    pub fn to_json(&self) -> String {
        let file = LmFile {
            format: LM_FORMAT.to_string(),
            version: LM_VERSION,
            order: self.order,
            ngrams: self
                .ngrams
                .iter()
                .map(|(g, &c)| {
                    let words: Vec<&str> =
                        g.iter().map(|&i| self.words[i as usize].as_str()).collect();
                    (words.join(" "), c)
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("LM serializes")
    }

    pub fn from_json(text: &str, path: &str) -> Result<Self, ModelIoError> {
        let file: LmFile = serde_json::from_str(text).map_err(|source| ModelIoError::Json {
            path: path.to_string(),
            source,
        })?;
        if file.format != LM_FORMAT || file.version != LM_VERSION {
            return Err(ModelIoError::Format {
                format: file.format,
                version: file.version,
            });
        }
        if file.order == 0 {
            return Err(ModelIoError::Inconsistent(
                "order must be at least 1".into(),
            ));
        }
        let mut lm = NGramLm::empty(file.order);
        for (gram, count) in &file.ngrams {
            let parts: Vec<&str> = gram.split(' ').collect();
            if parts.is_empty() || parts.len() > file.order || parts.iter().any(|p| p.is_empty()) {
                return Err(ModelIoError::Inconsistent(format!("bad n-gram `{gram}`")));
            }
            let ids: Vec<u32> = parts.iter().map(|p| lm.intern(p)).collect();
            lm.ngrams.insert(ids, *count);
        }
        lm.rebuild_contexts();
        Ok(lm)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelIoError> {
        write_atomic(path, self.to_json().as_bytes()).map_err(|source| ModelIoError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelIoError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelIoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        NGramLm::from_json(&text, &path.display().to_string())
    }
}

/// On-disk form: every n-gram of order 1..=`order` with its count,
/// tokens joined by single spaces.
#[derive(Serialize, Deserialize)]
struct LmFile {
    format: String,
    version: u32,
    order: usize,
    ngrams: BTreeMap<String, u64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seqs(lines: &[&str]) -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| l.split_whitespace().map(str::to_string).collect())
            .collect()
    }

    /// Bigram Witten-Bell values computed by hand for
    /// `a b`, `a c`, `b`.
    ///
    /// Vocabulary {a, b, c, </s>, <unk>}, |V| = 5.
    /// Unigram counts over predicted tokens: a 2, b 2, c 1, </s> 3; N = 8, T = 4.
    /// P1(w) = (c(w) + 4/5) / 12.
    /// Context <s>: followers a 2, b 1; N = 3, T = 2.
    /// Context a: followers b 1, c 1; N = 2, T = 2.
    /// Context b: followers </s> 2; N = 2, T = 1.
    #[test]
    fn bigram_hand_computed() {
        let lm = NGramLm::train(&seqs(&["a b", "a c", "b"]), 2).unwrap();
        assert_eq!(lm.vocab_size(), 5);
        let p1 = |c: f64| (c + 0.8) / 12.0;
        let cases: Vec<(&str, &str, f64)> = vec![
            ("a", BOS, (2.0 + 2.0 * p1(2.0)) / 5.0),
            ("b", BOS, (1.0 + 2.0 * p1(2.0)) / 5.0),
            ("c", BOS, (2.0 * p1(1.0)) / 5.0),
            ("b", "a", (1.0 + 2.0 * p1(2.0)) / 4.0),
            ("</s>", "a", (2.0 * p1(3.0)) / 4.0),
            ("</s>", "b", (2.0 + p1(3.0)) / 3.0),
            ("a", "b", p1(2.0) / 3.0),
            ("</s>", "c", (1.0 + p1(3.0)) / 2.0),
            // unseen context: back off to the unigram
            ("</s>", "zzz", p1(3.0)),
            ("zzz", "a", (2.0 * p1(0.0)) / 4.0),
        ];
        for (w, h, expected) in cases {
            let got = lm.prob(w, &[h]);
            assert!(
                (got - expected).abs() < 1e-9,
                "P({w}|{h}) = {got}, expected {expected}"
            );
        }
        let total = lm.log_prob(&seqs(&["a b"])[0]);
        let expected = ((2.0 + 2.0 * p1(2.0)) / 5.0f64).ln()
            + ((1.0 + 2.0 * p1(2.0)) / 4.0f64).ln()
            + ((2.0 + p1(3.0)) / 3.0f64).ln();
        assert!((total - expected).abs() < 1e-9);
    }

    #[test]
    fn normalized_for_every_context() {
        let data = seqs(&["a b c a", "b b a", "c a b c d", "a"]);
        for order in 1..=4 {
            let lm = NGramLm::train(&data, order).unwrap();
            let vocab: Vec<&str> = lm.vocab().collect();
            let mut contexts = lm.observed_contexts();
            contexts.push(vec!["never", "seen"]);
            for ctx in contexts {
                let sum: f64 = vocab.iter().map(|w| lm.prob(w, &ctx)).sum();
                assert!(
                    (sum - 1.0).abs() < 1e-9,
                    "order {order} context {ctx:?}: {sum}"
                );
            }
        }
    }

    #[test]
    fn degenerate_corpus() {
        let data = vec![seqs(&["x y z"])[0].clone(); 200];
        let lm = NGramLm::train(&data, 3).unwrap();
        let per_token = lm.log_prob(&data[0]) / 4.0;
        assert!(per_token > -0.02, "{per_token}");
    }

    #[test]
    fn fit_beats_uniform() {
        let data = seqs(&["a b c", "a b d", "a c", "b b c d"]);
        let lm = NGramLm::train(&data, 3).unwrap();
        assert!(lm.perplexity(&data) <= lm.vocab_size() as f64);
    }

    #[test]
    fn errors_and_round_trip() {
        assert_eq!(
            NGramLm::train::<Vec<String>>(&[], 3),
            Err(LmError::EmptyCorpus)
        );
        assert_eq!(NGramLm::train(&seqs(&["a"]), 0), Err(LmError::ZeroOrder));
        let lm = NGramLm::train(&seqs(&["a b c", "c b a", "a a"]), 3).unwrap();
        let back = NGramLm::from_json(&lm.to_json(), "mem").unwrap();
        let probe = seqs(&["a b a c q"])[0].clone();
        assert_eq!(back.log_prob(&probe), lm.log_prob(&probe));
        assert_eq!(back.to_json(), lm.to_json());
    }
}
