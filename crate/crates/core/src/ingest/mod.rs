//! Corpus parsing, tokenization, vocabulary, word vectors and the train/dev split.

mod embeddings;
mod parse;
mod tokenize;
mod vocab;

pub use embeddings::{load_embeddings, EmbeddingMatrix, RowSource};
pub use parse::{parse_corpus, parse_jsonl_str, parse_semeval_xml_str, Corpus, CorpusFormat, DropReport};
pub use tokenize::{align_span, tokenize, Token};
pub use vocab::{Vocabulary, PAD_ID, UNK_ID};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{location}: {message}")]
    Parse { location: String, message: String },
    #[error("{path}:{line}: expected {expected} vector components, found {found}")]
    VectorWidth {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
}

/// Sentiment label. The order (positive, neutral, negative) is fixed everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Neutral,
    Negative,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Positive, Polarity::Neutral, Polarity::Negative];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Neutral => "neutral",
            Polarity::Negative => "negative",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "positive" => Ok(Polarity::Positive),
            "neutral" => Ok(Polarity::Neutral),
            "negative" => Ok(Polarity::Negative),
            other => Err(format!("unknown polarity `{other}`")),
        }
    }
}

/// A parsed (sentence, aspect span, polarity) example, before vocabulary lookup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextInstance {
    pub words: Vec<String>,
    /// First aspect token, 0-based.
    pub aspect_start: usize,
    /// Last aspect token, inclusive.
    pub aspect_end: usize,
    pub label: Polarity,
    pub raw_text: String,
}

/// One classification example with token ids; `aspect_start <= aspect_end < tokens.len()`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AspectInstance {
    pub tokens: Vec<usize>,
    pub aspect_start: usize,
    pub aspect_end: usize,
    pub label: Polarity,
    pub raw_text: String,
}

impl AspectInstance {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn in_aspect(&self, t: usize) -> bool {
        (self.aspect_start..=self.aspect_end).contains(&t)
    }
}

/// Per-polarity counts in (positive, neutral, negative) order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolarityCounts {
    pub positive: usize,
    pub neutral: usize,
    pub negative: usize,
}

impl PolarityCounts {
    pub fn of<'a>(labels: impl IntoIterator<Item = &'a Polarity>) -> Self {
        let mut c = Self::default();
        for l in labels {
            match l {
                Polarity::Positive => c.positive += 1,
                Polarity::Neutral => c.neutral += 1,
                Polarity::Negative => c.negative += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.positive + self.neutral + self.negative
    }
}

/// Hold out a uniformly random sixth of `instances` as a development set.
///
/// Both halves keep the input order. Fewer than six instances still yield a
/// single dev instance.
pub fn split_train_dev<T>(instances: Vec<T>, seed: u64) -> (Vec<T>, Vec<T>) {
    let n = instances.len();
    if n == 0 {
        return (instances, Vec::new());
    }
    let mut dev_size = n / 6;
    if n < 6 {
        log::warn!("only {n} instances available; holding out 1 for dev");
        dev_size = 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_dev = vec![false; n];
    for i in sample(&mut rng, n, dev_size) {
        is_dev[i] = true;
    }
    let mut train = Vec::with_capacity(n - dev_size);
    let mut dev = Vec::with_capacity(dev_size);
    for (item, dev_flag) in instances.into_iter().zip(is_dev) {
        if dev_flag {
            dev.push(item);
        } else {
            train.push(item);
        }
    }
    (train, dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn split_sizes_and_determinism() {
        let items: Vec<usize> = (0..3001).collect();
        let (train, dev) = split_train_dev(items.clone(), 7);
        assert_eq!(dev.len(), 500);
        assert_eq!(train.len(), 2501);
        let (train2, dev2) = split_train_dev(items, 7);
        assert_eq!(train, train2);
        assert_eq!(dev, dev2);
    }

    #[test]
    fn tiny_split_keeps_one_dev() {
        let (train, dev) = split_train_dev(vec![1, 2, 3], 0);
        assert_eq!(dev.len(), 1);
        assert_eq!(train.len(), 2);
        let (train, dev) = split_train_dev(Vec::<u8>::new(), 0);
        assert!(train.is_empty() && dev.is_empty());
    }

    #[test]
    fn polarity_order() {
        assert_eq!(Polarity::ALL.map(Polarity::index), [0, 1, 2]);
        assert_eq!("Negative".parse::<Polarity>().unwrap(), Polarity::Negative);
        assert!("conflict".parse::<Polarity>().is_err());
    }

    proptest! {
        #[test]
        fn split_is_partition(n in 0usize..200, seed in any::<u64>()) {
            let items: Vec<usize> = (0..n).collect();
            let (train, dev) = split_train_dev(items, seed);
            let mut all: Vec<usize> = train.iter().chain(&dev).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            if n >= 6 {
                prop_assert_eq!(dev.len(), n / 6);
            }
        }
    }
}
