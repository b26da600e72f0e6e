//! Generated corpus where each aspect's polarity is set by one opinion word
//! within two positions of it. Other clauses in the same sentence carry
//! distractor opinions aimed at different aspects.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::ingest::{Polarity, TextInstance};

const ASPECTS: &[&str] = &[
    "food", "service", "staff", "pizza", "wine", "decor", "price", "menu", "music", "dessert", "waiter", "view", "pasta", "bar",
];
const CLAUSES_MIN: usize = 3;
const CLAUSES_MAX: usize = 5;
const POSITIVE: &[&str] = &["great", "delicious", "friendly", "excellent", "superb", "lovely"];
const NEUTRAL: &[&str] = &["average", "ordinary", "standard", "typical", "usual", "plain"];
const NEGATIVE: &[&str] = &["awful", "rude", "terrible", "bland", "horrible", "overpriced"];
const FILLERS: &[&str] = &[
    "the", "a", "was", "is", "we", "and", "really", "then", "our", "it", "at", "that", "with", "they", "also", "there",
];

fn opinion_words(p: Polarity) -> &'static [&'static str] {
    match p {
        Polarity::Positive => POSITIVE,
        Polarity::Neutral => NEUTRAL,
        Polarity::Negative => NEGATIVE,
    }
}

/// One generated example and the position of the opinion word that decides it.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticInstance {
    pub instance: TextInstance,
    pub opinion: usize,
}

struct Clause {
    aspect: usize,
    opinion: usize,
    label: Polarity,
}

/// `n` instances from one seed. Each sentence has 3 to 5 clauses; every
/// clause contributes one instance until `n` is reached.
pub fn generate(n: usize, seed: u64) -> Vec<SyntheticInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (words, clauses) = sentence(&mut rng);
        let text = words.join(" ");
        for c in clauses {
            if out.len() == n {
                break;
            }
            out.push(SyntheticInstance {
                instance: TextInstance {
                    words: words.clone(),
                    aspect_start: c.aspect,
                    aspect_end: c.aspect,
                    label: c.label,
                    raw_text: text.clone(),
                },
                opinion: c.opinion,
            });
        }
    }
    out
}

fn sentence<R: Rng>(rng: &mut R) -> (Vec<String>, Vec<Clause>) {
    let k = rng.gen_range(CLAUSES_MIN..=CLAUSES_MAX);
    let aspects: Vec<&str> = ASPECTS.choose_multiple(rng, k).copied().collect();
    let mut words: Vec<String> = Vec::new();
    let mut clauses = Vec::with_capacity(k);
    let filler = |rng: &mut R| FILLERS.choose(rng).unwrap().to_string();
    for (c, aspect) in aspects.into_iter().enumerate() {
        if c > 0 {
            // Keeps every other clause's opinion at least three tokens away.
            for _ in 0..rng.gen_range(2..=3) {
                words.push(filler(rng));
            }
        }
        for _ in 0..rng.gen_range(0..=1) {
            words.push(filler(rng));
        }
        let label = Polarity::ALL[rng.gen_range(0..3)];
        let opinion_word = opinion_words(label).choose(rng).unwrap().to_string();
        let gap = rng.gen_range(0..=1);
        let (a, o);
        if rng.gen_bool(0.5) {
            a = words.len();
            words.push(aspect.to_string());
            for _ in 0..gap {
                words.push(filler(rng));
            }
            o = words.len();
            words.push(opinion_word);
        } else {
            o = words.len();
            words.push(opinion_word);
            for _ in 0..gap {
                words.push(filler(rng));
            }
            a = words.len();
            words.push(aspect.to_string());
        }
        clauses.push(Clause {
            aspect: a,
            opinion: o,
            label,
        });
    }
    for _ in 0..rng.gen_range(0..=1) {
        words.push(filler(rng));
    }
    (words, clauses)
}

/// Render as JSON lines with character offsets, the format `parse_jsonl_str` reads.
pub fn to_jsonl(instances: &[SyntheticInstance]) -> String {
    let mut out = String::new();
    for s in instances {
        let inst = &s.instance;
        let start: usize = inst.words[..inst.aspect_start].iter().map(|w| w.chars().count() + 1).sum();
        let end = start + inst.words[inst.aspect_start].chars().count();
        let rec = json!({
            "text": inst.raw_text,
            "aspect_char_start": start,
            "aspect_char_end": end,
            "label": inst.label.as_str(),
        });
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_jsonl_str;

    #[test]
    fn opinion_is_close_and_distractors_are_far() {
        for s in generate(300, 3) {
            let inst = &s.instance;
            let d = s.opinion.abs_diff(inst.aspect_start);
            assert!((1..=2).contains(&d));
            assert!(opinion_words(inst.label).contains(&inst.words[s.opinion].as_str()));
            for (t, w) in inst.words.iter().enumerate() {
                let is_opinion = Polarity::ALL.iter().any(|&p| opinion_words(p).contains(&w.as_str()));
                if is_opinion && t != s.opinion {
                    assert!(t.abs_diff(inst.aspect_start) >= 3, "{:?}", inst.words);
                }
            }
        }
    }

    #[test]
    fn deterministic_and_balanced() {
        let a = generate(500, 9);
        assert_eq!(a, generate(500, 9));
        assert_ne!(a, generate(500, 10));
        for p in Polarity::ALL {
            let c = a.iter().filter(|s| s.instance.label == p).count();
            assert!(c > 120, "{p}: {c}");
        }
    }

    #[test]
    fn jsonl_round_trips_through_parser() {
        let gen = generate(40, 1);
        let corpus = parse_jsonl_str(&to_jsonl(&gen), "synthetic").unwrap();
        let parsed: Vec<TextInstance> = corpus.instances;
        assert_eq!(parsed.len(), 40);
        for (p, s) in parsed.iter().zip(&gen) {
            assert_eq!(p, &s.instance);
        }
    }
}
