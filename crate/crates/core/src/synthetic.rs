//! Template-driven synthetic corpora with fully reachable gold pairs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Corpus, Split};
use crate::types::{GoldTriplet, Polarity, Sentence, Span};

/// Word lists the templates draw from. Entries may span several tokens.
#[derive(Debug, Clone)]
pub struct SyntheticVocab {
    pub aspects: Vec<String>,
    pub opinions: Vec<(String, Polarity)>,
}

impl Default for SyntheticVocab {
    fn default() -> Self {
        let aspects = [
            "food",
            "service",
            "staff",
            "battery life",
            "screen",
            "keyboard",
            "wine list",
            "gourmet food",
            "price",
            "atmosphere",
            "operating system",
            "delivery",
            "pasta",
            "sushi",
            "customer support",
            "touch pad",
        ];
        let opinions = [
            ("great", Polarity::Pos),
            ("delicious", Polarity::Pos),
            ("friendly", Polarity::Pos),
            ("not bad", Polarity::Pos),
            ("very fast", Polarity::Pos),
            ("excellent", Polarity::Pos),
            ("terrible", Polarity::Neg),
            ("slow", Polarity::Neg),
            ("rude", Polarity::Neg),
            ("overpriced", Polarity::Neg),
            ("not so welcoming", Polarity::Neg),
            ("too noisy", Polarity::Neg),
            ("okay", Polarity::Neu),
            ("average", Polarity::Neu),
            ("acceptable", Polarity::Neu),
            ("just fine", Polarity::Neu),
        ];
        SyntheticVocab {
            aspects: aspects.iter().map(|s| s.to_string()).collect(),
            opinions: opinions.iter().map(|(s, p)| (s.to_string(), *p)).collect(),
        }
    }
}

/// A sentence pattern. `{A0}`, `{A1}`, … are aspect slots, `{O0}`, … opinion
/// slots; `pairs` links (aspect slot, opinion slot).
#[derive(Debug, Clone)]
pub struct Template {
    pub pattern: String,
    pub pairs: Vec<(usize, usize)>,
}

impl Template {
    pub fn new(pattern: &str, pairs: &[(usize, usize)]) -> Template {
        Template {
            pattern: pattern.to_string(),
            pairs: pairs.to_vec(),
        }
    }
}

/// Patterns with 1-3 non-crossing pairs in both orientations.
pub fn default_templates() -> Vec<Template> {
    vec![
        Template::new("the {A0} is {O0} .", &[(0, 0)]),
        Template::new("{O0} {A0} .", &[(0, 0)]),
        Template::new("the {A0} was {O0} but the {A1} was {O1} .", &[(0, 0), (1, 1)]),
        Template::new("{O0} {A0} , but {O1} .", &[(0, 0), (0, 1)]),
        Template::new("i think the {A0} here is {O0} .", &[(0, 0)]),
        Template::new("{O0} {A0} and {O1} {A1} .", &[(0, 0), (1, 1)]),
        Template::new("we loved the {A0} , {O0} and {O1} .", &[(0, 0), (0, 1)]),
        Template::new("the {A0} and {A1} are {O0} .", &[(0, 0), (1, 0)]),
        Template::new("honestly the {A0} felt {O0} , the {A1} {O1} and the {A2} {O2} .", &[(0, 0), (1, 1), (2, 2)]),
        Template::new("{O0} {A0} but the {A1} is {O1} .", &[(0, 0), (1, 1)]),
    ]
}

struct Instance {
    tokens: Vec<String>,
    triplets: Vec<GoldTriplet>,
}

fn instantiate(rng: &mut ChaCha8Rng, vocab: &SyntheticVocab, template: &Template, offset: usize) -> Instance {
    let slots = |prefix: char| {
        template
            .pattern
            .split_whitespace()
            .filter(|w| w.starts_with('{') && w[1..].starts_with(prefix))
            .count()
    };
    let aspects: Vec<&String> = vocab.aspects.choose_multiple(rng, slots('A')).collect();
    let opinions: Vec<&(String, Polarity)> = vocab.opinions.choose_multiple(rng, slots('O')).collect();

    let mut tokens = Vec::new();
    let mut aspect_spans = vec![Span::single(0); aspects.len()];
    let mut opinion_spans = vec![Span::single(0); opinions.len()];
    for word in template.pattern.split_whitespace() {
        let slot = word
            .strip_prefix('{')
            .and_then(|w| w.strip_suffix('}'))
            .and_then(|w| Some((w.chars().next()?, w[1..].parse::<usize>().ok()?)));
        match slot {
            Some((kind, k)) => {
                let text = if kind == 'A' { aspects[k].as_str() } else { opinions[k].0.as_str() };
                let start = offset + tokens.len();
                tokens.extend(text.split_whitespace().map(str::to_string));
                let span = Span::new(start, offset + tokens.len() - 1);
                if kind == 'A' {
                    aspect_spans[k] = span;
                } else {
                    opinion_spans[k] = span;
                }
            }
            None => tokens.push(word.to_string()),
        }
    }
    let triplets = template
        .pairs
        .iter()
        .map(|&(a, o)| GoldTriplet::new(aspect_spans[a], opinion_spans[o], opinions[o].1))
        .collect();
    Instance { tokens, triplets }
}

fn build(id: String, parts: Vec<Instance>) -> Sentence {
    let mut tokens = Vec::new();
    let mut triplets = Vec::new();
    for p in parts {
        tokens.extend(p.tokens);
        triplets.extend(p.triplets);
    }
    Sentence::new(id, &tokens, triplets).expect("templates produce valid sentences")
}

/// Deterministic corpus of `count` template instances.
pub fn generate_synthetic(seed: u64, count: usize, vocab: &SyntheticVocab, templates: &[Template]) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentences = (0..count)
        .map(|i| {
            let template = &templates[rng.gen_range(0..templates.len())];
            build(format!("syn-{i}"), vec![instantiate(&mut rng, vocab, template, 0)])
        })
        .collect();
    Corpus::new("synthetic", Split::Train, sentences).expect("generated ids are unique")
}

/// [`generate_synthetic`] with the built-in vocabulary and templates.
pub fn default_synthetic(seed: u64, count: usize) -> Corpus {
    generate_synthetic(seed, count, &SyntheticVocab::default(), &default_templates())
}

/// One sentence of at least `min_len` tokens, built by chaining template
/// instances. Pairs never cross instance boundaries.
pub fn generate_long_sentence(seed: u64, id: &str, min_len: usize) -> Sentence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = SyntheticVocab::default();
    let templates = default_templates();
    let mut parts = Vec::new();
    let mut len = 0;
    while len < min_len.max(1) {
        let template = &templates[rng.gen_range(0..templates.len())];
        let inst = instantiate(&mut rng, &vocab, template, len);
        len += inst.tokens.len();
        parts.push(inst);
    }
    build(id.to_string(), parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::serialize_corpus;
    use crate::oracle::corpus_coverage;

    #[test]
    fn same_seed_same_bytes() {
        assert_eq!(
            serialize_corpus(&default_synthetic(7, 50)),
            serialize_corpus(&default_synthetic(7, 50))
        );
        assert_ne!(
            serialize_corpus(&default_synthetic(7, 50)),
            serialize_corpus(&default_synthetic(8, 50))
        );
    }

    #[test]
    fn zero_count_is_empty() {
        assert!(default_synthetic(1, 0).is_empty());
    }

    #[test]
    fn seed_seven_is_fully_covered() {
        let corpus = default_synthetic(7, 50);
        assert_eq!(corpus.len(), 50);
        let c = corpus_coverage(&corpus);
        assert_eq!(c.correct, c.gold);
        assert_eq!(c.recall(), 100.0);
        assert!(corpus.sentences.iter().all(|s| (1..=3).contains(&s.triplets().len())));
    }

    #[test]
    fn long_sentences_reach_length() {
        for len in [10, 57, 400] {
            let s = generate_long_sentence(3, "long", len);
            assert!(s.len() >= len && s.len() < len + 20);
        }
    }

    #[test]
    fn every_template_orientation_appears() {
        let corpus = default_synthetic(11, 200);
        let (mut left, mut right) = (false, false);
        for t in corpus.sentences.iter().flat_map(|s| s.triplets()) {
            if t.aspect.start > t.opinion.end {
                left = true;
            } else {
                right = true;
            }
        }
        assert!(left && right);
        assert!(corpus.sentences.iter().flat_map(|s| s.triplets()).any(|t| t.aspect.len() > 1));
    }
}
