//! Deterministic synthetic text corpus for the toy model.
//!
//! Lines are built from a small template grammar so the byte-level model has
//! real regularities to learn. Line lengths straddle the default 100–500
//! character filter.

use crate::rng::SeededRng;

const SUBJECTS: &[&str] = &[
    "the river", "a small village", "the old library", "our research group",
    "the northern railway", "a local farmer", "the city council", "the museum",
    "an early settler", "the harbour master", "the orchestra", "a young engineer",
    "the weather station", "the university", "a travelling merchant", "the bridge",
];

const VERBS: &[&str] = &[
    "described", "built", "visited", "recorded", "replaced", "supported",
    "crossed", "measured", "opened", "restored", "studied", "announced",
    "protected", "designed", "surveyed", "connected",
];

const OBJECTS: &[&str] = &[
    "the eastern valley", "a new canal", "several wooden houses", "the first map of the region",
    "a series of concerts", "the stone tower", "the annual harvest", "a narrow mountain pass",
    "the public gardens", "an iron foundry", "the coastal road", "a collection of letters",
    "the market square", "a steam engine", "the parish church", "the southern border",
];

const TAILS: &[&str] = &[
    "during the long winter", "after the war", "in the early nineteenth century",
    "with help from the county", "despite heavy rain", "for the first time",
    "before the election", "under difficult conditions", "at the request of the king",
    "over several decades", "in a single season", "without much support",
];

const CONNECTIVES: &[&str] = &["Later,", "In addition,", "However,", "As a result,", "Meanwhile,"];

fn pick<'a>(rng: &mut SeededRng, items: &[&'a str]) -> &'a str {
    items[rng.below(items.len() as u64) as usize]
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn sentence(rng: &mut SeededRng, first: bool) -> String {
    let subject = pick(rng, SUBJECTS);
    let body = format!(
        "{} {} {} {}.",
        subject,
        pick(rng, VERBS),
        pick(rng, OBJECTS),
        pick(rng, TAILS)
    );
    if first || rng.below(2) == 0 {
        capitalize(&body)
    } else {
        format!("{} {}", pick(rng, CONNECTIVES), body)
    }
}

/// `n` lines of template text; each line has 1–8 sentences.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut rng = SeededRng::new(seed);
    (0..n)
        .map(|_| {
            let sentences = 1 + rng.below(8) as usize;
            (0..sentences)
                .map(|i| sentence(&mut rng, i == 0))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::{filter_sequences, FilterSpec};

    #[test]
    fn deterministic() {
        assert_eq!(synthetic_corpus(20, 1), synthetic_corpus(20, 1));
        assert_ne!(synthetic_corpus(20, 1), synthetic_corpus(20, 2));
    }

    #[test]
    fn straddles_default_filter() {
        let corpus = synthetic_corpus(200, 5);
        let kept = filter_sequences(&corpus, &FilterSpec::default());
        assert!(!kept.is_empty());
        assert!(kept.len() < corpus.len());
    }
}
