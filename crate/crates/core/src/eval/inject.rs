//! Vocabulary drift: swapping action words for synonyms in test sequences.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SynonymLexicon;
use crate::error::{Error, Result};
use crate::logs::{LogSequence, WILDCARD};
use crate::model::init_rng;

pub const ACTION_WORDS: usize = 10;
pub const INJECT_STREAM: u64 = 30;
pub const DEFAULT_RATES: [f64; 7] = [0.01, 0.02, 0.03, 0.05, 0.10, 0.20, 0.30];

pub const DEFAULT_STOPLIST: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "in", "is", "it", "of",
    "on", "or", "the", "to", "was", "with", "INFO", "WARN", "ERROR", "DEBUG", "FATAL",
];

/// The ten most frequent purely alphabetic tokens outside `stoplist`,
/// ties broken lexicographically.
pub fn pick_action_words<S: AsRef<str>>(
    train_texts: &[S],
    stoplist: &[&str],
) -> Result<Vec<String>> {
    if train_texts.is_empty() {
        return Err(Error::config(
            "cannot pick action words from an empty corpus",
        ));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for text in train_texts {
        for tok in text.as_ref().split_whitespace() {
            if tok != WILDCARD && tok.chars().all(char::is_alphabetic) && !stoplist.contains(&tok) {
                *counts.entry(tok).or_default() += 1;
            }
        }
    }
    if counts.len() < ACTION_WORDS {
        return Err(Error::config(format!(
            "only {} candidate action words in the corpus; pass a manual list of {ACTION_WORDS}",
            counts.len()
        )));
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(ranked
        .into_iter()
        .take(ACTION_WORDS)
        .map(|(t, _)| t.to_string())
        .collect())
}

/// A manual list if given (used verbatim), otherwise the frequency pick.
pub fn resolve_action_words<S: AsRef<str>>(
    manual: Option<&[String]>,
    train_texts: &[S],
    stoplist: &[&str],
) -> Result<Vec<String>> {
    match manual {
        Some(words) => Ok(words.to_vec()),
        None => pick_action_words(train_texts, stoplist),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub sequences: Vec<LogSequence>,
    /// Indices of perturbed sequences, ascending.
    pub perturbed: Vec<usize>,
}

fn contains_any(seq: &LogSequence, words: &[String]) -> bool {
    seq.events.iter().any(|e| {
        e.template
            .split_whitespace()
            .any(|t| words.iter().any(|w| w == t))
    })
}

/// Perturbs exactly `round(rate * test.len())` sequences.
///
/// Only sequences holding at least one action word are candidates, so every
/// selected sequence really changes. In each, every action-word occurrence is
/// replaced by one of its synonyms, drawn uniformly per occurrence. Labels
/// and order are kept.
pub fn inject_unstable(
    test: &[LogSequence],
    lexicon: &SynonymLexicon,
    action_words: &[String],
    rate: f64,
    seed: u64,
) -> Result<Injection> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::config(format!(
            "injection rate must be in [0, 1], got {rate}"
        )));
    }
    if action_words.len() != ACTION_WORDS {
        return Err(Error::config(format!(
            "expected {ACTION_WORDS} action words, got {}",
            action_words.len()
        )));
    }
    if let Some(w) = action_words.iter().find(|w| !lexicon.contains(w)) {
        return Err(Error::config(format!(
            "action word `{w}` is not in the lexicon"
        )));
    }
    let k = (rate * test.len() as f64).round() as usize;
    let mut sequences = test.to_vec();
    if k == 0 {
        return Ok(Injection {
            sequences,
            perturbed: Vec::new(),
        });
    }
    let eligible: Vec<usize> = (0..test.len())
        .filter(|&i| contains_any(&test[i], action_words))
        .collect();
    if eligible.len() < k {
        return Err(Error::config(format!(
            "rate {rate} needs {k} sequences with an action word, only {} have one",
            eligible.len()
        )));
    }
    let mut rng = init_rng(seed, INJECT_STREAM);
    let mut perturbed: Vec<usize> = sample(&mut rng, eligible.len(), k)
        .into_iter()
        .map(|j| eligible[j])
        .collect();
    perturbed.sort_unstable();
    for &i in &perturbed {
        for ev in &mut sequences[i].events {
            let mut changed = false;
            let toks: Vec<&str> = ev
                .template
                .split_whitespace()
                .map(|t| {
                    match lexicon
                        .get(t)
                        .filter(|_| action_words.iter().any(|w| w == t))
                    {
                        Some(syns) => {
                            changed = true;
                            syns[rng.random_range(0..syns.len())].as_str()
                        }
                        None => t,
                    }
                })
                .collect();
            if changed {
                ev.template = toks.join(" ");
            }
        }
    }
    Ok(Injection {
        sequences,
        perturbed,
    })
}
