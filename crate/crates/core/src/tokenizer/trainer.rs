//! Frequency-driven vocabulary training.
//!
//! Starts from every observed character (word-initial and `##` forms) and
//! repeatedly merges the most frequent adjacent piece pair, ties broken by the
//! lexicographically smallest merged string.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};

use super::{TokenizerConfig, Vocabulary, CONTINUATION_PREFIX, SPECIAL_TOKENS};
use crate::error::{Error, Result};

type Pair = (u32, u32);

/// Interned piece strings.
#[derive(Default)]
struct Symbols {
    strings: Vec<String>,
    index: HashMap<String, u32>,
}

impl Symbols {
    fn intern(&mut self, s: String) -> u32 {
        if let Some(&id) = self.index.get(&s) {
            return id;
        }
        let id = self.strings.len() as u32;
        self.index.insert(s.clone(), id);
        self.strings.push(s);
        id
    }

    fn merged(&self, (a, b): Pair) -> String {
        let right = &self.strings[b as usize];
        let right = right.strip_prefix(CONTINUATION_PREFIX).unwrap_or(right);
        format!("{}{}", self.strings[a as usize], right)
    }
}

fn word_counts<'a>(texts: &[&'a str], cfg: &TokenizerConfig) -> BTreeMap<&'a str, u64> {
    let mut counts = BTreeMap::new();
    for text in texts {
        for w in text.split_whitespace() {
            if w.chars().count() <= cfg.max_word_chars {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
    }
    counts
}

fn initial_alphabet(words: &BTreeMap<&str, u64>) -> BTreeSet<String> {
    let mut alphabet = BTreeSet::new();
    for w in words.keys() {
        for (i, c) in w.chars().enumerate() {
            alphabet.insert(if i == 0 {
                c.to_string()
            } else {
                format!("{CONTINUATION_PREFIX}{c}")
            });
        }
    }
    alphabet
}

/// Smallest `target_size` accepted for `texts`: the specials plus every
/// initial single-character piece.
pub fn min_target_size(texts: &[&str], cfg: &TokenizerConfig) -> usize {
    SPECIAL_TOKENS.len() + initial_alphabet(&word_counts(texts, cfg)).len()
}

/// Heap entry: highest count first, then smallest merged string, then
/// smallest (left, right) piece strings.
type HeapEntry = (u64, Reverse<(String, String, String)>, Pair);

fn heap_entry(symbols: &Symbols, count: u64, p: Pair) -> HeapEntry {
    let key = (
        symbols.merged(p),
        symbols.strings[p.0 as usize].clone(),
        symbols.strings[p.1 as usize].clone(),
    );
    (count, Reverse(key), p)
}

fn add_pair_counts(
    word: &[u32],
    freq: u64,
    word_idx: usize,
    counts: &mut HashMap<Pair, u64>,
    where_: &mut HashMap<Pair, HashSet<usize>>,
) {
    for w in word.windows(2) {
        let p = (w[0], w[1]);
        *counts.entry(p).or_insert(0) += freq;
        where_.entry(p).or_default().insert(word_idx);
    }
}

fn remove_pair_counts(word: &[u32], freq: u64, counts: &mut HashMap<Pair, u64>) {
    for w in word.windows(2) {
        let p = (w[0], w[1]);
        if let Some(c) = counts.get_mut(&p) {
            *c -= freq;
        }
    }
}

fn apply_merge(word: &[u32], pair: Pair, merged: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(word.len());
    let mut i = 0;
    while i < word.len() {
        if i + 1 < word.len() && (word[i], word[i + 1]) == pair {
            out.push(merged);
            i += 2;
        } else {
            out.push(word[i]);
            i += 1;
        }
    }
    out
}

/// Trains a vocabulary of at most `target_size` tokens over whitespace-split
/// words of `texts`. Words longer than `cfg.max_word_chars` are ignored since
/// they always encode as `[UNK]`.
pub fn train_vocabulary(
    texts: &[&str],
    target_size: usize,
    cfg: &TokenizerConfig,
) -> Result<Vocabulary> {
    let counts = word_counts(texts, cfg);
    let alphabet = initial_alphabet(&counts);
    let minimum = SPECIAL_TOKENS.len() + alphabet.len();
    if target_size < minimum {
        return Err(Error::InvalidConfig(format!(
            "target vocabulary size {target_size} is too small; the minimum for this corpus is {minimum}"
        )));
    }

    let mut symbols = Symbols::default();
    let mut vocab: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    let mut in_vocab: HashSet<String> = vocab.iter().cloned().collect();
    for piece in &alphabet {
        symbols.intern(piece.clone());
        vocab.push(piece.clone());
        in_vocab.insert(piece.clone());
    }

    let mut words: Vec<(Vec<u32>, u64)> = counts
        .iter()
        .map(|(w, &freq)| {
            let ids = w
                .chars()
                .enumerate()
                .map(|(i, c)| {
                    let s = if i == 0 {
                        c.to_string()
                    } else {
                        format!("{CONTINUATION_PREFIX}{c}")
                    };
                    symbols.index[&s]
                })
                .collect();
            (ids, freq)
        })
        .collect();

    let mut pair_counts: HashMap<Pair, u64> = HashMap::new();
    let mut pair_words: HashMap<Pair, HashSet<usize>> = HashMap::new();
    for (idx, (word, freq)) in words.iter().enumerate() {
        add_pair_counts(word, *freq, idx, &mut pair_counts, &mut pair_words);
    }
    let mut heap: BinaryHeap<HeapEntry> = pair_counts
        .iter()
        .map(|(&p, &c)| heap_entry(&symbols, c, p))
        .collect();

    while vocab.len() < target_size {
        let Some((count, Reverse((merged_str, _, _)), pair)) = heap.pop() else {
            break;
        };
        // stale entry: the pair's count changed since it was pushed
        if pair_counts.get(&pair) != Some(&count) {
            continue;
        }
        if count < 2 {
            break;
        }
        let merged = symbols.intern(merged_str.clone());
        if in_vocab.insert(merged_str.clone()) {
            vocab.push(merged_str);
        }

        let mut affected: Vec<usize> = pair_words
            .remove(&pair)
            .map(|s| s.into_iter().collect())
            .unwrap_or_default();
        affected.sort_unstable();
        let mut touched: HashSet<Pair> = HashSet::new();
        for idx in affected {
            let (word, freq) = &words[idx];
            if !word.windows(2).any(|w| (w[0], w[1]) == pair) {
                continue;
            }
            let freq = *freq;
            remove_pair_counts(word, freq, &mut pair_counts);
            touched.extend(word.windows(2).map(|w| (w[0], w[1])));
            let new_word = apply_merge(word, pair, merged);
            add_pair_counts(&new_word, freq, idx, &mut pair_counts, &mut pair_words);
            touched.extend(new_word.windows(2).map(|w| (w[0], w[1])));
            words[idx].0 = new_word;
        }
        pair_counts.remove(&pair);
        for p in touched {
            match pair_counts.get(&p) {
                Some(&c) if c > 0 && p != pair => heap.push(heap_entry(&symbols, c, p)),
                Some(0) => {
                    pair_counts.remove(&p);
                }
                _ => {}
            }
        }
    }

    Vocabulary::from_tokens(vocab)
}
