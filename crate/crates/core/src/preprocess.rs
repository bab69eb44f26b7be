//! Noisy social-media text cleaning.
//!
//! Steps, in order: link/mention/hashtag removal with whitespace collapse,
//! emoji replacement by affect words, lowercasing with stop-word removal, and
//! noise filtering (no alphabetic characters, or a whole-message filler).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{Corpus, LabeledTweet};
use crate::error::{Error, Result};

const DEFAULT_EMOJI_LEXICON: &str = include_str!("../data/emoji_lexicon.json");
const DEFAULT_STOP_WORDS: &str = include_str!("../data/stop_words.txt");
const DEFAULT_FILLERS: &str = include_str!("../data/fillers.txt");

/// Fillers that every [`FillerList`] contains.
pub const REQUIRED_FILLERS: [&str; 4] = ["ok", "hmm", "k", "haan"];

fn is_variation_selector(c: char) -> bool {
    matches!(c, '\u{FE0E}' | '\u{FE0F}')
}

/// Emoji and pictographic symbols (including joiners, variation selectors,
/// skin-tone modifiers and tag characters). Never true for alphabetic characters.
pub fn is_pictographic(c: char) -> bool {
    let in_range = matches!(c as u32,
        0x1F000..=0x1FAFF
        | 0x2600..=0x27BF
        | 0x2300..=0x23FF
        | 0x2B00..=0x2BFF
        | 0xFE00..=0xFE0F
        | 0x200D
        | 0x20E3
        | 0xE0020..=0xE007F
        | 0x3030 | 0x303D | 0x3297 | 0x3299);
    in_range && !c.is_alphabetic()
}

/// Emoji sequence to lowercase affect word. Keys are stored without
/// variation selectors so `❤` and `❤️` match the same entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EmojiLexicon {
    #[serde(flatten)]
    map: BTreeMap<String, String>,
    /// Keys ordered longest first for longest-match lookup.
    #[serde(skip)]
    keys_by_len: Vec<String>,
}

impl EmojiLexicon {
    pub fn new(entries: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (emoji, token) in entries {
            let key: String = emoji
                .chars()
                .filter(|&c| !is_variation_selector(c))
                .collect();
            if key.is_empty() {
                return Err(Error::InvalidConfig(format!("empty emoji key {emoji:?}")));
            }
            if token.is_empty()
                || !token
                    .chars()
                    .all(|c| c.is_alphabetic() && !c.is_uppercase())
            {
                return Err(Error::InvalidConfig(format!(
                    "affect token {token:?} for {emoji:?} must be a non-empty lowercase word"
                )));
            }
            map.insert(key, token);
        }
        let mut keys_by_len: Vec<String> = map.keys().cloned().collect();
        keys_by_len.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        Ok(EmojiLexicon { map, keys_by_len })
    }

    pub fn empty() -> Self {
        EmojiLexicon {
            map: BTreeMap::new(),
            keys_by_len: Vec::new(),
        }
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let entries: BTreeMap<String, String> = serde_json::from_str(raw)?;
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw)
    }

    pub fn get(&self, emoji: &str) -> Option<&str> {
        let key: String = emoji
            .chars()
            .filter(|&c| !is_variation_selector(c))
            .collect();
        self.map.get(&key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    fn longest_match(&self, rest: &str) -> Option<(&str, &str)> {
        self.keys_by_len
            .iter()
            .find(|k| rest.starts_with(k.as_str()))
            .map(|k| (k.as_str(), self.map[k].as_str()))
    }
}

impl Default for EmojiLexicon {
    fn default() -> Self {
        Self::from_json(DEFAULT_EMOJI_LEXICON).expect("shipped emoji lexicon is valid")
    }
}

/// One entry per line; blank lines and `#` comments skipped.
fn parse_word_list(raw: &str) -> Vec<String> {
    raw.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StopWordList(BTreeSet<String>);

impl StopWordList {
    pub fn new(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for w in words {
            if w.is_empty() || w.chars().any(|c| c.is_whitespace() || c.is_uppercase()) {
                return Err(Error::InvalidConfig(format!(
                    "stop word {w:?} must be lowercase without whitespace"
                )));
            }
            set.insert(w);
        }
        Ok(StopWordList(set))
    }

    pub fn parse(raw: &str) -> Result<Self> {
        Self::new(parse_word_list(raw))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&raw)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for StopWordList {
    fn default() -> Self {
        Self::parse(DEFAULT_STOP_WORDS).expect("shipped stop words are valid")
    }
}

/// Whole-message filler phrases. Always includes [`REQUIRED_FILLERS`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FillerList(BTreeSet<String>);

impl FillerList {
    pub fn new(phrases: impl IntoIterator<Item = String>) -> Self {
        let mut set: BTreeSet<String> = phrases.into_iter().map(|p| p.to_lowercase()).collect();
        set.extend(REQUIRED_FILLERS.iter().map(|s| s.to_string()));
        FillerList(set)
    }

    pub fn parse(raw: &str) -> Self {
        Self::new(parse_word_list(raw))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&raw))
    }

    pub fn contains(&self, phrase: &str) -> bool {
        self.0.contains(phrase)
    }
}

impl Default for FillerList {
    fn default() -> Self {
        Self::parse(DEFAULT_FILLERS)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PreprocessConfig {
    pub emoji_lexicon: EmojiLexicon,
    pub stop_words: StopWordList,
    pub fillers: FillerList,
    /// Keep the word of a hashtag (`#sale` → `sale`) instead of dropping the token.
    pub keep_hashtag_text: bool,
    pub remove_stop_words: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            emoji_lexicon: EmojiLexicon::default(),
            stop_words: StopWordList::default(),
            fillers: FillerList::default(),
            keep_hashtag_text: false,
            remove_stop_words: true,
        }
    }
}

fn is_link(token: &str) -> bool {
    let lower = token.to_lowercase();
    lower.contains("http://") || lower.contains("https://") || lower.starts_with("www.")
}

/// Surrounds every run of pictographic characters with spaces so emoji never
/// glue onto a neighbouring word or mention.
fn separate_pictographs(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 8);
    let mut in_run = false;
    for c in text.chars() {
        let pict = is_pictographic(c);
        if pict != in_run {
            out.push(' ');
            in_run = pict;
        }
        out.push(c);
    }
    out
}

/// Drops links, `@` mentions and hashtags, then collapses whitespace.
///
/// A token is a link when it contains `http://` or `https://` or starts with
/// `www.` (any case). Hashtag tokens (leading `#`) are dropped whole, or only
/// lose their `#` characters when `keep_hashtag_text` is set. Stray `#`
/// characters inside other tokens are removed.
pub fn normalize_text(text: &str, keep_hashtag_text: bool) -> String {
    let spaced = separate_pictographs(text);
    let mut kept: Vec<String> = Vec::new();
    for token in spaced.split_whitespace() {
        if token.starts_with('@') || is_link(token) {
            continue;
        }
        if token.starts_with('#') && !keep_hashtag_text {
            continue;
        }
        let cleaned: String = token.chars().filter(|&c| c != '#').collect();
        if !cleaned.is_empty() {
            kept.push(cleaned);
        }
    }
    kept.join(" ")
}

/// Replaces mapped emoji sequences by their affect word and removes any other
/// pictographic character. Longest lexicon match wins; variation selectors are
/// ignored. Text without pictographic characters is returned unchanged.
pub fn replace_emojis(text: &str, lex: &EmojiLexicon) -> String {
    if !text.chars().any(is_pictographic) {
        return text.to_string();
    }
    let stripped: String = text
        .chars()
        .filter(|&c| !is_variation_selector(c))
        .collect();
    let mut out = String::with_capacity(stripped.len());
    let mut rest = stripped.as_str();
    while let Some(c) = rest.chars().next() {
        if let Some((key, token)) = lex.longest_match(rest) {
            out.push(' ');
            out.push_str(token);
            out.push(' ');
            rest = &rest[key.len()..];
        } else {
            out.push(if is_pictographic(c) { ' ' } else { c });
            rest = &rest[c.len_utf8()..];
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercases and, when enabled, drops whitespace-delimited stop words.
pub fn normalize_case_and_stopwords(text: &str, cfg: &PreprocessConfig) -> String {
    let lower = text.to_lowercase();
    lower
        .split_whitespace()
        .filter(|w| !(cfg.remove_stop_words && cfg.stop_words.contains(w)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// True when `text` has no alphabetic character or is a filler phrase.
pub fn is_noise(text: &str, cfg: &PreprocessConfig) -> bool {
    noise_reason(text, cfg).is_some()
}

fn noise_reason(text: &str, cfg: &PreprocessConfig) -> Option<DropReason> {
    if !text.chars().any(char::is_alphabetic) {
        Some(DropReason::NoAlpha)
    } else if cfg.fillers.contains(text.trim()) {
        Some(DropReason::Filler)
    } else {
        None
    }
}

/// The three text-rewriting steps applied to a single message.
pub fn clean_text(text: &str, cfg: &PreprocessConfig) -> String {
    let t = normalize_text(text, cfg.keep_hashtag_text);
    let t = replace_emojis(&t, &cfg.emoji_lexicon);
    normalize_case_and_stopwords(&t, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Empty,
    NoAlpha,
    Filler,
    Duplicate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DropCounts {
    pub no_alpha: usize,
    pub filler: usize,
    pub empty: usize,
    pub duplicate: usize,
}

impl DropCounts {
    pub fn total(&self) -> usize {
        self.no_alpha + self.filler + self.empty + self.duplicate
    }

    fn record(&mut self, reason: DropReason) {
        match reason {
            DropReason::Empty => self.empty += 1,
            DropReason::NoAlpha => self.no_alpha += 1,
            DropReason::Filler => self.filler += 1,
            DropReason::Duplicate => self.duplicate += 1,
        }
    }
}

/// Cleans every record, drops noise, then removes exact duplicates of the
/// cleaned text. Each dropped record counts toward exactly one reason,
/// checked in the order empty, no_alpha, filler, duplicate.
pub fn preprocess_corpus(c: &Corpus, cfg: &PreprocessConfig) -> (Corpus, DropCounts) {
    let cleaned: Vec<String> = c
        .records
        .par_iter()
        .map(|r| clean_text(&r.text, cfg))
        .collect();

    let mut drops = DropCounts::default();
    let mut seen = HashSet::with_capacity(cleaned.len());
    let mut records = Vec::with_capacity(cleaned.len());
    for (r, text) in c.records.iter().zip(cleaned) {
        let reason = if text.is_empty() {
            Some(DropReason::Empty)
        } else if let Some(reason) = noise_reason(&text, cfg) {
            Some(reason)
        } else if !seen.insert(text.clone()) {
            Some(DropReason::Duplicate)
        } else {
            None
        };
        match reason {
            Some(reason) => drops.record(reason),
            None => records.push(LabeledTweet { text, ..r.clone() }),
        }
    }
    (Corpus { records }, drops)
}
