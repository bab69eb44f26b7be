//! WordPiece subword tokenization.
//!
//! Words are segmented greedily, longest vocabulary match first. The first
//! piece of a word is looked up as-is; every following piece carries the `##`
//! continuation prefix. A word that cannot be fully segmented becomes `[UNK]`.
//! Encodings are `[CLS] pieces… [SEP]` followed by `[PAD]` up to `max_len`.

mod trainer;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use trainer::{min_target_size, train_vocabulary};

pub const CONTINUATION_PREFIX: &str = "##";

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;

/// Special tokens in id order.
pub const SPECIAL_TOKENS: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub max_len: usize,
    pub max_word_chars: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            max_len: 128,
            max_word_chars: 100,
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len < 3 {
            return Err(Error::InvalidConfig(format!(
                "max_len must be at least 3, got {}",
                self.max_len
            )));
        }
        if self.max_word_chars == 0 {
            return Err(Error::InvalidConfig(
                "max_word_chars must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Ordered subword inventory; a token's position is its id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    /// Longest token length in chars, excluding the continuation prefix.
    max_piece_chars: usize,
}

fn check_token(token: &str) -> std::result::Result<(), String> {
    if token.is_empty() {
        return Err("empty token".into());
    }
    if token.chars().any(char::is_whitespace) {
        return Err(format!("token {token:?} contains whitespace"));
    }
    if token == CONTINUATION_PREFIX {
        return Err(format!("malformed continuation piece {token:?}"));
    }
    if SPECIAL_TOKENS.contains(&token) {
        return Err(format!("special token {token:?} outside its reserved id"));
    }
    Ok(())
}

impl Vocabulary {
    /// Builds a vocabulary from tokens in id order; ids 0-3 must be the specials.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        Self::build(tokens).map_err(|(line, msg)| {
            Error::InvalidInput(format!(
                "vocabulary entry {}: {msg}",
                line.saturating_sub(1)
            ))
        })
    }

    /// Errors carry the 1-based line number of the offending entry.
    fn build(tokens: Vec<String>) -> std::result::Result<Self, (usize, String)> {
        for (id, special) in SPECIAL_TOKENS.iter().enumerate() {
            match tokens.get(id) {
                Some(t) if t == special => {}
                Some(t) => {
                    return Err((
                        id + 1,
                        format!("expected {special} at id {id}, found {t:?}"),
                    ))
                }
                None => return Err((id + 1, format!("missing special token {special}"))),
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        let mut max_piece_chars = 0;
        for (id, token) in tokens.iter().enumerate() {
            if id >= SPECIAL_TOKENS.len() {
                check_token(token).map_err(|m| (id + 1, m))?;
                let piece = token.strip_prefix(CONTINUATION_PREFIX).unwrap_or(token);
                max_piece_chars = max_piece_chars.max(piece.chars().count());
            }
            if index.insert(token.clone(), id as u32).is_some() {
                return Err((id + 1, format!("duplicate token {token:?}")));
            }
        }
        Ok(Vocabulary {
            tokens,
            index,
            max_piece_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// One token per line, line index = id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let tokens: Vec<String> = text
            .lines()
            .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
            .collect();
        Self::build(tokens).map_err(|(line, msg)| Error::parse(origin, line, msg))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// Fixed-length model input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub num_real: usize,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn word_piece_ids(word: &str, v: &Vocabulary, cfg: &TokenizerConfig) -> Vec<u32> {
    let chars: Vec<(usize, char)> = word.char_indices().collect();
    if chars.is_empty() {
        return Vec::new();
    }
    if chars.len() > cfg.max_word_chars {
        return vec![UNK_ID];
    }
    let byte_at = |i: usize| chars.get(i).map_or(word.len(), |&(b, _)| b);

    let mut pieces = Vec::new();
    let mut candidate = String::with_capacity(word.len() + CONTINUATION_PREFIX.len());
    let mut start = 0;
    while start < chars.len() {
        let longest = (chars.len() - start).min(v.max_piece_chars);
        let mut found = None;
        for len in (1..=longest).rev() {
            candidate.clear();
            if start > 0 {
                candidate.push_str(CONTINUATION_PREFIX);
            }
            candidate.push_str(&word[byte_at(start)..byte_at(start + len)]);
            if let Some(id) = v.id(&candidate) {
                found = Some((id, len));
                break;
            }
        }
        match found {
            Some((id, len)) => {
                pieces.push(id);
                start += len;
            }
            None => return vec![UNK_ID],
        }
    }
    pieces
}

/// Greedy longest-match-first segmentation of a single word.
pub fn tokenize_word(word: &str, v: &Vocabulary, cfg: &TokenizerConfig) -> Vec<String> {
    word_piece_ids(word, v, cfg)
        .into_iter()
        .map(|id| v.tokens[id as usize].clone())
        .collect()
}

/// Piece ids for whitespace-separated text, without specials or padding.
pub fn text_piece_ids(text: &str, v: &Vocabulary, cfg: &TokenizerConfig) -> Vec<u32> {
    text.split_whitespace()
        .flat_map(|w| word_piece_ids(w, v, cfg))
        .collect()
}

/// `[CLS] pieces [SEP]` padded to `cfg.max_len`; overlong piece lists lose their tail.
pub fn encode(text: &str, v: &Vocabulary, cfg: &TokenizerConfig) -> Encoding {
    let max_len = cfg.max_len.max(3);
    let mut pieces = text_piece_ids(text, v, cfg);
    pieces.truncate(max_len - 2);

    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    ids.extend_from_slice(&pieces);
    ids.push(SEP_ID);
    let num_real = ids.len();
    ids.resize(max_len, PAD_ID);
    let mut attention_mask = vec![1u8; num_real];
    attention_mask.resize(max_len, 0);
    Encoding {
        ids,
        attention_mask,
        num_real,
    }
}

/// Joins pieces back into text, fusing `##` continuations onto the previous
/// piece. `[PAD]`, `[CLS]` and `[SEP]` are dropped; `[UNK]` is kept literally.
pub fn decode(e: &Encoding, v: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for &id in &e.ids {
        let token = v.token(id).ok_or_else(|| {
            Error::InvalidInput(format!("token id {id} outside vocabulary of {}", v.len()))
        })?;
        if matches!(id, PAD_ID | CLS_ID | SEP_ID) {
            continue;
        }
        match token.strip_prefix(CONTINUATION_PREFIX) {
            Some(rest) if id != UNK_ID && !out.is_empty() => out.push_str(rest),
            _ => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(token);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn fixture_vocab(extra: &[&str]) -> Vocabulary {
        let tokens = SPECIAL_TOKENS
            .iter()
            .copied()
            .chain(extra.iter().copied())
            .map(String::from)
            .collect();
        Vocabulary::from_tokens(tokens).unwrap()
    }

    fn likhna_vocab() -> Vocabulary {
        fixture_vocab(&["li", "##kh", "##na"])
    }

    #[test]
    fn likhna_segmentation() {
        let v = likhna_vocab();
        let cfg = TokenizerConfig::default();
        assert_eq!(
            tokenize_word("likhna", &v, &cfg),
            vec!["li", "##kh", "##na"]
        );
        assert_eq!(tokenize_word("xyz", &v, &cfg), vec![UNK_TOKEN]);
        // partial coverage still falls back to a single UNK
        assert_eq!(tokenize_word("likh", &v, &cfg), vec!["li", "##kh"]);
        assert_eq!(tokenize_word("likhx", &v, &cfg), vec![UNK_TOKEN]);
    }

    #[test]
    fn whole_word_hit_and_longest_match() {
        let v = fixture_vocab(&["good", "go", "##od", "##o", "##d"]);
        let cfg = TokenizerConfig::default();
        assert_eq!(tokenize_word("good", &v, &cfg), vec!["good"]);
        assert_eq!(tokenize_word("goo", &v, &cfg), vec!["go", "##o"]);
    }

    #[test]
    fn overlong_word_is_unk() {
        let v = fixture_vocab(&["a", "##a"]);
        let cfg = TokenizerConfig {
            max_len: 8,
            max_word_chars: 3,
        };
        assert_eq!(tokenize_word("aaa", &v, &cfg), vec!["a", "##a", "##a"]);
        assert_eq!(tokenize_word("aaaa", &v, &cfg), vec![UNK_TOKEN]);
    }

    #[test]
    fn encode_layout() {
        let v = likhna_vocab();
        let cfg = TokenizerConfig {
            max_len: 10,
            max_word_chars: 100,
        };
        let e = encode("likhna likhna", &v, &cfg);
        let li = v.id("li").unwrap();
        let kh = v.id("##kh").unwrap();
        let na = v.id("##na").unwrap();
        assert_eq!(
            e.ids,
            vec![CLS_ID, li, kh, na, li, kh, na, SEP_ID, PAD_ID, PAD_ID]
        );
        assert_eq!(e.attention_mask, vec![1, 1, 1, 1, 1, 1, 1, 1, 0, 0]);
        assert_eq!(e.num_real, 8);

        let empty = encode("", &v, &cfg);
        assert_eq!(&empty.ids[..3], &[CLS_ID, SEP_ID, PAD_ID]);
        assert_eq!(empty.num_real, 2);
    }

    #[test]
    fn encode_boundary_and_truncation() {
        let v = likhna_vocab();
        let cfg = TokenizerConfig {
            max_len: 8,
            max_word_chars: 100,
        };
        // exactly max_len - 2 pieces
        let e = encode("likhna likhna", &v, &cfg);
        assert_eq!(e.num_real, 8);
        assert_eq!(*e.ids.last().unwrap(), SEP_ID);
        assert!(e.attention_mask.iter().all(|&m| m == 1));

        let cfg = TokenizerConfig {
            max_len: 7,
            max_word_chars: 100,
        };
        let e = encode("likhna likhna likhna", &v, &cfg);
        assert_eq!(e.ids.len(), 7);
        assert_eq!(e.ids[0], CLS_ID);
        assert_eq!(e.ids[6], SEP_ID);
        assert_eq!(decode(&e, &v).unwrap(), "likhna likh");
    }

    #[test]
    fn decode_examples() {
        let v = likhna_vocab();
        let cfg = TokenizerConfig::default();
        assert_eq!(decode(&encode("likhna", &v, &cfg), &v).unwrap(), "likhna");
        assert_eq!(decode(&encode("", &v, &cfg), &v).unwrap(), "");
        assert_eq!(
            decode(&encode("likhna qq", &v, &cfg), &v).unwrap(),
            "likhna [UNK]"
        );
        let bad = Encoding {
            ids: vec![CLS_ID, 99, SEP_ID],
            attention_mask: vec![1, 1, 1],
            num_real: 3,
        };
        assert!(decode(&bad, &v).is_err());
    }

    #[test]
    fn spelling_variants_share_stem_piece() {
        let v = fixture_vocab(&[
            "shukr", "##iya", "##ia", "s", "##h", "##u", "##k", "##r", "##i", "##y", "##a",
        ]);
        let cfg = TokenizerConfig::default();
        let a = tokenize_word("shukriya", &v, &cfg);
        let b = tokenize_word("shukria", &v, &cfg);
        assert_eq!(a, vec!["shukr", "##iya"]);
        assert_eq!(b, vec!["shukr", "##ia"]);
        assert_eq!(a[0], b[0]);
    }

    #[test]
    fn vocabulary_validation() {
        let ok = |t: &[&str]| Vocabulary::from_tokens(t.iter().map(|s| s.to_string()).collect());
        assert!(ok(&["[PAD]", "[UNK]", "[CLS]", "[SEP]", "a"]).is_ok());
        assert!(ok(&["[PAD]", "[CLS]", "[UNK]", "[SEP]"]).is_err());
        assert!(ok(&["[PAD]", "[UNK]", "[CLS]"]).is_err());
        assert!(ok(&["[PAD]", "[UNK]", "[CLS]", "[SEP]", "a", "a"]).is_err());
        assert!(ok(&["[PAD]", "[UNK]", "[CLS]", "[SEP]", "##"]).is_err());
        assert!(ok(&["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[UNK]"]).is_err());
    }

    #[test]
    fn load_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        fs::write(&path, "[PAD]\n[CLS]\n[SEP]\nli\n").unwrap();
        match Vocabulary::load(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        fs::write(&path, "[PAD]\n[UNK]\n[CLS]\n[SEP]\nli\n##kh\nli\n").unwrap();
        match Vocabulary::load(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected parse error, got {other:?}"),
        }
        fs::write(&path, "[PAD]\n[UNK]\n[CLS]\n[SEP]\nli\n##kh\n##na\n").unwrap();
        let v = Vocabulary::load(&path).unwrap();
        assert_eq!(v.len(), 7);
        assert_eq!(
            tokenize_word("likhna", &v, &TokenizerConfig::default()),
            vec!["li", "##kh", "##na"]
        );
    }

    fn arb_vocab() -> impl Strategy<Value = Vocabulary> {
        proptest::collection::btree_set(
            ("(##)?", "[a-d]{1,4}").prop_map(|(p, s)| format!("{p}{s}")),
            0..30,
        )
        .prop_map(|set| {
            let tokens = SPECIAL_TOKENS
                .iter()
                .map(|s| s.to_string())
                .chain(set)
                .collect();
            Vocabulary::from_tokens(tokens).unwrap()
        })
    }

    proptest! {
        #[test]
        fn save_load_roundtrip(v in arb_vocab()) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("v.txt");
            v.save(&path).unwrap();
            prop_assert_eq!(Vocabulary::load(&path).unwrap(), v);
        }

        #[test]
        fn pieces_are_greedy(v in arb_vocab(), word in "[a-e]{1,12}") {
            let cfg = TokenizerConfig::default();
            let pieces = tokenize_word(&word, &v, &cfg);
            if pieces != [UNK_TOKEN] {
                let chars: Vec<char> = word.chars().collect();
                let mut pos = 0;
                for piece in &pieces {
                    let body = piece.strip_prefix("##").unwrap_or(piece);
                    let n = body.chars().count();
                    // no longer entry starting here
                    for longer in (pos + n + 1)..=chars.len() {
                        let s: String = chars[pos..longer].iter().collect();
                        let cand = if pos == 0 { s } else { format!("##{s}") };
                        prop_assert!(!v.contains(&cand), "{} beats {}", cand, piece);
                    }
                    pos += n;
                }
                prop_assert_eq!(pos, chars.len());
            }
        }

        #[test]
        fn encode_invariants_hold(v in arb_vocab(), text in "\\PC{0,200}", max_len in 3usize..40) {
            let cfg = TokenizerConfig { max_len, max_word_chars: 100 };
            let e = encode(&text, &v, &cfg);
            prop_assert_eq!(e.ids.len(), max_len);
            prop_assert_eq!(e.attention_mask.len(), max_len);
            prop_assert_eq!(e.ids[0], CLS_ID);
            prop_assert_eq!(e.ids[e.num_real - 1], SEP_ID);
            for i in 0..max_len {
                prop_assert_eq!(e.attention_mask[i] == 1, i < e.num_real);
                prop_assert_eq!(e.ids[i] == PAD_ID, i >= e.num_real);
            }
        }

        #[test]
        fn decode_inverts_encode(words in proptest::collection::vec("[a-d]{1,6}", 0..10)) {
            let letters = ["a", "b", "c", "d"];
            let mut extra: Vec<String> = letters.iter().map(|s| s.to_string()).collect();
            extra.extend(letters.iter().map(|s| format!("##{s}")));
            extra.extend(["ab", "##cd", "abc", "##da"].iter().map(|s| s.to_string()));
            let v = fixture_vocab(&extra.iter().map(String::as_str).collect::<Vec<_>>());
            let text = words.join(" ");
            let cfg = TokenizerConfig { max_len: 128, max_word_chars: 100 };
            prop_assert_eq!(decode(&encode(&text, &v, &cfg), &v).unwrap(), text);
        }
    }
}
