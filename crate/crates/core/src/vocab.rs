//! Token vocabulary with a designated delimiter token.
//!
//! Token 0 is always the delimiter, rendered as a single backslash.
//! The remaining tokens enumerate letter combinations in order:
//! `a..z, aa, ab, ...`.

use crate::error::{GincError, Result};
use serde::{Deserialize, Serialize};

/// The delimiter token as rendered in corpus and prompt files.
pub const DELIMITER_TOKEN: &str = "\\";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    delimiter_index: usize,
}

/// Name for the `i`-th non-delimiter token: 0 -> "a", 25 -> "z", 26 -> "aa".
fn letter_name(mut i: usize) -> String {
    let mut bytes = Vec::new();
    loop {
        bytes.push(b'a' + (i % 26) as u8);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    bytes.reverse();
    String::from_utf8(bytes).expect("ascii letters")
}

/// Build a vocabulary of `size` tokens: the delimiter followed by
/// `size - 1` letter combinations.
pub fn build_vocabulary(size: usize) -> Result<Vocabulary> {
    if size < 2 {
        return Err(GincError::InvalidConfig(format!(
            "vocabulary size must be at least 2, got {size}"
        )));
    }
    let mut tokens = Vec::with_capacity(size);
    tokens.push(DELIMITER_TOKEN.to_string());
    for i in 0..size - 1 {
        tokens.push(letter_name(i));
    }
    Ok(Vocabulary {
        tokens,
        delimiter_index: 0,
    })
}

impl Vocabulary {
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn delimiter_index(&self) -> usize {
        self.delimiter_index
    }

    /// Rebuild from an explicit token list (e.g. a corpus sidecar).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(GincError::InvalidConfig(
                "vocabulary needs at least 2 tokens".into(),
            ));
        }
        if tokens[0] != DELIMITER_TOKEN {
            return Err(GincError::InvalidConfig(
                "token 0 must be the delimiter".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &tokens {
            if !seen.insert(t.as_str()) {
                return Err(GincError::InvalidConfig(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self {
            tokens,
            delimiter_index: 0,
        })
    }

    /// Token string -> index lookup table for parsing.
    pub fn index_map(&self) -> std::collections::HashMap<&str, usize> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_50_layout() {
        let v = build_vocabulary(50).unwrap();
        assert_eq!(v.size(), 50);
        assert_eq!(v.token(0), "\\");
        assert_eq!(v.token(1), "a");
        assert_eq!(v.token(26), "z");
        assert_eq!(v.token(27), "aa");
        // After "z" come "aa".."aw": 23 tokens filling indices 27..=49.
        assert_eq!(v.token(49), "aw");
    }

    #[test]
    fn minimal_vocabulary() {
        let v = build_vocabulary(2).unwrap();
        assert_eq!(v.tokens(), &["\\".to_string(), "a".to_string()]);
    }

    #[test]
    fn too_small_is_rejected() {
        assert!(build_vocabulary(1).is_err());
        assert!(build_vocabulary(0).is_err());
    }

    #[test]
    fn tokens_are_distinct() {
        let v = build_vocabulary(700).unwrap();
        let set: std::collections::HashSet<_> = v.tokens().iter().collect();
        assert_eq!(set.len(), 700);
        // Two-letter names roll over correctly.
        assert_eq!(v.token(27 + 26), "ba");
    }

    #[test]
    fn from_tokens_round_trip() {
        let v = build_vocabulary(30).unwrap();
        let rebuilt = Vocabulary::from_tokens(v.tokens().to_vec()).unwrap();
        assert_eq!(v, rebuilt);
        assert!(Vocabulary::from_tokens(vec!["a".into(), "b".into()]).is_err());
    }
}
