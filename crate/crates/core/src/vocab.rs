//! Token vocabularies and the whitespace tokenisation of markdown.
//!
//! Markdown is tokenised line by line on whitespace; line breaks become
//! the [`NEWLINE`] token, so a blank line is two consecutive newlines.
//! Detokenising joins tokens with single spaces, which round-trips any
//! text whose lines carry single inter-word spaces and no padding.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const NL: u32 = 4;

pub const NEWLINE: &str = "<nl>";
const SPECIALS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", NEWLINE];

/// Structural markdown markers that are never translated.
pub const MARKERS: [&str; 7] = ["#", "##", "###", "-", "|", "$", "$$"];

/// Tokens that may appear inside formula spans.
pub const MATH_TOKENS: [&str; 22] = [
    "a", "b", "c", "n", "x", "y", "z", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "+", "=", "^", "(", ")",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, u32>,
}

impl Vocab {
    /// Specials, markers and math tokens followed by `words` (duplicates
    /// of earlier entries are skipped).
    pub fn with_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self { tokens: Vec::new(), index: BTreeMap::new() };
        for t in SPECIALS.iter().chain(MARKERS.iter()).chain(MATH_TOKENS.iter()) {
            v.push(t);
        }
        for w in words {
            v.push(w);
        }
        v
    }

    /// Appends `token` unless present; returns its id.
    pub fn push(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// Restores the lookup index after deserialisation.
    pub fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
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

    /// Token ids of `markdown`; unknown tokens map to [`UNK`].
    pub fn encode(&self, markdown: &str) -> Vec<u32> {
        split_markdown(markdown).into_iter().map(|t| self.id(t).unwrap_or(UNK)).collect()
    }

    /// `BOS tokens EOS`.
    pub fn encode_target(&self, markdown: &str) -> Vec<u32> {
        let mut ids = Vec::with_capacity(markdown.len() / 2 + 2);
        ids.push(BOS);
        ids.extend(self.encode(markdown));
        ids.push(EOS);
        ids
    }

    /// Inverse of [`Vocab::encode`]; specials other than newline are dropped.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        let mut line_start = true;
        for &id in ids {
            match id {
                NL => {
                    out.push('\n');
                    line_start = true;
                }
                PAD | BOS | EOS => {}
                _ => {
                    if !line_start {
                        out.push(' ');
                    }
                    out.push_str(self.token(id).unwrap_or("<unk>"));
                    line_start = false;
                }
            }
        }
        out
    }
}

/// Whitespace tokens of each line with [`NEWLINE`] between lines.
pub fn split_markdown(markdown: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for (i, line) in markdown.split('\n').enumerate() {
        if i > 0 {
            out.push(NEWLINE);
        }
        out.extend(line.split_whitespace());
    }
    out
}

pub fn is_marker(token: &str) -> bool {
    MARKERS.contains(&token)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_canonical_markdown() {
        let md = "# ka mo\n\nri $ x + 1 $ te\n\n- na\n- po";
        let v = Vocab::with_words(["ka", "mo", "ri", "te", "na", "po"]);
        let ids = v.encode(md);
        assert_eq!(v.decode(&ids), md);
        assert_eq!(v.decode(&v.encode_target(md)), md);
        assert_eq!(v.encode("zz")[0], UNK);
        assert!(v.encode("").is_empty());
    }

    #[test]
    fn reindex_after_clone_of_tokens() {
        let v = Vocab::with_words(["aa"]);
        let mut w = Vocab { tokens: v.tokens().to_vec(), index: BTreeMap::new() };
        w.reindex();
        assert_eq!(w, v);
    }
}
