//! Word-for-word translation of source markdown into the target language.
//!
//! Only word tokens change. Whitespace, structural markers, formula
//! spans (inline `$ … $` and display `$$` blocks), fence lines and
//! tokens without letters are copied verbatim, so the markdown structure
//! of the output is identical to the input.

use alloc::string::String;

use super::lexicon::Lexicon;

pub fn translate_source(markdown: &str, lexicon: &Lexicon) -> String {
    map_words(markdown, |w| lexicon.translate_word(w))
}

/// Inverse of [`translate_source`].
pub fn invert_target(markdown: &str, lexicon: &Lexicon) -> String {
    map_words(markdown, |w| lexicon.invert_word(w))
}

fn map_words(markdown: &str, mut f: impl FnMut(&str) -> String) -> String {
    let mut out = String::with_capacity(markdown.len() * 2);
    let mut in_display = false;
    for (i, line) in markdown.split('\n').enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let trimmed = line.trim();
        if in_display {
            out.push_str(line);
            if trimmed.ends_with("$$") {
                in_display = false;
            }
            continue;
        }
        if trimmed.starts_with("```") {
            out.push_str(line);
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("$$") {
            out.push_str(line);
            if !rest.trim_end().ends_with("$$") {
                in_display = true;
            }
            continue;
        }
        let mut in_formula = false;
        let mut rest = line;
        while !rest.is_empty() {
            let ws = rest.len() - rest.trim_start().len();
            out.push_str(&rest[..ws]);
            rest = &rest[ws..];
            let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
            let token = &rest[..end];
            rest = &rest[end..];
            if token.is_empty() {
                continue;
            }
            let dollars = token.matches('$').count();
            if in_formula || dollars > 0 || !token.chars().any(char::is_alphabetic) {
                out.push_str(token);
            } else {
                out.push_str(&f(token));
            }
            if dollars % 2 == 1 {
                in_formula = !in_formula;
            }
        }
    }
    out
}
