//! Plain-text extraction used by BLEU-PT.
//!
//! Removes display formulas (`$$` blocks), inline `$…$` spans, pipe-table
//! rows and fenced blocks, drops leading heading and list markers from every
//! line, and joins the remaining words with single spaces. An inline `$`
//! without a partner removes the rest of its line and raises the warning
//! flag.

use alloc::string::String;
use alloc::vec::Vec;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PlainText {
    pub text: String,
    /// Set when an unbalanced inline formula delimiter was encountered.
    pub unbalanced_formula: bool,
}

pub fn strip_plain_text(markdown: &str) -> String {
    strip_plain_text_checked(markdown).text
}

pub fn strip_plain_text_checked(markdown: &str) -> PlainText {
    let mut unbalanced = false;
    let mut in_display = false;
    let mut in_fence = false;
    let mut scratch = String::new();
    let mut kept = String::new();
    for raw in markdown.split('\n') {
        let line = raw.trim();
        if in_fence {
            in_fence = !line.starts_with("```");
            continue;
        }
        if in_display {
            in_display = !line.ends_with("$$");
            continue;
        }
        if line.starts_with("```") {
            in_fence = true;
            continue;
        }
        if let Some(rest) = line.strip_prefix("$$") {
            in_display = !rest.trim_end().ends_with("$$");
            continue;
        }
        if line.starts_with('|') {
            continue;
        }
        scratch.clear();
        let mut in_math = false;
        for c in line.chars() {
            match c {
                '$' => in_math = !in_math,
                '|' | '`' if !in_math => scratch.push(' '),
                _ if !in_math => scratch.push(c),
                _ => {}
            }
        }
        if in_math {
            unbalanced = true;
        }
        let mut tokens: Vec<&str> = scratch.split_whitespace().collect();
        let lead = tokens.iter().take_while(|t| is_line_marker(t)).count();
        tokens.drain(..lead);
        for t in tokens {
            if !kept.is_empty() {
                kept.push(' ');
            }
            kept.push_str(t);
        }
    }
    PlainText { text: kept, unbalanced_formula: unbalanced }
}

fn is_line_marker(token: &str) -> bool {
    matches!(token, "#" | "##" | "###" | "-" | "*")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inline_formula_removed() {
        assert_eq!(strip_plain_text("a $x^2$ b"), "a b");
    }

    #[test]
    fn table_only_document() {
        assert_eq!(strip_plain_text("| a | b |\n| c | d |"), "");
        assert_eq!(strip_plain_text("```\nq r\n```"), "");
    }

    #[test]
    fn markers_removed() {
        assert_eq!(strip_plain_text("# t\n\np q"), "t p q");
        assert_eq!(strip_plain_text("- x\n- y\n## z"), "x y z");
    }

    #[test]
    fn display_blocks_removed() {
        assert_eq!(strip_plain_text("a\n$$ x = 1 $$\nb\n$$\ny\nz $$\nc"), "a b c");
    }

    #[test]
    fn unbalanced_strips_to_end_of_line() {
        let p = strip_plain_text_checked("a $ b c\nd");
        assert_eq!(p.text, "a d");
        assert!(p.unbalanced_formula);
        assert!(!strip_plain_text_checked("a $b$").unbalanced_formula);
    }

    #[test]
    fn idempotent_on_tricky_inputs() {
        for s in ["## # x", "# $x$ - y", "- - z", "#### a", "a|b", "`# q`", "$$", "x $$ y"] {
            let once = strip_plain_text(s);
            assert_eq!(strip_plain_text(&once), once, "input {s:?}");
        }
    }
}
