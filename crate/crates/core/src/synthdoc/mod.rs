//! Synthetic bilingual document corpora: markdown sources, rendered pages
//! and word-for-word reference translations.

pub mod generate;
pub mod lexicon;
pub mod render;
pub mod translate;

pub use generate::{generate_corpus, Corpus, CorpusManifest, DocumentSample, GenerationConfig, LayoutMix, SourceText, Split};
pub use lexicon::Lexicon;
pub use render::{render_document, RenderConfig};
pub use translate::{invert_target, translate_source};

use crate::vocab::is_marker;

/// Number of source words: whitespace tokens that are neither structural
/// markers nor part of a formula (inline `$ … $` or display `$$` block).
pub fn measure_context_length(markdown: &str) -> usize {
    let mut count = 0;
    let mut in_display = false;
    for line in markdown.split('\n') {
        let trimmed = line.trim();
        if in_display {
            in_display = !trimmed.ends_with("$$");
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("$$") {
            in_display = !rest.trim_end().ends_with("$$");
            continue;
        }
        let mut in_formula = false;
        for tok in trimmed.split_whitespace() {
            let dollars = tok.matches('$').count();
            if !in_formula && dollars == 0 && !is_marker(tok) {
                count += 1;
            }
            if dollars % 2 == 1 {
                in_formula = !in_formula;
            }
        }
    }
    count
}

/// Node count of the document's structure tree.
pub fn measure_layout_complexity(markdown: &str) -> usize {
    crate::metrics::parse_structure_tree(markdown).size()
}
