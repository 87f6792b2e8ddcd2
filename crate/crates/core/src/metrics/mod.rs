//! Evaluation: BLEU, plain-text BLEU, structure trees, STEDS and slicing.

pub mod bleu;
pub mod plain;
pub mod report;
pub mod structure;
pub mod ted;

pub use bleu::{corpus_bleu, BleuConfig};
pub use plain::strip_plain_text;
pub use report::{bleu_pt, slice_report, EvalReport, EvalSample, Scores, Slice, SliceSpec};
pub use structure::{parse_structure_tree, LabeledTree, NodeLabel, StructureTree};
pub use ted::{steds, tree_edit_distance, PostOrder, TedWorkspace};
