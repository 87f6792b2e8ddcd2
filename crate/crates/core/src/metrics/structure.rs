//! Markdown structure trees.
//!
//! Grammar, applied line by line:
//! - `#`, `##`, `###` followed by a space (or end of line) open a heading.
//!   A heading becomes the child of the closest preceding heading of a
//!   smaller level, otherwise of the root.
//! - Every other block is a sibling of the innermost open heading (a child
//!   of the root when no heading is open).
//! - Consecutive `- ` / `* ` lines form one `list` with `list_item` children.
//! - Consecutive lines starting with `|`, or a ```` ``` ```` fenced block,
//!   form a `table`.
//! - A line starting with `$$` opens a display `formula` that ends on the
//!   line ending with `$$`.
//! - Remaining consecutive non-blank lines form a `paragraph`.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeLabel {
    Root,
    Heading1,
    Heading2,
    Heading3,
    Paragraph,
    List,
    ListItem,
    Table,
    Formula,
}

impl NodeLabel {
    pub fn name(self) -> &'static str {
        match self {
            Self::Root => "root",
            Self::Heading1 => "heading1",
            Self::Heading2 => "heading2",
            Self::Heading3 => "heading3",
            Self::Paragraph => "paragraph",
            Self::List => "list",
            Self::ListItem => "list_item",
            Self::Table => "table",
            Self::Formula => "formula",
        }
    }

    fn heading(level: usize) -> Self {
        match level {
            1 => Self::Heading1,
            2 => Self::Heading2,
            _ => Self::Heading3,
        }
    }
}

/// Ordered labelled tree; node 0 is the root and children keep document
/// order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabeledTree<L> {
    labels: Vec<L>,
    children: Vec<Vec<usize>>,
}

pub type StructureTree = LabeledTree<NodeLabel>;

impl<L: Copy> LabeledTree<L> {
    pub fn leaf(label: L) -> Self {
        Self { labels: vec![label], children: vec![Vec::new()] }
    }

    /// Adds a node under `parent` (after its existing children).
    pub fn add_child(&mut self, parent: usize, label: L) -> usize {
        let id = self.labels.len();
        self.labels.push(label);
        self.children.push(Vec::new());
        self.children[parent].push(id);
        id
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, node: usize) -> L {
        self.labels[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    /// Labels in post-order together with each node's leftmost leaf
    /// descendant (both as post-order indices).
    pub fn postorder(&self) -> (Vec<L>, Vec<usize>) {
        let n = self.size();
        let mut labels = Vec::with_capacity(n);
        let mut leftmost = Vec::with_capacity(n);
        // (node, next child index, leftmost leaf of the node once known)
        let mut stack: Vec<(usize, usize, Option<usize>)> = vec![(0, 0, None)];
        while let Some(top) = stack.last_mut() {
            let (node, next, _) = *top;
            if next < self.children[node].len() {
                top.1 += 1;
                stack.push((self.children[node][next], 0, None));
            } else {
                let (_, _, lm) = stack.pop().expect("non-empty");
                let idx = labels.len();
                let lm = lm.unwrap_or(idx);
                labels.push(self.labels[node]);
                leftmost.push(lm);
                if let Some(parent) = stack.last_mut() {
                    if parent.2.is_none() {
                        parent.2 = Some(lm);
                    }
                }
            }
        }
        (labels, leftmost)
    }

    /// Pre-order labels with child counts; equal for label-isomorphic trees.
    pub fn canonical(&self) -> Vec<(L, usize)> {
        let mut out = Vec::with_capacity(self.size());
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            out.push((self.labels[n], self.children[n].len()));
            stack.extend(self.children[n].iter().rev());
        }
        out
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Block {
    Heading(usize),
    ListItem,
    TableRow,
    Fence,
    Formula,
    Text,
}

fn classify(trimmed: &str) -> Block {
    let hashes = trimmed.bytes().take_while(|&b| b == b'#').count();
    if (1..=3).contains(&hashes) && (trimmed.len() == hashes || trimmed.as_bytes()[hashes] == b' ') {
        return Block::Heading(hashes);
    }
    if trimmed == "-" || trimmed.starts_with("- ") || trimmed == "*" || trimmed.starts_with("* ") {
        return Block::ListItem;
    }
    if trimmed.starts_with("```") {
        return Block::Fence;
    }
    if trimmed.starts_with('|') {
        return Block::TableRow;
    }
    if trimmed.starts_with("$$") {
        return Block::Formula;
    }
    Block::Text
}

/// Parses any string; unrecognised content becomes paragraphs.
pub fn parse_structure_tree(markdown: &str) -> StructureTree {
    let lines: Vec<&str> = markdown.split('\n').map(str::trim).collect();
    let mut tree = StructureTree::leaf(NodeLabel::Root);
    // open headings as (level, node)
    let mut headings: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        if line.is_empty() {
            i += 1;
            continue;
        }
        let kind = classify(line);
        if let Block::Heading(level) = kind {
            while headings.last().is_some_and(|&(l, _)| l >= level) {
                headings.pop();
            }
            let parent = headings.last().map_or(0, |&(_, n)| n);
            let node = tree.add_child(parent, NodeLabel::heading(level));
            headings.push((level, node));
            i += 1;
            continue;
        }
        let parent = if headings.len() >= 2 { headings[headings.len() - 2].1 } else { 0 };
        match kind {
            Block::ListItem => {
                let list = tree.add_child(parent, NodeLabel::List);
                while i < lines.len() && classify(lines[i]) == Block::ListItem {
                    tree.add_child(list, NodeLabel::ListItem);
                    i += 1;
                }
            }
            Block::TableRow => {
                tree.add_child(parent, NodeLabel::Table);
                while i < lines.len() && classify(lines[i]) == Block::TableRow {
                    i += 1;
                }
            }
            Block::Fence => {
                tree.add_child(parent, NodeLabel::Table);
                i += 1;
                while i < lines.len() && !lines[i].starts_with("```") {
                    i += 1;
                }
                i += 1;
            }
            Block::Formula => {
                tree.add_child(parent, NodeLabel::Formula);
                let rest = &line[2..];
                i += 1;
                if !rest.trim_end().ends_with("$$") {
                    while i < lines.len() && !lines[i].ends_with("$$") {
                        i += 1;
                    }
                    i += 1;
                }
            }
            Block::Text => {
                tree.add_child(parent, NodeLabel::Paragraph);
                while i < lines.len() && !lines[i].is_empty() && classify(lines[i]) == Block::Text {
                    i += 1;
                }
            }
            Block::Heading(_) => unreachable!(),
        }
    }
    tree
}

#[cfg(test)]
mod tests {
    use super::*;
    use NodeLabel::*;

    fn labels(md: &str) -> Vec<(NodeLabel, usize)> {
        parse_structure_tree(md).canonical()
    }

    #[test]
    fn empty_is_root_only() {
        assert_eq!(parse_structure_tree("").size(), 1);
        assert_eq!(parse_structure_tree("\n\n  \n").size(), 1);
    }

    #[test]
    fn heading_and_paragraph() {
        assert_eq!(labels("# h\n\npara"), vec![(Root, 2), (Heading1, 0), (Paragraph, 0)]);
    }

    #[test]
    fn heading_then_list() {
        let t = parse_structure_tree("# a\n\n- x\n- y");
        assert_eq!(t.size(), 5);
        assert_eq!(t.canonical(), vec![(Root, 2), (Heading1, 0), (List, 2), (ListItem, 0), (ListItem, 0)]);
    }

    #[test]
    fn headings_nest_by_level() {
        let t = labels("# a\n\n## b\n\ntext\n\n### c\n\n## d\n\n# e");
        assert_eq!(
            t,
            vec![
                (Root, 2),
                (Heading1, 3),
                (Heading2, 1),
                (Heading3, 0),
                (Paragraph, 0),
                (Heading2, 0),
                (Heading1, 0)
            ]
        );
    }

    #[test]
    fn tables_formulas_and_fences() {
        let md = "| a | b |\n| c | d |\n\n$$ x = 1 $$\n\n$$\ny\n$$\n\n```\n| q |\n```\n\nend";
        assert_eq!(labels(md), vec![(Root, 5), (Table, 0), (Formula, 0), (Formula, 0), (Table, 0), (Paragraph, 0)]);
    }

    #[test]
    fn paragraph_lines_merge_until_blank_or_block() {
        assert_eq!(labels("a\nb\n- c\nd\n\ne"), vec![(Root, 4), (Paragraph, 0), (List, 1), (ListItem, 0), (Paragraph, 0), (Paragraph, 0)]);
    }

    #[test]
    fn deep_hashes_are_text() {
        assert_eq!(labels("#### deep\n#tag"), vec![(Root, 1), (Paragraph, 0)]);
    }

    #[test]
    fn postorder_leftmost_leaves() {
        let t = parse_structure_tree("# a\n\n- x\n- y");
        let (l, lm) = t.postorder();
        assert_eq!(l, vec![Heading1, ListItem, ListItem, List, Root]);
        assert_eq!(lm, vec![0, 1, 2, 1, 0]);
    }

    #[test]
    fn idempotent_parse() {
        let md = "# t\n\n- a\n\n| x |\n\nplain";
        assert_eq!(parse_structure_tree(md), parse_structure_tree(md));
    }
}
