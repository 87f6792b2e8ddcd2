//! Zhang–Shasha ordered tree edit distance with unit costs.

use alloc::vec::Vec;

use super::structure::LabeledTree;

/// Post-order view of a tree: labels, leftmost-leaf indices and keyroots.
#[derive(Clone, Debug)]
pub struct PostOrder<L> {
    labels: Vec<L>,
    leftmost: Vec<usize>,
    keyroots: Vec<usize>,
}

impl<L: Copy> PostOrder<L> {
    pub fn new(tree: &LabeledTree<L>) -> Self {
        let (labels, leftmost) = tree.postorder();
        let n = labels.len();
        // a keyroot is the highest node sharing its leftmost leaf
        let mut seen = alloc::vec![false; n];
        let mut keyroots = Vec::new();
        for i in (0..n).rev() {
            if !seen[leftmost[i]] {
                seen[leftmost[i]] = true;
                keyroots.push(i);
            }
        }
        keyroots.reverse();
        Self { labels, leftmost, keyroots }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Scratch buffers reused across distance computations.
#[derive(Default, Debug)]
pub struct TedWorkspace {
    tree_dist: Vec<u32>,
    forest_dist: Vec<u32>,
}

impl TedWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn distance<L: Copy + Eq>(&mut self, a: &PostOrder<L>, b: &PostOrder<L>) -> usize {
        let (na, nb) = (a.len(), b.len());
        if na == 0 || nb == 0 {
            return na + nb;
        }
        self.tree_dist.clear();
        self.tree_dist.resize(na * nb, 0);
        let fd_cols = nb + 1;
        self.forest_dist.clear();
        self.forest_dist.resize((na + 1) * fd_cols, 0);
        let td = &mut self.tree_dist;
        let fd = &mut self.forest_dist;
        for &i in &a.keyroots {
            for &j in &b.keyroots {
                let (ioff, joff) = (a.leftmost[i], b.leftmost[j]);
                let (m, n) = (i - ioff + 2, j - joff + 2);
                fd[0] = 0;
                for x in 1..m {
                    fd[x * fd_cols] = x as u32;
                }
                for y in 1..n {
                    fd[y] = y as u32;
                }
                for x in 1..m {
                    let ai = x + ioff - 1;
                    let a_whole = a.leftmost[ai] == ioff;
                    for y in 1..n {
                        let bj = y + joff - 1;
                        let del = fd[(x - 1) * fd_cols + y] + 1;
                        let ins = fd[x * fd_cols + y - 1] + 1;
                        let v = if a_whole && b.leftmost[bj] == joff {
                            let relabel = u32::from(a.labels[ai] != b.labels[bj]);
                            let v = del.min(ins).min(fd[(x - 1) * fd_cols + y - 1] + relabel);
                            td[ai * nb + bj] = v;
                            v
                        } else {
                            let p = a.leftmost[ai] - ioff;
                            let q = b.leftmost[bj] - joff;
                            del.min(ins).min(fd[p * fd_cols + q] + td[ai * nb + bj])
                        };
                        fd[x * fd_cols + y] = v;
                    }
                }
            }
        }
        td[na * nb - 1] as usize
    }
}

/// Minimum number of unit-cost node insertions, deletions and relabels
/// turning `a` into `b`.
pub fn tree_edit_distance<L: Copy + Eq>(a: &LabeledTree<L>, b: &LabeledTree<L>) -> usize {
    TedWorkspace::new().distance(&PostOrder::new(a), &PostOrder::new(b))
}

/// `1 − TED / max(|a|, |b|)`.
pub fn steds<L: Copy + Eq>(a: &LabeledTree<L>, b: &LabeledTree<L>) -> f64 {
    let denom = a.size().max(b.size());
    1.0 - tree_edit_distance(a, b) as f64 / denom as f64
}
