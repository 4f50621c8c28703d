//! Tree topology, filtered tree sampling and leaf evidence.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::grammar::{path_transition, Grammar, PathSpec, Turn};
use crate::rng;
use crate::{Error, Result};

/// Deepest tree the crate accepts; leaves are stored as bytes and
/// enumeration/embedding sizes grow as `2^ell`.
pub const MAX_DEPTH: usize = 20;

/// Level-order index arithmetic for the complete binary tree of depth `ell`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    ell: usize,
}

impl Shape {
    pub fn new(ell: usize) -> Result<Self> {
        if ell > MAX_DEPTH {
            return Err(Error::invalid(format!("depth {ell} exceeds {MAX_DEPTH}")));
        }
        Ok(Self { ell })
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn n_nodes(&self) -> usize {
        (1 << (self.ell + 1)) - 1
    }

    pub fn n_leaves(&self) -> usize {
        1 << self.ell
    }

    /// Node index of leaf `i` (0-based, left to right).
    pub fn leaf_node(&self, i: usize) -> usize {
        self.n_leaves() - 1 + i
    }

    pub fn level_start(t: usize) -> usize {
        (1 << t) - 1
    }

    /// Nodes at depth `t`, left to right.
    pub fn level(t: usize) -> std::ops::Range<usize> {
        Self::level_start(t)..Self::level_start(t + 1)
    }

    pub fn depth(node: usize) -> usize {
        (usize::BITS - 1 - (node + 1).leading_zeros()) as usize
    }

    pub fn parent(node: usize) -> usize {
        (node - 1) / 2
    }

    pub fn children(node: usize) -> (usize, usize) {
        (2 * node + 1, 2 * node + 2)
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        Self::depth(node) == self.ell
    }

    /// Branch choices from the root to `node`.
    pub fn path(node: usize) -> PathSpec {
        let depth = Self::depth(node);
        let code = node + 1;
        let turns = (0..depth)
            .rev()
            .map(|bit| if code >> bit & 1 == 0 { Turn::Left } else { Turn::Right })
            .collect();
        PathSpec::new(turns)
    }

    /// Ancestor of `node` at depth `t <= depth(node)`.
    pub fn ancestor(node: usize, t: usize) -> usize {
        let up = Self::depth(node) - t;
        ((node + 1) >> up) - 1
    }
}

pub(crate) fn check_levels(ell: usize, k: usize) -> Result<Shape> {
    if k > ell {
        return Err(Error::invalid(format!("filtration level k={k} exceeds depth ell={ell}")));
    }
    Shape::new(ell)
}

/// A sampled tree. `nodes[n]` is `None` for the unsampled levels `1..k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeSample {
    pub ell: usize,
    pub k: usize,
    pub nodes: Vec<Option<usize>>,
}

impl TreeSample {
    pub fn root(&self) -> usize {
        self.nodes[0].expect("root is always sampled")
    }

    pub fn leaves(&self) -> Vec<usize> {
        let shape = Shape { ell: self.ell };
        (0..shape.n_leaves())
            .map(|i| self.nodes[shape.leaf_node(i)].expect("leaves are always sampled"))
            .collect()
    }
}

/// Precomputed sampling tables for one `(grammar, ell, k)`.
pub struct TreeSampler<'g> {
    grammar: &'g Grammar,
    shape: Shape,
    k: usize,
    root: WeightedIndex<f64>,
    /// Per parent symbol, over flattened child pairs `b*q + c`.
    pairs: Vec<WeightedIndex<f64>>,
    /// Per level-k node (left to right), per root symbol.
    filtered: Vec<Vec<WeightedIndex<f64>>>,
}

fn weights(w: &[f64]) -> WeightedIndex<f64> {
    WeightedIndex::new(w.iter().copied()).expect("rows are valid probability vectors")
}

impl<'g> TreeSampler<'g> {
    pub fn new(grammar: &'g Grammar, ell: usize, k: usize) -> Result<Self> {
        let shape = check_levels(ell, k)?;
        let q = grammar.q();
        let pairs = (0..q)
            .map(|a| weights(&grammar.tensor()[a * q * q..(a + 1) * q * q]))
            .collect();
        let filtered = if k == 0 {
            Vec::new()
        } else {
            Shape::level(k)
                .map(|node| {
                    let table = path_transition(grammar, &Shape::path(node));
                    (0..q).map(|a| weights(&table[a * q..(a + 1) * q])).collect()
                })
                .collect()
        };
        Ok(Self { grammar, shape, k, root: weights(grammar.p0()), pairs, filtered })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn sample(&self, seed: u64) -> TreeSample {
        let q = self.grammar.q();
        let mut stream = rng::stream(seed);
        let mut nodes = vec![None; self.shape.n_nodes()];
        let root = self.root.sample(&mut stream);
        nodes[0] = Some(root);
        if self.k > 0 {
            for (slot, node) in Shape::level(self.k).enumerate() {
                nodes[node] = Some(self.filtered[slot][root].sample(&mut stream));
            }
        }
        for t in self.k..self.shape.ell() {
            for parent in Shape::level(t) {
                let a = nodes[parent].expect("parent sampled before children");
                let pair = self.pairs[a].sample(&mut stream);
                let (l, r) = Shape::children(parent);
                nodes[l] = Some(pair / q);
                nodes[r] = Some(pair % q);
            }
        }
        TreeSample { ell: self.shape.ell(), k: self.k, nodes }
    }
}

/// Samples one tree filtered at level `k`; deterministic in `seed`.
pub fn sample_tree(g: &Grammar, ell: usize, k: usize, seed: u64) -> Result<TreeSample> {
    Ok(TreeSampler::new(g, ell, k)?.sample(seed))
}

/// Observed leaves and optional root clamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evidence {
    pub ell: usize,
    /// `None` marks a masked leaf.
    pub leaves: Vec<Option<usize>>,
    pub root: Option<usize>,
}

impl Evidence {
    pub fn observed(leaves: &[usize], ell: usize) -> Result<Self> {
        apply_mask(leaves, &[], ell)
    }

    pub fn n_masked(&self) -> usize {
        self.leaves.iter().filter(|l| l.is_none()).count()
    }

    pub(crate) fn validate(&self, q: usize, ell: usize) -> Result<()> {
        if self.ell != ell || self.leaves.len() != 1 << ell {
            return Err(Error::ShapeMismatch(format!(
                "evidence has {} leaves at depth {}, graph expects {} at depth {ell}",
                self.leaves.len(),
                self.ell,
                1usize << ell
            )));
        }
        let bad = self.leaves.iter().flatten().chain(self.root.iter()).find(|&&s| s >= q);
        if let Some(s) = bad {
            return Err(Error::ShapeMismatch(format!("symbol {s} out of range for q={q}")));
        }
        Ok(())
    }
}

/// Masks the listed leaf positions of `sequence`.
pub fn apply_mask(sequence: &[usize], positions: &[usize], ell: usize) -> Result<Evidence> {
    if sequence.len() != 1 << ell {
        return Err(Error::ShapeMismatch(format!(
            "sequence of length {} at depth {ell}",
            sequence.len()
        )));
    }
    let mut leaves: Vec<Option<usize>> = sequence.iter().copied().map(Some).collect();
    for &p in positions {
        let slot = leaves.get_mut(p).ok_or_else(|| {
            Error::invalid(format!("mask position {p} outside 0..{}", sequence.len()))
        })?;
        *slot = None;
    }
    Ok(Evidence { ell, leaves, root: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::build_grammar;

    #[test]
    fn shape_arithmetic() {
        let s = Shape::new(2).unwrap();
        assert_eq!(s.n_nodes(), 7);
        assert_eq!(s.leaf_node(0), 3);
        assert_eq!(Shape::depth(0), 0);
        assert_eq!(Shape::depth(2), 1);
        assert_eq!(Shape::depth(3), 2);
        assert_eq!(Shape::depth(6), 2);
        assert_eq!(Shape::path(5).turns, vec![Turn::Right, Turn::Left]);
        assert_eq!(Shape::ancestor(5, 1), 2);
        assert_eq!(Shape::ancestor(5, 0), 0);
        assert_eq!(Shape::ancestor(5, 2), 5);
        for n in 1..31 {
            let (l, r) = Shape::children(Shape::parent(n));
            assert!(n == l || n == r);
        }
    }

    #[test]
    fn k_above_ell_rejected() {
        let g = build_grammar(2, 1.0, 1).unwrap();
        assert!(matches!(sample_tree(&g, 2, 3, 0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn depth_one_pair_is_supported() {
        let g = build_grammar(4, 1.0, 9).unwrap();
        for seed in 0..500 {
            let t = sample_tree(&g, 1, 0, seed).unwrap();
            let (b, c) = (t.nodes[1].unwrap(), t.nodes[2].unwrap());
            assert_eq!(g.partition().owner(b, c), t.root());
        }
    }

    #[test]
    fn full_trees_respect_support_everywhere() {
        let g = build_grammar(4, 1.0, 9).unwrap();
        for seed in 0..200 {
            let t = sample_tree(&g, 4, 0, seed).unwrap();
            for parent in 0..15 {
                let (l, r) = Shape::children(parent);
                let owner = g.partition().owner(t.nodes[l].unwrap(), t.nodes[r].unwrap());
                assert_eq!(owner, t.nodes[parent].unwrap());
            }
        }
    }

    #[test]
    fn filtered_tree_marks_absent_levels() {
        let g = build_grammar(4, 1.0, 9).unwrap();
        for k in 0..=4 {
            let t = sample_tree(&g, 4, k, 3).unwrap();
            for (n, v) in t.nodes.iter().enumerate() {
                let d = Shape::depth(n);
                assert_eq!(v.is_none(), d >= 1 && d < k, "k={k} node {n}");
                if let Some(s) = v {
                    assert!(*s < 4);
                }
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = build_grammar(4, 1.0, 9).unwrap();
        assert_eq!(sample_tree(&g, 4, 0, 77).unwrap(), sample_tree(&g, 4, 0, 77).unwrap());
        assert_eq!(sample_tree(&g, 4, 2, 77).unwrap(), sample_tree(&g, 4, 2, 77).unwrap());
    }

    #[test]
    fn mask_positions() {
        let seq: Vec<usize> = (0..16).map(|i| i % 4).collect();
        let ev = apply_mask(&seq, &[], 4).unwrap();
        assert_eq!(ev.n_masked(), 0);
        let ev = apply_mask(&seq, &[4], 4).unwrap();
        assert_eq!(ev.n_masked(), 1);
        assert_eq!(ev.leaves[4], None);
        let all: Vec<usize> = (0..16).collect();
        assert_eq!(apply_mask(&seq, &all, 4).unwrap().n_masked(), 16);
        assert!(apply_mask(&seq, &[16], 4).is_err());
        assert!(apply_mask(&seq, &[0], 3).is_err());
    }
}
