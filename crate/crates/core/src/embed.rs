//! Belief propagation executed as a stack of transformer-shaped blocks.
//!
//! Every leaf owns one token laid out as
//!
//! ```text
//! [ r (q*q) | m (q) | mbar (q) | ppath (ell) ]      d = q(q+2) + ell
//! ```
//!
//! * `m` is the upward message of the leaf's current ancestor.
//! * `mbar` receives, through attention, the upward message of the sibling
//!   subtree of that ancestor (the complementary ancestor).
//! * `r[a][h]` is proportional to the probability of the evidence seen so
//!   far (the leaf itself excluded) jointly with leaf value `a`, given that
//!   the current ancestor takes value `h`. It starts as the identity
//!   `r[a][h] = [a == h]`.
//! * `ppath[t]` is `+1`/`-1` for a left/right turn at depth `t + 1`.
//!
//! Block `m` (1-based) attends with a bilinear form over `ppath` only, which
//! for large `beta` averages `m` over the complementary subtree of the leaf's
//! depth-`(ell - m + 1)` ancestor. Its feedforward climbs one factor for both
//! `m` and `r`. After the last block `r` is indexed by the root value and the
//! readout `sum_x0 p0[x0] r[a][x0]` is the message arriving at the leaf.
//!
//! With filtering at level `k` there are `ell - k` blocks. The last one
//! additionally gathers the message of every depth-`(k + 1)` subtree with one
//! fixed positional query per subtree and folds the `2^k` level-`k` messages
//! through the empty-factor tables.
//!
//! All stages write deltas that are added through the residual stream.
//! There is no layer normalization.

use crate::bp::normalize;
use crate::grammar::{path_transition, Grammar};
use crate::tree::{Evidence, Shape};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenLayout {
    pub q: usize,
    pub ell: usize,
}

impl TokenLayout {
    pub fn dim(&self) -> usize {
        self.q * (self.q + 2) + self.ell
    }

    pub fn r(&self) -> std::ops::Range<usize> {
        0..self.q * self.q
    }

    pub fn m(&self) -> std::ops::Range<usize> {
        let s = self.q * self.q;
        s..s + self.q
    }

    pub fn mbar(&self) -> std::ops::Range<usize> {
        let s = self.q * (self.q + 1);
        s..s + self.q
    }

    pub fn ppath(&self) -> std::ops::Range<usize> {
        let s = self.q * (self.q + 2);
        s..s + self.ell
    }
}

/// Decoded view of one token.
#[derive(Debug, Clone, PartialEq)]
pub struct BpToken {
    /// `r[a * q + h]`.
    pub r: Vec<f64>,
    pub m: Vec<f64>,
    pub mbar: Vec<f64>,
    pub ppath: Vec<f64>,
}

/// `2^ell` tokens of dimension `d`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    layout: TokenLayout,
    data: Vec<f64>,
}

impl TokenMatrix {
    pub fn layout(&self) -> TokenLayout {
        self.layout
    }

    pub fn n_tokens(&self) -> usize {
        self.data.len() / self.layout.dim()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.layout.dim();
        &self.data[i * d..(i + 1) * d]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.layout.dim();
        &mut self.data[i * d..(i + 1) * d]
    }

    pub fn token(&self, i: usize) -> BpToken {
        let row = self.row(i);
        let l = self.layout;
        BpToken {
            r: row[l.r()].to_vec(),
            m: row[l.m()].to_vec(),
            mbar: row[l.mbar()].to_vec(),
            ppath: row[l.ppath()].to_vec(),
        }
    }
}

/// `+1` for a left turn, `-1` for a right turn, root to leaf.
pub fn leaf_ppath(leaf: usize, ell: usize) -> Vec<f64> {
    (1..=ell)
        .map(|t| if leaf >> (ell - t) & 1 == 0 { 1.0 } else { -1.0 })
        .collect()
}

/// Leaves of the sibling subtree of `leaf`'s depth-`(ell - block + 1)`
/// ancestor; 0-based leaves, 1-based block.
pub fn attention_targets(leaf: usize, block: usize, ell: usize) -> Result<Vec<usize>> {
    if block == 0 || block > ell {
        return Err(Error::invalid(format!("block index {block} outside 1..={ell}")));
    }
    if leaf >= 1 << ell {
        return Err(Error::invalid(format!("leaf {leaf} outside 0..{}", 1usize << ell)));
    }
    let width = 1usize << (block - 1);
    let start = ((leaf >> (block - 1)) ^ 1) * width;
    Ok((start..start + width).collect())
}

/// Initial tokens: `r` is the identity, `m` the evidence (one-hot or uniform),
/// `mbar` empty.
pub fn encode_tokens(ev: &Evidence, g: &Grammar, ell: usize) -> Result<TokenMatrix> {
    let q = g.q();
    ev.validate(q, ell)?;
    let layout = TokenLayout { q, ell };
    let mut tokens = TokenMatrix { layout, data: vec![0.0; layout.dim() << ell] };
    for (i, leaf) in ev.leaves.iter().enumerate() {
        let row = tokens.row_mut(i);
        for a in 0..q {
            row[a * q + a] = 1.0;
        }
        let m = &mut row[layout.m()];
        match leaf {
            Some(s) => m[*s] = 1.0,
            None => m.fill(1.0 / q as f64),
        }
        row[layout.ppath()].copy_from_slice(&leaf_ppath(i, ell));
    }
    Ok(tokens)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Climb one full factor.
    Pair,
    /// Climb the last full factor and combine the level-`k` messages at the
    /// root (only when `k > 0`).
    Root,
}

#[derive(Debug, Clone)]
pub struct Block {
    /// 1-based block index.
    pub index: usize,
    pub kind: BlockKind,
    /// `ell x ell` bilinear form over `ppath`, row-major.
    pub qk: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EmbeddedTransformer<'g> {
    grammar: &'g Grammar,
    ell: usize,
    k: usize,
    beta: f64,
    layout: TokenLayout,
    blocks: Vec<Block>,
    /// Root block only: one `ppath` query per depth-`(k+1)` subtree.
    group_queries: Vec<Vec<f64>>,
    /// Root block only: path tables of the level-`k` nodes, left to right.
    level_tables: Vec<Vec<f64>>,
}

pub fn build_embedding(g: &Grammar, ell: usize, k: usize, beta: f64) -> Result<EmbeddedTransformer<'_>> {
    Shape::new(ell)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be positive and finite, got {beta}")));
    }
    if k >= ell {
        return Err(Error::invalid(format!(
            "k={k} leaves no blocks at depth {ell}; the fully filtered root posterior is naive_bayes_root"
        )));
    }
    let n_blocks = ell - k;
    let blocks = (1..=n_blocks)
        .map(|index| {
            let mut qk = vec![0.0; ell * ell];
            for t in 0..ell - index {
                qk[t * ell + t] = beta;
            }
            let pivot = ell - index;
            qk[pivot * ell + pivot] = -beta;
            let kind = if k > 0 && index == n_blocks { BlockKind::Root } else { BlockKind::Pair };
            Block { index, kind, qk }
        })
        .collect();
    let (group_queries, level_tables) = if k > 0 {
        let queries = Shape::level(k + 1)
            .map(|node| {
                let mut query = vec![0.0; ell];
                for (t, turn) in Shape::path(node).turns.iter().enumerate() {
                    query[t] = beta * if *turn == crate::grammar::Turn::Left { 1.0 } else { -1.0 };
                }
                query
            })
            .collect();
        let tables = Shape::level(k).map(|node| path_transition(g, &Shape::path(node))).collect();
        (queries, tables)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(EmbeddedTransformer {
        grammar: g,
        ell,
        k,
        beta,
        layout: TokenLayout { q: g.q(), ell },
        blocks,
        group_queries,
        level_tables,
    })
}

/// Per-block trace of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub marginals: Vec<Vec<f64>>,
    /// Per block, the `2^ell x 2^ell` attention weights, row-major.
    pub attention: Vec<Vec<f64>>,
    /// Token state after each block.
    pub states: Vec<TokenMatrix>,
}

fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        z += *s;
    }
    scores.iter_mut().for_each(|s| *s /= z);
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite value in {what}")))
    }
}

impl<'g> EmbeddedTransformer<'g> {
    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn layout(&self) -> TokenLayout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn bilinear(&self, qk: &[f64], pi: &[f64], pj: &[f64]) -> f64 {
        let ell = self.ell;
        let mut s = 0.0;
        for t in 0..ell {
            for u in 0..ell {
                let w = qk[t * ell + u];
                if w != 0.0 {
                    s += pi[t] * w * pj[u];
                }
            }
        }
        s
    }

    /// Attention weights of one block, row `i` over keys `j`.
    pub fn attention_matrix(&self, block: &Block, tokens: &TokenMatrix) -> Vec<f64> {
        let n = tokens.n_tokens();
        let pp = self.layout.ppath();
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            let pi = &tokens.row(i)[pp.clone()];
            let row = &mut w[i * n..(i + 1) * n];
            for (j, s) in row.iter_mut().enumerate() {
                *s = self.bilinear(&block.qk, pi, &tokens.row(j)[pp.clone()]);
            }
            softmax_in_place(row);
        }
        w
    }

    /// Softmax weights of every subtree query of the root block.
    fn group_weights(&self, tokens: &TokenMatrix) -> Vec<Vec<f64>> {
        let pp = self.layout.ppath();
        self.group_queries
            .iter()
            .map(|query| {
                let mut w: Vec<f64> = (0..tokens.n_tokens())
                    .map(|j| query.iter().zip(&tokens.row(j)[pp.clone()]).map(|(a, b)| a * b).sum())
                    .collect();
                softmax_in_place(&mut w);
                w
            })
            .collect()
    }

    fn weighted_m(&self, weights: &[f64], tokens: &TokenMatrix) -> Vec<f64> {
        let q = self.layout.q;
        let mr = self.layout.m();
        let mut out = vec![0.0; q];
        for (j, &w) in weights.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(&tokens.row(j)[mr.clone()]) {
                *o += w * v;
            }
        }
        out
    }

    /// Upward message through one full factor, and the matching `r` update.
    /// `own_left` tells whether the token's ancestor is the left child.
    fn climb(&self, own_left: bool, m: &[f64], mbar: &[f64], r: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let g = self.grammar;
        let q = g.q();
        let mut new_m = vec![0.0; q];
        let mut new_r = vec![0.0; q * q];
        for (parent, block) in g.partition().blocks().iter().enumerate() {
            for &(b, c) in block {
                let w = g.m(parent, b, c);
                let (own, other) = if own_left { (b, c) } else { (c, b) };
                let wc = w * mbar[other];
                new_m[parent] += wc * m[own];
                for a in 0..q {
                    new_r[a * q + parent] += wc * r[a * q + own];
                }
            }
        }
        normalize(&mut new_m)?;
        normalize(&mut new_r)?;
        Ok((new_m, new_r))
    }

    fn feedforward(&self, block: &Block, leaf: usize, row: &[f64], groups: &[Vec<f64>]) -> Result<Vec<f64>> {
        let l = self.layout;
        let q = l.q;
        let ppath = &row[l.ppath()];
        let pivot = self.ell - block.index;
        let own_left = ppath[pivot] > 0.0;
        let (mut new_m, mut new_r) = self.climb(own_left, &row[l.m()], &row[l.mbar()], &row[l.r()])?;

        if block.kind == BlockKind::Root {
            let own = leaf >> (self.ell - self.k);
            let mut outside = vec![1.0; q];
            for (slot, table) in self.level_tables.iter().enumerate() {
                if slot == own {
                    continue;
                }
                let (left, right) = (&groups[2 * slot], &groups[2 * slot + 1]);
                let mut level_msg = vec![0.0; q];
                for (parent, pairs) in self.grammar.partition().blocks().iter().enumerate() {
                    for &(b, c) in pairs {
                        level_msg[parent] += self.grammar.m(parent, b, c) * left[b] * right[c];
                    }
                }
                normalize(&mut level_msg)?;
                for (x0, o) in outside.iter_mut().enumerate() {
                    *o *= (0..q).map(|y| table[x0 * q + y] * level_msg[y]).sum::<f64>();
                }
                normalize(&mut outside)?;
            }
            let own_table = &self.level_tables[own];
            let mut root_r = vec![0.0; q * q];
            for a in 0..q {
                for x0 in 0..q {
                    let through: f64 = (0..q).map(|b| own_table[x0 * q + b] * new_r[a * q + b]).sum();
                    root_r[a * q + x0] = outside[x0] * through;
                }
            }
            normalize(&mut root_r)?;
            let mut root_m: Vec<f64> = (0..q)
                .map(|x0| outside[x0] * (0..q).map(|y| own_table[x0 * q + y] * new_m[y]).sum::<f64>())
                .collect();
            normalize(&mut root_m)?;
            new_m = root_m;
            new_r = root_r;
        }

        let mut delta = vec![0.0; l.dim()];
        for (d, (n, o)) in delta[l.r()].iter_mut().zip(new_r.iter().zip(&row[l.r()])) {
            *d = n - o;
        }
        for (d, (n, o)) in delta[l.m()].iter_mut().zip(new_m.iter().zip(&row[l.m()])) {
            *d = n - o;
        }
        for (d, o) in delta[l.mbar()].iter_mut().zip(&row[l.mbar()]) {
            *d = -o;
        }
        Ok(delta)
    }

    /// Runs every block and returns the per-leaf readout.
    pub fn forward(&self, tokens: &TokenMatrix) -> Result<Vec<Vec<f64>>> {
        self.run(tokens, false).map(|t| t.marginals)
    }

    /// As [`forward`](Self::forward), also keeping attention weights and the
    /// token state after every block.
    pub fn forward_traced(&self, tokens: &TokenMatrix) -> Result<ForwardTrace> {
        self.run(tokens, true)
    }

    fn run(&self, tokens: &TokenMatrix, keep: bool) -> Result<ForwardTrace> {
        let l = self.layout;
        if tokens.layout() != l || tokens.n_tokens() != 1 << self.ell {
            return Err(Error::ShapeMismatch(format!(
                "expected {} tokens of dimension {}",
                1usize << self.ell,
                l.dim()
            )));
        }
        let n = tokens.n_tokens();
        let mut x = tokens.clone();
        let mut trace = ForwardTrace { marginals: Vec::new(), attention: Vec::new(), states: Vec::new() };

        for block in &self.blocks {
            let weights = self.attention_matrix(block, &x);
            let gathered: Vec<Vec<f64>> =
                (0..n).map(|i| self.weighted_m(&weights[i * n..(i + 1) * n], &x)).collect();
            let groups: Vec<Vec<f64>> = if block.kind == BlockKind::Root {
                self.group_weights(&x).iter().map(|w| self.weighted_m(w, &x)).collect()
            } else {
                Vec::new()
            };
            for (i, add) in gathered.iter().enumerate() {
                let row = x.row_mut(i);
                row[l.mbar()].iter_mut().zip(add).for_each(|(v, a)| *v += a);
            }
            for i in 0..n {
                let delta = self.feedforward(block, i, x.row(i), &groups)?;
                let row = x.row_mut(i);
                row.iter_mut().zip(&delta).for_each(|(v, d)| *v += d);
                check_finite(row, "token")?;
            }
            if keep {
                trace.attention.push(weights);
                trace.states.push(x.clone());
            }
        }

        let q = l.q;
        let p0 = self.grammar.p0();
        for i in 0..n {
            let r = &x.row(i)[l.r()];
            let mut out: Vec<f64> =
                (0..q).map(|a| (0..q).map(|x0| p0[x0] * r[a * q + x0]).sum()).collect();
            normalize(&mut out)?;
            trace.marginals.push(out);
        }
        Ok(trace)
    }

    /// Largest total softmax mass a row puts outside its targets, per block.
    /// The root block also accounts for its subtree queries.
    pub fn attention_leakage(&self) -> Vec<f64> {
        let ev = Evidence { ell: self.ell, leaves: vec![None; 1 << self.ell], root: None };
        let tokens = encode_tokens(&ev, self.grammar, self.ell).expect("shape is consistent");
        let n = tokens.n_tokens();
        self.blocks
            .iter()
            .map(|block| {
                let w = self.attention_matrix(block, &tokens);
                let mut worst: f64 = 0.0;
                for i in 0..n {
                    let targets = attention_targets(i, block.index, self.ell).expect("valid block");
                    let inside: f64 = targets.iter().map(|&j| w[i * n + j]).sum();
                    let outside: f64 = (0..n).filter(|j| !targets.contains(j)).map(|j| w[i * n + j]).sum();
                    worst = worst.max(outside.max(1.0 - inside));
                }
                if block.kind == BlockKind::Root {
                    let width = 1usize << (self.ell - self.k - 1);
                    for (g, w) in self.group_weights(&tokens).iter().enumerate() {
                        let outside: f64 = (0..n).filter(|j| j / width != g).map(|j| w[j]).sum();
                        worst = worst.max(outside);
                    }
                }
                worst
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bp::build_graph;
    use crate::grammar::build_grammar;
    use crate::tree::{apply_mask, sample_tree};

    #[test]
    fn targets_small_cases() {
        assert_eq!(attention_targets(0, 1, 2).unwrap(), vec![1]);
        assert_eq!(attention_targets(0, 2, 2).unwrap(), vec![2, 3]);
        assert_eq!(attention_targets(4, 3, 4).unwrap(), vec![0, 1, 2, 3]);
        assert!(attention_targets(0, 0, 2).is_err());
        assert!(attention_targets(0, 3, 2).is_err());
    }

    #[test]
    fn targets_match_ancestor_comparison() {
        let ell = 4;
        let shape = Shape::new(ell).unwrap();
        for i in 0..16 {
            for m in 1..=ell {
                let ni = shape.leaf_node(i);
                let brute: Vec<usize> = (0..16)
                    .filter(|&j| {
                        let nj = shape.leaf_node(j);
                        Shape::ancestor(ni, ell - m) == Shape::ancestor(nj, ell - m)
                            && Shape::ancestor(ni, ell - m + 1) != Shape::ancestor(nj, ell - m + 1)
                    })
                    .collect();
                let got = attention_targets(i, m, ell).unwrap();
                assert_eq!(got, brute);
                assert_eq!(got.len(), 1 << (m - 1));
                assert!(!got.contains(&i));
            }
        }
    }

    #[test]
    fn dimensions_and_block_counts() {
        let g = build_grammar(4, 1.0, 1).unwrap();
        let et = build_embedding(&g, 4, 0, 50.0).unwrap();
        assert_eq!(et.dim(), 28);
        assert_eq!(et.n_blocks(), 4);
        assert_eq!(build_embedding(&g, 4, 2, 50.0).unwrap().n_blocks(), 2);
        let err = build_embedding(&g, 4, 4, 50.0).unwrap_err();
        assert!(err.to_string().contains("naive_bayes_root"));
        assert!(build_embedding(&g, 4, 0, 0.0).is_err());
        assert!(build_embedding(&g, 4, 0, f64::INFINITY).is_err());
    }

    #[test]
    fn token_encoding() {
        let g = build_grammar(4, 1.0, 1).unwrap();
        let ev = Evidence::observed(&[0, 1, 2, 3], 2).unwrap();
        let tokens = encode_tokens(&ev, &g, 2).unwrap();
        for i in 0..4 {
            let t = tokens.token(i);
            assert_eq!(t.m.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(t.m[i], 1.0);
            assert!(t.mbar.iter().all(|&v| v == 0.0));
        }
        assert_eq!(tokens.token(0).ppath, vec![1.0, 1.0]);
        assert_eq!(tokens.token(3).ppath, vec![-1.0, -1.0]);
        let ev = apply_mask(&[0, 1, 2, 3], &[2], 2).unwrap();
        assert_eq!(encode_tokens(&ev, &g, 2).unwrap().token(2).m, vec![0.25; 4]);
    }

    #[test]
    fn single_factor_closed_form() {
        let g = build_grammar(2, 1.0, 3).unwrap();
        let et = build_embedding(&g, 1, 0, 50.0).unwrap();
        for c in 0..2 {
            let ev = apply_mask(&[0, c], &[0], 1).unwrap();
            let out = et.forward(&encode_tokens(&ev, &g, 1).unwrap()).unwrap();
            let mut want: Vec<f64> = (0..2).map(|b| (0..2).map(|a| g.m(a, b, c)).sum()).collect();
            let z: f64 = want.iter().sum();
            want.iter_mut().for_each(|w| *w /= z);
            for b in 0..2 {
                assert!((out[0][b] - want[b]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn all_masked_gives_prior_propagation() {
        let g = build_grammar(4, 1.0, 3).unwrap();
        let fg = build_graph(&g, 4, 0).unwrap();
        let ev = Evidence { ell: 4, leaves: vec![None; 16], root: None };
        let bp = fg.infer(&ev).unwrap();
        let out = build_embedding(&g, 4, 0, 50.0).unwrap().forward(&encode_tokens(&ev, &g, 4).unwrap()).unwrap();
        for i in 0..16 {
            for a in 0..4 {
                assert!((out[i][a] - bp.leaf_incoming[i][a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn filtered_embeddings_match_bp() {
        let g = build_grammar(3, 1.0, 21).unwrap();
        for ell in 1..=4 {
            for k in 0..ell {
                let et = build_embedding(&g, ell, k, 50.0).unwrap();
                let fg = build_graph(&g, ell, k).unwrap();
                for seed in 0..10 {
                    let t = sample_tree(&g, ell, k, seed).unwrap();
                    let ev = apply_mask(&t.leaves(), &[seed as usize % (1 << ell)], ell).unwrap();
                    let out = et.forward(&encode_tokens(&ev, &g, ell).unwrap()).unwrap();
                    let bp = fg.infer(&ev).unwrap();
                    for i in 0..1 << ell {
                        for a in 0..3 {
                            let dev = (out[i][a] - bp.leaf_incoming[i][a]).abs();
                            assert!(dev < 1e-9, "ell={ell} k={k} leaf {i}: {dev}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn non_uniform_prior_enters_readout() {
        let g = build_grammar(3, 1.0, 21).unwrap().with_prior(vec![0.6, 0.3, 0.1]).unwrap();
        for k in 0..2 {
            let et = build_embedding(&g, 2, k, 50.0).unwrap();
            let fg = build_graph(&g, 2, k).unwrap();
            let ev = apply_mask(&[0, 1, 2, 0], &[1], 2).unwrap();
            let out = et.forward(&encode_tokens(&ev, &g, 2).unwrap()).unwrap();
            let bp = fg.infer(&ev).unwrap();
            for i in 0..4 {
                for a in 0..3 {
                    assert!((out[i][a] - bp.leaf_incoming[i][a]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let g = build_grammar(3, 1.0, 21).unwrap();
        let et = build_embedding(&g, 3, 0, 50.0).unwrap();
        let ev = Evidence::observed(&[0, 1, 2, 0], 2).unwrap();
        let tokens = encode_tokens(&ev, &g, 2).unwrap();
        assert!(matches!(et.forward(&tokens), Err(Error::ShapeMismatch(_))));
    }
}
