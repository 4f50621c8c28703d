//! Exact sum-product inference on the level-`k` factor graph.
//!
//! Above the filtration level the root is attached to `2^k` "empty" factors,
//! each holding the path table `P(x_j | x_0)` of one level-`k` node. Below it
//! every parent is joined to its two children by a "full" factor carrying
//! the tensor `M`. The graph is a tree, so one upward sweep followed by one
//! downward sweep gives exact marginals.
//!
//! Messages live in the probability domain and are renormalized after every
//! update. A message that normalizes to zero means the evidence has no
//! support under the grammar and is reported as
//! [`Error::InconsistentEvidence`].

use rand::Rng;

use crate::grammar::{path_transition, Grammar};
use crate::rng;
use crate::tree::{check_levels, Evidence, Shape};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct EmptyFactor {
    /// Level-`k` variable attached below the root.
    pub node: usize,
    /// Row-major `P(x_node = b | x_0 = a)`.
    pub table: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FullFactor {
    pub parent: usize,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    a: usize,
    b: usize,
    c: usize,
    m: f64,
}

#[derive(Debug, Clone)]
pub struct FactorGraph<'g> {
    grammar: &'g Grammar,
    shape: Shape,
    k: usize,
    empty: Vec<EmptyFactor>,
    full: Vec<FullFactor>,
    support: Vec<Entry>,
}

/// Builds the factor graph for data filtered at level `k` (`k = 0` is the
/// full hierarchy).
pub fn build_graph(g: &Grammar, ell: usize, k: usize) -> Result<FactorGraph<'_>> {
    let shape = check_levels(ell, k)?;
    let empty = if k == 0 {
        Vec::new()
    } else {
        Shape::level(k)
            .map(|node| EmptyFactor { node, table: path_transition(g, &Shape::path(node)) })
            .collect()
    };
    let full = (k..ell)
        .flat_map(Shape::level)
        .map(|parent| {
            let (left, right) = Shape::children(parent);
            FullFactor { parent, left, right }
        })
        .collect();
    let support = g
        .partition()
        .blocks()
        .iter()
        .enumerate()
        .flat_map(|(a, block)| block.iter().map(move |&(b, c)| (a, b, c)))
        .map(|(a, b, c)| Entry { a, b, c, m: g.m(a, b, c) })
        .collect();
    Ok(FactorGraph { grammar: g, shape, k, empty, full, support })
}

/// How the message buffers are filled before the sweeps. On a tree the
/// result does not depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Uniform,
    Random(u64),
}

/// Every directed edge message, stored per variable node.
///
/// For variable `n`, the "parent factor" is the factor joining `n` to the
/// level above (a full factor, or an empty factor at level `k`) and the
/// "child factor" is the full factor below `n`.
#[derive(Debug, Clone)]
pub struct MessageSet {
    q: usize,
    pub var_to_parent_factor: Vec<f64>,
    pub parent_factor_to_var: Vec<f64>,
    pub var_to_child_factor: Vec<f64>,
    pub child_factor_to_var: Vec<f64>,
    /// Root to empty factor `j` and back, indexed by slot along level `k`.
    pub root_to_empty: Vec<f64>,
    pub empty_to_root: Vec<f64>,
    /// External message on the root: the prior or a clamp.
    pub root_external: Vec<f64>,
}

impl MessageSet {
    fn new(q: usize, n_nodes: usize, n_empty: usize, init: Init) -> Self {
        let u = 1.0 / q as f64;
        let mut set = Self {
            q,
            var_to_parent_factor: vec![u; n_nodes * q],
            parent_factor_to_var: vec![u; n_nodes * q],
            var_to_child_factor: vec![u; n_nodes * q],
            child_factor_to_var: vec![u; n_nodes * q],
            root_to_empty: vec![u; n_empty * q],
            empty_to_root: vec![u; n_empty * q],
            root_external: vec![u; q],
        };
        if let Init::Random(seed) = init {
            let mut stream = rng::stream(seed);
            for buf in [
                &mut set.var_to_parent_factor,
                &mut set.parent_factor_to_var,
                &mut set.var_to_child_factor,
                &mut set.child_factor_to_var,
                &mut set.root_to_empty,
                &mut set.empty_to_root,
            ] {
                for chunk in buf.chunks_mut(q) {
                    chunk.iter_mut().for_each(|v| *v = stream.random::<f64>() + 1e-3);
                    let z: f64 = chunk.iter().sum();
                    chunk.iter_mut().for_each(|v| *v /= z);
                }
            }
        }
        set
    }

    fn at(buf: &[f64], q: usize, i: usize) -> &[f64] {
        &buf[i * q..(i + 1) * q]
    }

    pub fn q(&self) -> usize {
        self.q
    }
}

/// Normalized marginals produced by inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    pub root: Vec<f64>,
    /// Per leaf, the message arriving from its parent factor: the leaf's
    /// marginal when it is masked.
    pub leaf_incoming: Vec<Vec<f64>>,
    /// Marginals of present internal nodes (depth `k..ell`, root excluded),
    /// indexed by node; `None` elsewhere.
    pub internal: Vec<Option<Vec<f64>>>,
}

impl Posteriors {
    /// Largest absolute difference over root, leaf and shared internal
    /// marginals.
    pub fn max_deviation(&self, other: &Posteriors) -> f64 {
        let pairs = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let mut dev = pairs(&self.root, &other.root);
        for (a, b) in self.leaf_incoming.iter().zip(&other.leaf_incoming) {
            dev = dev.max(pairs(a, b));
        }
        for (a, b) in self.internal.iter().zip(&other.internal) {
            if let (Some(a), Some(b)) = (a, b) {
                dev = dev.max(pairs(a, b));
            }
        }
        dev
    }
}

pub(crate) fn normalize(v: &mut [f64]) -> Result<()> {
    let z: f64 = v.iter().sum();
    if !z.is_finite() {
        return Err(Error::Numerical(format!("message sum is {z}")));
    }
    if z <= 0.0 {
        return Err(Error::InconsistentEvidence);
    }
    v.iter_mut().for_each(|x| *x /= z);
    Ok(())
}

impl<'g> FactorGraph<'g> {
    pub fn grammar(&self) -> &'g Grammar {
        self.grammar
    }

    pub fn ell(&self) -> usize {
        self.shape.ell()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn empty_factors(&self) -> &[EmptyFactor] {
        &self.empty
    }

    pub fn full_factors(&self) -> &[FullFactor] {
        &self.full
    }

    pub fn infer(&self, ev: &Evidence) -> Result<Posteriors> {
        self.infer_with(ev, Init::Uniform).map(|(p, _)| p)
    }

    /// Runs the upward and downward sweeps and returns the marginals along
    /// with every edge message.
    pub fn infer_with(&self, ev: &Evidence, init: Init) -> Result<(Posteriors, MessageSet)> {
        let q = self.grammar.q();
        let ell = self.shape.ell();
        ev.validate(q, ell)?;
        let n_nodes = self.shape.n_nodes();
        let mut msg = MessageSet::new(q, n_nodes, self.empty.len(), init);

        for (i, leaf) in ev.leaves.iter().enumerate() {
            let n = self.shape.leaf_node(i);
            let slot = &mut msg.var_to_parent_factor[n * q..(n + 1) * q];
            match leaf {
                Some(s) => slot.iter_mut().enumerate().for_each(|(a, v)| *v = f64::from(a == *s)),
                None => slot.fill(1.0 / q as f64),
            }
        }
        match ev.root {
            Some(s) => msg.root_external.iter_mut().enumerate().for_each(|(a, v)| *v = f64::from(a == s)),
            None => msg.root_external.copy_from_slice(self.grammar.p0()),
        }

        // Upward: full factors from the deepest level to level k.
        let mut out = vec![0.0; q];
        for f in self.full.iter().rev() {
            out.fill(0.0);
            let l = MessageSet::at(&msg.var_to_parent_factor, q, f.left);
            let r = MessageSet::at(&msg.var_to_parent_factor, q, f.right);
            for e in &self.support {
                out[e.a] += e.m * l[e.b] * r[e.c];
            }
            normalize(&mut out)?;
            let u = f.parent;
            msg.child_factor_to_var[u * q..(u + 1) * q].copy_from_slice(&out);
            if u != 0 {
                msg.var_to_parent_factor[u * q..(u + 1) * q].copy_from_slice(&out);
            }
        }
        for (slot, ef) in self.empty.iter().enumerate() {
            let below = MessageSet::at(&msg.var_to_parent_factor, q, ef.node);
            let dst = &mut msg.empty_to_root[slot * q..(slot + 1) * q];
            for (a, d) in dst.iter_mut().enumerate() {
                *d = (0..q).map(|b| ef.table[a * q + b] * below[b]).sum();
            }
            normalize(dst)?;
        }

        let mut root = msg.root_external.clone();
        if self.k == 0 {
            let below = MessageSet::at(&msg.child_factor_to_var, q, 0);
            root.iter_mut().zip(below).for_each(|(r, b)| *r *= b);
        } else {
            for slot in 0..self.empty.len() {
                let inc = MessageSet::at(&msg.empty_to_root, q, slot);
                root.iter_mut().zip(inc).for_each(|(r, b)| *r *= b);
                normalize(&mut root)?;
            }
        }
        normalize(&mut root)?;

        // Downward.
        if self.k == 0 {
            msg.var_to_child_factor[..q].copy_from_slice(&msg.root_external);
        } else {
            for slot in 0..self.empty.len() {
                let mut to_factor = msg.root_external.clone();
                for other in (0..self.empty.len()).filter(|&o| o != slot) {
                    let inc = MessageSet::at(&msg.empty_to_root, q, other);
                    to_factor.iter_mut().zip(inc).for_each(|(t, b)| *t *= b);
                    normalize(&mut to_factor)?;
                }
                normalize(&mut to_factor)?;
                let ef = &self.empty[slot];
                let mut down = vec![0.0; q];
                for (b, d) in down.iter_mut().enumerate() {
                    *d = (0..q).map(|a| ef.table[a * q + b] * to_factor[a]).sum();
                }
                normalize(&mut down)?;
                msg.root_to_empty[slot * q..(slot + 1) * q].copy_from_slice(&to_factor);
                let n = ef.node;
                msg.parent_factor_to_var[n * q..(n + 1) * q].copy_from_slice(&down);
                if !self.shape.is_leaf(n) {
                    msg.var_to_child_factor[n * q..(n + 1) * q].copy_from_slice(&down);
                }
            }
        }
        let mut to_left = vec![0.0; q];
        let mut to_right = vec![0.0; q];
        for f in &self.full {
            to_left.fill(0.0);
            to_right.fill(0.0);
            let u = MessageSet::at(&msg.var_to_child_factor, q, f.parent);
            let l = MessageSet::at(&msg.var_to_parent_factor, q, f.left);
            let r = MessageSet::at(&msg.var_to_parent_factor, q, f.right);
            for e in &self.support {
                let w = e.m * u[e.a];
                to_left[e.b] += w * r[e.c];
                to_right[e.c] += w * l[e.b];
            }
            normalize(&mut to_left)?;
            normalize(&mut to_right)?;
            for (child, down) in [(f.left, &to_left), (f.right, &to_right)] {
                msg.parent_factor_to_var[child * q..(child + 1) * q].copy_from_slice(down);
                if !self.shape.is_leaf(child) {
                    msg.var_to_child_factor[child * q..(child + 1) * q].copy_from_slice(down);
                }
            }
        }

        let leaf_incoming = (0..self.shape.n_leaves())
            .map(|i| MessageSet::at(&msg.parent_factor_to_var, q, self.shape.leaf_node(i)).to_vec())
            .collect();
        let mut internal = vec![None; n_nodes];
        for f in &self.full {
            let n = f.parent;
            if n == 0 {
                continue;
            }
            let mut mu: Vec<f64> = MessageSet::at(&msg.parent_factor_to_var, q, n)
                .iter()
                .zip(MessageSet::at(&msg.child_factor_to_var, q, n))
                .map(|(a, b)| a * b)
                .collect();
            normalize(&mut mu)?;
            internal[n] = Some(mu);
        }
        Ok((Posteriors { root, leaf_incoming, internal }, msg))
    }
}

/// Root posterior of the fully filtered model: `p0[a] * prod_i P(x_i | a)`.
#[derive(Debug, Clone)]
pub struct NaiveBayes<'g> {
    grammar: &'g Grammar,
    ell: usize,
    leaf_tables: Vec<Vec<f64>>,
}

impl<'g> NaiveBayes<'g> {
    pub fn new(g: &'g Grammar, ell: usize) -> Result<Self> {
        let shape = Shape::new(ell)?;
        let leaf_tables = (0..shape.n_leaves())
            .map(|i| path_transition(g, &Shape::path(shape.leaf_node(i))))
            .collect();
        Ok(Self { grammar: g, ell, leaf_tables })
    }

    pub fn root_posterior(&self, ev: &Evidence) -> Result<Vec<f64>> {
        let q = self.grammar.q();
        ev.validate(q, self.ell)?;
        let mut post = self.grammar.p0().to_vec();
        for (table, leaf) in self.leaf_tables.iter().zip(&ev.leaves) {
            let x = leaf.ok_or_else(|| {
                Error::invalid("naive Bayes root posterior needs every leaf observed")
            })?;
            post.iter_mut().enumerate().for_each(|(a, p)| *p *= table[a * q + x]);
            normalize(&mut post)?;
        }
        Ok(post)
    }
}

pub fn naive_bayes_root(g: &Grammar, ell: usize, sequence: &[usize]) -> Result<Vec<f64>> {
    NaiveBayes::new(g, ell)?.root_posterior(&Evidence::observed(sequence, ell)?)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn root_map(post: &Posteriors) -> usize {
    argmax(&post.root)
}

pub fn leaf_map(post: &Posteriors, leaf: usize) -> usize {
    argmax(&post.leaf_incoming[leaf])
}
