//! Ground-truth marginals by exhaustive summation over hidden symbols.
//!
//! Independent of the message-passing code: the joint probability of a
//! complete assignment is evaluated directly from the generative definition
//! and summed over every completion of the evidence. Only for small trees.

use rayon::prelude::*;

use crate::bp::Posteriors;
use crate::grammar::{path_transition, Grammar};
use crate::tree::{check_levels, Evidence, Shape};
use crate::{Error, Result};

pub const DEFAULT_BUDGET: u128 = 1 << 26;

/// Symbols for every node of the level-`k` topology, level order. Levels
/// `1..k` are absent and must be `None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointAssignment {
    pub nodes: Vec<Option<usize>>,
}

fn present(node: usize, k: usize) -> bool {
    let d = Shape::depth(node);
    d == 0 || d >= k
}

struct Model {
    q: usize,
    k: usize,
    n_nodes: usize,
    p0: Vec<f64>,
    tensor: Vec<f64>,
    /// Path tables of the level-`k` nodes, by node index (empty otherwise).
    filtered: Vec<Vec<f64>>,
}

impl Model {
    fn new(g: &Grammar, ell: usize, k: usize) -> Result<Self> {
        let shape = check_levels(ell, k)?;
        let n_nodes = shape.n_nodes();
        let mut filtered = vec![Vec::new(); n_nodes];
        if k > 0 {
            for node in Shape::level(k) {
                filtered[node] = path_transition(g, &Shape::path(node));
            }
        }
        Ok(Self {
            q: g.q(),
            k,
            n_nodes,
            p0: g.p0().to_vec(),
            tensor: g.tensor().to_vec(),
            filtered,
        })
    }

    /// Factor contributed when `node` receives a value, given that every
    /// node before it in level order is already set.
    fn local(&self, node: usize, vals: &[usize]) -> f64 {
        let q = self.q;
        let d = Shape::depth(node);
        if node == 0 {
            self.p0[vals[0]]
        } else if self.k > 0 && d == self.k {
            self.filtered[node][vals[0] * q + vals[node]]
        } else if node.is_multiple_of(2) {
            let p = Shape::parent(node);
            self.tensor[(vals[p] * q + vals[node - 1]) * q + vals[node]]
        } else {
            1.0
        }
    }
}

/// `p0[root] * prod(empty-factor tables) * prod(M entries)`.
pub fn joint_probability(g: &Grammar, ell: usize, k: usize, asg: &JointAssignment) -> Result<f64> {
    let model = Model::new(g, ell, k)?;
    if asg.nodes.len() != model.n_nodes {
        return Err(Error::ShapeMismatch(format!(
            "assignment has {} nodes, tree has {}",
            asg.nodes.len(),
            model.n_nodes
        )));
    }
    let mut vals = vec![0; model.n_nodes];
    for (n, v) in asg.nodes.iter().enumerate() {
        match (present(n, k), v) {
            (true, Some(s)) if *s < g.q() => vals[n] = *s,
            (true, Some(s)) => return Err(Error::invalid(format!("symbol {s} at node {n} out of range"))),
            (true, None) => return Err(Error::invalid(format!("assignment is missing node {n}"))),
            (false, Some(_)) => return Err(Error::invalid(format!("node {n} is absent at k={k}"))),
            (false, None) => {}
        }
    }
    Ok((0..model.n_nodes)
        .filter(|&n| present(n, k))
        .map(|n| model.local(n, &vals))
        .product())
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn merge(&mut self, other: &Self) {
        self.add(other.sum);
        self.add(other.comp);
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

struct Accumulator {
    total: CompensatedSum,
    /// `n_nodes * q` per-value sums.
    marg: Vec<CompensatedSum>,
}

impl Accumulator {
    fn new(n_nodes: usize, q: usize) -> Self {
        Self { total: CompensatedSum::default(), marg: vec![CompensatedSum::default(); n_nodes * q] }
    }

    fn merge(&mut self, other: &Self) {
        self.total.merge(&other.total);
        self.marg.iter_mut().zip(&other.marg).for_each(|(a, b)| a.merge(b));
    }
}

/// Marginals of every present node under `ev`, indexed by node.
#[derive(Debug, Clone)]
pub struct Marginals {
    pub nodes: Vec<Option<Vec<f64>>>,
    /// Probability of the evidence.
    pub evidence_probability: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Oracle {
    pub budget: u128,
}

impl Default for Oracle {
    fn default() -> Self {
        Self { budget: DEFAULT_BUDGET }
    }
}

impl Oracle {
    pub fn with_budget(budget: u128) -> Self {
        Self { budget }
    }

    fn states(q: usize, hidden: usize) -> u128 {
        (q as u128).checked_pow(hidden as u32).unwrap_or(u128::MAX)
    }

    /// Exact marginals of every present node by summing the joint over all
    /// completions of the evidence.
    pub fn marginals(&self, g: &Grammar, ell: usize, k: usize, ev: &Evidence) -> Result<Marginals> {
        let model = Model::new(g, ell, k)?;
        ev.validate(g.q(), ell)?;
        let shape = Shape::new(ell)?;
        let q = model.q;

        // Per node: the clamped value, if any.
        let mut clamp: Vec<Option<usize>> = vec![None; model.n_nodes];
        clamp[0] = ev.root;
        for (i, leaf) in ev.leaves.iter().enumerate() {
            clamp[shape.leaf_node(i)] = *leaf;
        }
        let order: Vec<usize> = (0..model.n_nodes).filter(|&n| present(n, k)).collect();
        let hidden = order.iter().filter(|&&n| clamp[n].is_none()).count();
        let states = Self::states(q, hidden);
        if states > self.budget {
            return Err(Error::TooLarge { states, budget: self.budget });
        }

        let root_values: Vec<usize> = match clamp[0] {
            Some(s) => vec![s],
            None => (0..q).collect(),
        };
        let parts: Vec<Accumulator> = root_values
            .par_iter()
            .map(|&root| {
                let mut acc = Accumulator::new(model.n_nodes, q);
                let mut vals = vec![0usize; model.n_nodes];
                vals[0] = root;
                let w = model.local(0, &vals);
                if w > 0.0 {
                    descend(&model, &order, &clamp, 1, w, &mut vals, &mut acc);
                }
                acc
            })
            .collect();
        let mut acc = Accumulator::new(model.n_nodes, q);
        for part in &parts {
            acc.merge(part);
        }

        let z = acc.total.value();
        if z <= 0.0 {
            return Err(Error::InconsistentEvidence);
        }
        let nodes = (0..model.n_nodes)
            .map(|n| {
                present(n, k).then(|| (0..q).map(|v| acc.marg[n * q + v].value() / z).collect())
            })
            .collect();
        Ok(Marginals { nodes, evidence_probability: z })
    }

    /// Posteriors in the same layout as [`crate::bp::FactorGraph::infer`]:
    /// `leaf_incoming[i]` is leaf `i`'s marginal with leaf `i` masked.
    pub fn posteriors(&self, g: &Grammar, ell: usize, k: usize, ev: &Evidence) -> Result<Posteriors> {
        let any_observed = ev.leaves.iter().any(Option::is_some);
        // The largest run masks one extra observed leaf.
        let n_present = 1 + (k.max(1)..=ell).map(|t| 1usize << t).sum::<usize>();
        let n_observed = ev.leaves.len() - ev.n_masked() + usize::from(ev.root.is_some());
        let hidden = n_present - n_observed + usize::from(any_observed);
        let states = Self::states(g.q(), hidden);
        if states > self.budget {
            return Err(Error::TooLarge { states, budget: self.budget });
        }
        let base = self.marginals(g, ell, k, ev)?;
        let shape = Shape::new(ell)?;
        let leaf_incoming = (0..shape.n_leaves())
            .map(|i| {
                let node = shape.leaf_node(i);
                if ev.leaves[i].is_none() {
                    return Ok(base.nodes[node].clone().expect("leaves are present"));
                }
                let mut masked = ev.clone();
                masked.leaves[i] = None;
                let m = self.marginals(g, ell, k, &masked)?;
                Ok(m.nodes[node].clone().expect("leaves are present"))
            })
            .collect::<Result<Vec<_>>>()?;
        let internal = base
            .nodes
            .iter()
            .enumerate()
            .map(|(n, v)| if n == 0 || shape.is_leaf(n) { None } else { v.clone() })
            .collect();
        Ok(Posteriors {
            root: base.nodes[0].clone().expect("root is present"),
            leaf_incoming,
            internal,
        })
    }
}

fn descend(
    model: &Model,
    order: &[usize],
    clamp: &[Option<usize>],
    pos: usize,
    weight: f64,
    vals: &mut [usize],
    acc: &mut Accumulator,
) {
    if pos == order.len() {
        acc.total.add(weight);
        for &n in order {
            acc.marg[n * model.q + vals[n]].add(weight);
        }
        return;
    }
    let node = order[pos];
    let range = match clamp[node] {
        Some(s) => s..s + 1,
        None => 0..model.q,
    };
    for v in range {
        vals[node] = v;
        let w = weight * model.local(node, vals);
        if w > 0.0 {
            descend(model, order, clamp, pos + 1, w, vals, acc);
        }
    }
}

/// [`Oracle::posteriors`] with the default state budget.
pub fn enumerate_posteriors(g: &Grammar, ell: usize, k: usize, ev: &Evidence) -> Result<Posteriors> {
    Oracle::default().posteriors(g, ell, k, ev)
}
