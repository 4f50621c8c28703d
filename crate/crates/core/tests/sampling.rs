//! Monte-Carlo checks of the tree sampler against exact tables.

use hibp_core::grammar::{build_grammar, path_transition, Grammar};
use hibp_core::oracle::{joint_probability, JointAssignment};
use hibp_core::tree::{sample_tree, Shape, TreeSampler};
use rayon::prelude::*;

/// Per leaf, counts of (root, leaf) pairs.
fn leaf_counts(g: &Grammar, ell: usize, k: usize, n: u64, seed: u64) -> Vec<Vec<u64>> {
    let q = g.q();
    let sampler = TreeSampler::new(g, ell, k).unwrap();
    let leaves = 1usize << ell;
    (0..n)
        .into_par_iter()
        .fold(
            || vec![vec![0u64; q * q]; leaves],
            |mut acc, i| {
                let t = sampler.sample(seed.wrapping_add(i).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                let root = t.root();
                for (j, &x) in t.leaves().iter().enumerate() {
                    acc[j][root * q + x] += 1;
                }
                acc
            },
        )
        .reduce(
            || vec![vec![0u64; q * q]; leaves],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    x.iter_mut().zip(y).for_each(|(u, v)| *u += v);
                }
                a
            },
        )
}

fn conditional(counts: &[u64], q: usize, a: usize, b: usize) -> (f64, f64) {
    let row: u64 = counts[a * q..(a + 1) * q].iter().sum();
    let p = counts[a * q + b] as f64 / row as f64;
    (p, row as f64)
}

#[test]
fn filtered_leaves_follow_path_tables() {
    let g = build_grammar(4, 1.0, 3).unwrap();
    let (ell, q) = (2, 4);
    let counts = leaf_counts(&g, ell, 2, 1_000_000, 17);
    let shape = Shape::new(ell).unwrap();
    let mut worst: f64 = 0.0;
    for (j, c) in counts.iter().enumerate() {
        let table = path_transition(&g, &Shape::path(shape.leaf_node(j)));
        for a in 0..q {
            for b in 0..q {
                let (p_hat, n_row) = conditional(c, q, a, b);
                let p = table[a * q + b];
                let se = (p * (1.0 - p) / n_row).sqrt().max(1e-12);
                worst = worst.max((p_hat - p).abs() / se);
            }
        }
    }
    assert!(worst < 4.0, "largest deviation {worst} standard errors");
}

#[test]
fn filtering_preserves_leaf_conditionals() {
    let g = build_grammar(3, 1.0, 9).unwrap();
    let (ell, q, n) = (3, 3, 200_000);
    let full = leaf_counts(&g, ell, 0, n, 1);
    for k in 1..=ell {
        let filtered = leaf_counts(&g, ell, k, n, 1000 + k as u64);
        let mut worst: f64 = 0.0;
        for (cf, ck) in full.iter().zip(&filtered) {
            for a in 0..q {
                for b in 0..q {
                    let (p0, n0) = conditional(cf, q, a, b);
                    let (p1, n1) = conditional(ck, q, a, b);
                    let pooled = (p0 * n0 + p1 * n1) / (n0 + n1);
                    let se = (pooled * (1.0 - pooled) * (1.0 / n0 + 1.0 / n1)).sqrt().max(1e-12);
                    worst = worst.max((p0 - p1).abs() / se);
                }
            }
        }
        assert!(worst < 4.5, "k={k}: largest deviation {worst} standard errors");
    }
}

#[test]
fn full_trees_respect_support() {
    let g = build_grammar(4, 1.0, 5).unwrap();
    for seed in 0..2000 {
        let t = sample_tree(&g, 4, 0, seed).unwrap();
        for parent in 0..15 {
            let (l, r) = Shape::children(parent);
            let a = t.nodes[parent].unwrap();
            let (b, c) = (t.nodes[l].unwrap(), t.nodes[r].unwrap());
            assert_eq!(g.partition().owner(b, c), a);
        }
    }
}

#[test]
fn joint_frequencies_match_joint_probability() {
    // q=2, ell=2, k=1: seven present nodes, 128 assignments.
    let g = build_grammar(2, 1.0, 21).unwrap();
    let (ell, k, n) = (2, 1, 10_000_000u64);
    let sampler = TreeSampler::new(&g, ell, k).unwrap();
    let code = |nodes: &[Option<usize>]| nodes.iter().flatten().fold(0usize, |acc, &s| acc * 2 + s);
    let counts = (0..n)
        .into_par_iter()
        .fold(
            || vec![0u64; 128],
            |mut acc, i| {
                acc[code(&sampler.sample(i).nodes)] += 1;
                acc
            },
        )
        .reduce(|| vec![0u64; 128], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
    let mut total = 0.0;
    let mut worst: f64 = 0.0;
    for c in 0..128usize {
        let values: Vec<usize> = (0..7).rev().map(|bit| (c >> bit) & 1).collect();
        let nodes: Vec<Option<usize>> = values.into_iter().map(Some).collect();
        let p = joint_probability(&g, ell, k, &JointAssignment { nodes }).unwrap();
        total += p;
        let p_hat = counts[c] as f64 / n as f64;
        if p == 0.0 {
            assert_eq!(counts[c], 0, "assignment {c:07b} has zero probability");
            continue;
        }
        let se = (p * (1.0 - p) / n as f64).sqrt();
        worst = worst.max((p_hat - p).abs() / se);
    }
    assert!((total - 1.0).abs() < 1e-12);
    assert!(worst < 4.5, "largest deviation {worst} standard errors");
}
