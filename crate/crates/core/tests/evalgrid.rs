use hibp_core::bp::argmax;
use hibp_core::dataset::Task;
use hibp_core::evalgrid::{binomial_stderr, mc_accuracy, reference_curves};
use hibp_core::grammar::build_grammar;
use hibp_core::oracle::Oracle;
use hibp_core::tree::{apply_mask, sample_tree, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

/// Mismatched MLM accuracy recomputed with enumeration on its own sample
/// stream.
fn enumerated_mlm_accuracy(q: usize, ell: usize, k_data: usize, k_bp: usize, n: u64) -> f64 {
    let g = build_grammar(q, 1.0, 31).unwrap();
    let shape = Shape::new(ell).unwrap();
    let oracle = Oracle::default();
    let hits: u64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha20Rng::seed_from_u64(i ^ 0x5eed_0000_0000);
            let t = sample_tree(&g, ell, k_data, rng.random()).unwrap();
            let pos = rng.random_range(0..shape.n_leaves());
            let ev = apply_mask(&t.leaves(), &[pos], ell).unwrap();
            let m = oracle.marginals(&g, ell, k_bp, &ev).unwrap();
            let p = m.nodes[shape.leaf_node(pos)].as_ref().unwrap();
            u64::from(argmax(p) == t.leaves()[pos])
        })
        .sum();
    hits as f64 / n as f64
}

#[test]
fn mismatched_mlm_agrees_with_enumeration() {
    let (q, ell, n) = (2, 3, 100_000);
    let g = build_grammar(q, 1.0, 31).unwrap();
    let est = mc_accuracy(&g, ell, 0, 2, Task::MaskedLm, n, 77).unwrap();
    let other = enumerated_mlm_accuracy(q, ell, 0, 2, n as u64);
    let se = (est.stderr.powi(2) + binomial_stderr(other, n).powi(2)).sqrt();
    assert!((est.accuracy - other).abs() < 3.0 * se, "{} vs {other} (se {se})", est.accuracy);
}

#[test]
fn csv_rows_are_consistent() {
    let g = build_grammar(4, 1.0, 2).unwrap();
    let grid = reference_curves(&g, 2, Task::MaskedLm, 500, 9).unwrap();
    let csv = grid.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("task,k_data,k_bp,n,accuracy,stderr,seed"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 9);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0], "mlm");
        assert_eq!(row[1].parse::<usize>().unwrap(), i / 3);
        assert_eq!(row[2].parse::<usize>().unwrap(), i % 3);
        assert_eq!(row[3], "500");
        let acc: f64 = row[4].parse().unwrap();
        let se: f64 = row[5].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
        assert_eq!(se, binomial_stderr(acc, 500));
        assert_eq!(row[6], "9");
        assert_eq!(acc, grid.cell(i / 3, i % 3).accuracy);
    }
}

#[test]
fn rows_are_paired() {
    let g = build_grammar(4, 1.0, 2).unwrap();
    let grid = reference_curves(&g, 3, Task::RootClassification, 2000, 4).unwrap();
    for k_data in 0..=3 {
        assert_eq!(grid.paired_stderr(k_data, 1, 1), 0.0);
        let single = mc_accuracy(&g, 3, k_data, 2, Task::RootClassification, 2000, 4).unwrap();
        assert_eq!(&single, grid.cell(k_data, 2));
    }
}
