//! Monte-Carlo accuracy of exact inference over `(k_data, k_bp)` grids.

use rayon::prelude::*;
use serde::Serialize;

use crate::bp::{build_graph, leaf_map, root_map, FactorGraph};
use crate::dataset::{record, Record, Task};
use crate::embed::{build_embedding, encode_tokens};
use crate::grammar::Grammar;
use crate::rng::{self, tag};
use crate::tree::{apply_mask, check_levels, Evidence, TreeSampler};
use crate::{Error, Result};

pub const DEFAULT_N_CLASSIFICATION: usize = 10_000;
pub const DEFAULT_N_MLM: usize = 100_000;

pub fn default_n(task: Task) -> usize {
    match task {
        Task::RootClassification => DEFAULT_N_CLASSIFICATION,
        Task::MaskedLm => DEFAULT_N_MLM,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyEstimate {
    pub task: Task,
    pub k_data: usize,
    pub k_bp: usize,
    pub n: usize,
    pub accuracy: f64,
    /// Binomial standard error `sqrt(acc (1 - acc) / n)`.
    pub stderr: f64,
    pub seed: u64,
    /// Mean `-ln p(true label)`, with `p` floored at the smallest positive
    /// normal float.
    pub cross_entropy: f64,
}

pub fn binomial_stderr(accuracy: f64, n: usize) -> f64 {
    (accuracy * (1.0 - accuracy) / n as f64).sqrt()
}

/// Seed of the sample stream shared by every cell of grid row `k_data`.
pub fn row_seed(seed: u64, k_data: usize) -> u64 {
    rng::derive_seed(rng::derive_seed(seed, tag::GRID_ROW), k_data as u64)
}

/// The `n` records of a grid row, in index order.
pub fn row_records(g: &Grammar, ell: usize, k_data: usize, task: Task, n: usize, seed: u64) -> Result<Vec<Record>> {
    let sampler = TreeSampler::new(g, ell, k_data)?;
    let master = row_seed(seed, k_data);
    Ok((0..n as u64).into_par_iter().map(|i| record(&sampler, task, master, i)).collect())
}

pub fn record_evidence(r: &Record) -> Evidence {
    let leaves = r.tree.leaves();
    let masked: Vec<usize> = r.mask_pos.into_iter().collect();
    apply_mask(&leaves, &masked, r.tree.ell).expect("record shape is consistent")
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    correct: bool,
    p_true: f64,
}

fn score(fg: &FactorGraph<'_>, task: Task, r: &Record) -> Result<Outcome> {
    let post = fg.infer(&record_evidence(r))?;
    Ok(match task {
        Task::RootClassification => {
            let truth = r.tree.root();
            Outcome { correct: root_map(&post) == truth, p_true: post.root[truth] }
        }
        Task::MaskedLm => {
            let pos = r.mask_pos.expect("mlm record has a mask");
            let truth = r.tree.leaves()[pos];
            Outcome { correct: leaf_map(&post, pos) == truth, p_true: post.leaf_incoming[pos][truth] }
        }
    })
}

fn estimate(task: Task, k_data: usize, k_bp: usize, seed: u64, outcomes: &[Outcome]) -> AccuracyEstimate {
    let n = outcomes.len();
    let hits = outcomes.iter().filter(|o| o.correct).count();
    let accuracy = hits as f64 / n as f64;
    let ce: f64 = outcomes.iter().map(|o| -o.p_true.max(f64::MIN_POSITIVE).ln()).sum();
    AccuracyEstimate {
        task,
        k_data,
        k_bp,
        n,
        accuracy,
        stderr: binomial_stderr(accuracy, n),
        seed,
        cross_entropy: ce / n as f64,
    }
}

fn evaluate(fg: &FactorGraph<'_>, task: Task, records: &[Record]) -> Result<Vec<Outcome>> {
    records.par_iter().map(|r| score(fg, task, r)).collect()
}

/// Accuracy of BP on graph `k_bp` for `n` samples generated at `k_data`.
pub fn mc_accuracy(
    g: &Grammar,
    ell: usize,
    k_data: usize,
    k_bp: usize,
    task: Task,
    n: usize,
    seed: u64,
) -> Result<AccuracyEstimate> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    check_levels(ell, k_data)?;
    let fg = build_graph(g, ell, k_bp)?;
    let records = row_records(g, ell, k_data, task, n, seed)?;
    Ok(estimate(task, k_data, k_bp, seed, &evaluate(&fg, task, &records)?))
}

/// Every `(k_data, k_bp)` cell. Cells of one row are scored on the same
/// samples, so differences along a row are paired.
#[derive(Debug, Clone)]
pub struct ReferenceGrid {
    pub task: Task,
    pub ell: usize,
    pub n: usize,
    pub seed: u64,
    pub cells: Vec<AccuracyEstimate>,
    correct: Vec<Vec<bool>>,
}

impl ReferenceGrid {
    fn idx(&self, k_data: usize, k_bp: usize) -> usize {
        k_data * (self.ell + 1) + k_bp
    }

    pub fn cell(&self, k_data: usize, k_bp: usize) -> &AccuracyEstimate {
        &self.cells[self.idx(k_data, k_bp)]
    }

    /// Standard error of `acc(k_data, a) - acc(k_data, b)` from the paired
    /// per-sample differences.
    pub fn paired_stderr(&self, k_data: usize, a: usize, b: usize) -> f64 {
        let xa = &self.correct[self.idx(k_data, a)];
        let xb = &self.correct[self.idx(k_data, b)];
        let n = xa.len() as f64;
        let diffs: Vec<f64> = xa.iter().zip(xb).map(|(&p, &q)| f64::from(p) - f64::from(q)).collect();
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        (var / n).sqrt()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,k_data,k_bp,n,accuracy,stderr,seed\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{:?},{:?},{}\n",
                c.task, c.k_data, c.k_bp, c.n, c.accuracy, c.stderr, c.seed
            ));
        }
        out
    }
}

pub fn reference_curves(g: &Grammar, ell: usize, task: Task, n: usize, seed: u64) -> Result<ReferenceGrid> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let graphs: Vec<FactorGraph<'_>> = (0..=ell).map(|k| build_graph(g, ell, k)).collect::<Result<_>>()?;
    let mut cells = Vec::new();
    let mut correct = Vec::new();
    for k_data in 0..=ell {
        let records = row_records(g, ell, k_data, task, n, seed)?;
        for (k_bp, fg) in graphs.iter().enumerate() {
            let outcomes = evaluate(fg, task, &records)?;
            correct.push(outcomes.iter().map(|o| o.correct).collect());
            cells.push(estimate(task, k_data, k_bp, seed, &outcomes));
        }
    }
    Ok(ReferenceGrid { task, ell, n, seed, cells, correct })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbedReport {
    pub beta: f64,
    pub cases: usize,
    pub max_abs_dev: f64,
    pub mean_abs_dev: f64,
    pub per_block_attention_leakage: Vec<f64>,
}

/// Deviation of the embedded transformer from BP on `n` single-mask cases
/// drawn at level `k`, compared at every leaf position. All betas see the
/// same cases.
pub fn embed_vs_bp_report(
    g: &Grammar,
    ell: usize,
    k: usize,
    betas: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<EmbedReport>> {
    if n == 0 {
        return Err(Error::invalid("case count must be at least 1"));
    }
    let fg = build_graph(g, ell, k)?;
    let sampler = TreeSampler::new(g, ell, k)?;
    let master = rng::derive_seed(seed, tag::EMBED);
    let records: Vec<Record> =
        (0..n as u64).into_par_iter().map(|i| record(&sampler, Task::MaskedLm, master, i)).collect();
    let references: Vec<Vec<Vec<f64>>> = records
        .par_iter()
        .map(|r| fg.infer(&record_evidence(r)).map(|p| p.leaf_incoming))
        .collect::<Result<_>>()?;

    betas
        .iter()
        .map(|&beta| {
            let et = build_embedding(g, ell, k, beta)?;
            let devs: Vec<(f64, f64)> = records
                .par_iter()
                .zip(&references)
                .map(|(r, reference)| {
                    let out = et.forward(&encode_tokens(&record_evidence(r), g, ell)?)?;
                    let mut max: f64 = 0.0;
                    let mut sum = 0.0;
                    for (o, b) in out.iter().flatten().zip(reference.iter().flatten()) {
                        let d = (o - b).abs();
                        max = max.max(d);
                        sum += d;
                    }
                    Ok((max, sum))
                })
                .collect::<Result<_>>()?;
            let entries = (n << ell) * g.q();
            Ok(EmbedReport {
                beta,
                cases: n,
                max_abs_dev: devs.iter().map(|d| d.0).fold(0.0, f64::max),
                mean_abs_dev: devs.iter().map(|d| d.1).sum::<f64>() / entries as f64,
                per_block_attention_leakage: et.attention_leakage(),
            })
        })
        .collect()
}
