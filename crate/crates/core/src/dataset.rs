//! Labeled datasets for root classification and masked language modeling.

use rand::Rng;
use rayon::prelude::*;

use crate::grammar::Grammar;
use crate::rng::{self, tag};
use crate::tree::{TreeSample, TreeSampler};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Task {
    #[serde(rename = "classification")]
    RootClassification,
    #[serde(rename = "mlm")]
    MaskedLm,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::RootClassification => "classification",
            Task::MaskedLm => "mlm",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" | "root" => Ok(Task::RootClassification),
            "mlm" => Ok(Task::MaskedLm),
            other => Err(Error::invalid(format!(
                "unknown task '{other}' (expected 'classification' or 'mlm')"
            ))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskLabel {
    pub pos: usize,
    pub symbol: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Labels {
    Root(Vec<usize>),
    Masked(Vec<MaskLabel>),
}

impl Labels {
    pub fn task(&self) -> Task {
        match self {
            Labels::Root(_) => Task::RootClassification,
            Labels::Masked(_) => Task::MaskedLm,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Labels::Root(v) => v.len(),
            Labels::Masked(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub grammar_hash: String,
    pub q: usize,
    pub ell: usize,
    pub k: usize,
    pub master_seed: u64,
    /// `P x 2^ell` leaf symbols, row-major.
    pub sequences: Vec<usize>,
    pub labels: Labels,
}

impl Dataset {
    pub fn task(&self) -> Task {
        self.labels.task()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sequence(&self, i: usize) -> &[usize] {
        let n = 1 << self.ell;
        &self.sequences[i * n..(i + 1) * n]
    }
}

/// One generated record: the tree drawn from seed `derive_seed(master, index)`
/// and, for MLM, a uniform mask position drawn from that seed's `MASK` child.
#[derive(Debug, Clone)]
pub struct Record {
    pub sample_seed: u64,
    pub tree: TreeSample,
    pub mask_pos: Option<usize>,
}

pub fn sample_seed(master_seed: u64, index: u64) -> u64 {
    rng::derive_seed(master_seed, index)
}

pub fn draw_mask_position(sample_seed: u64, n_leaves: usize) -> usize {
    rng::child_stream(sample_seed, tag::MASK).random_range(0..n_leaves)
}

pub fn record(sampler: &TreeSampler<'_>, task: Task, master_seed: u64, index: u64) -> Record {
    let seed = sample_seed(master_seed, index);
    let tree = sampler.sample(seed);
    let mask_pos = match task {
        Task::RootClassification => None,
        Task::MaskedLm => Some(draw_mask_position(seed, sampler.shape().n_leaves())),
    };
    Record { sample_seed: seed, tree, mask_pos }
}

/// Generates `p` independent records in parallel; record `i` depends only on
/// `(grammar, ell, k, task, master_seed, i)`.
pub fn generate_dataset(
    g: &Grammar,
    grammar_hash: &str,
    ell: usize,
    k: usize,
    p: usize,
    task: Task,
    master_seed: u64,
) -> Result<Dataset> {
    if p == 0 {
        return Err(Error::invalid("dataset size P must be at least 1"));
    }
    if g.q() > u8::MAX as usize {
        return Err(Error::invalid("vocabulary does not fit the byte sequence format"));
    }
    let sampler = TreeSampler::new(g, ell, k)?;
    let records: Vec<Record> = (0..p as u64)
        .into_par_iter()
        .map(|i| record(&sampler, task, master_seed, i))
        .collect();
    let mut sequences = Vec::with_capacity(p << ell);
    for r in &records {
        sequences.extend(r.tree.leaves());
    }
    let labels = match task {
        Task::RootClassification => Labels::Root(records.iter().map(|r| r.tree.root()).collect()),
        Task::MaskedLm => Labels::Masked(
            records
                .iter()
                .map(|r| {
                    let pos = r.mask_pos.expect("mlm records carry a mask");
                    MaskLabel { pos, symbol: r.tree.leaves()[pos] }
                })
                .collect(),
        ),
    };
    Ok(Dataset {
        grammar_hash: grammar_hash.to_owned(),
        q: g.q(),
        ell,
        k,
        master_seed,
        sequences,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::build_grammar;
    use crate::tree::sample_tree;

    #[test]
    fn single_record_matches_sample_tree() {
        let g = build_grammar(4, 1.0, 1).unwrap();
        for task in [Task::RootClassification, Task::MaskedLm] {
            let ds = generate_dataset(&g, "h", 4, 0, 1, task, 99).unwrap();
            let tree = sample_tree(&g, 4, 0, sample_seed(99, 0)).unwrap();
            assert_eq!(ds.sequence(0), tree.leaves().as_slice());
            match &ds.labels {
                Labels::Root(r) => assert_eq!(r, &vec![tree.root()]),
                Labels::Masked(m) => {
                    assert_eq!(m[0].symbol, tree.leaves()[m[0].pos]);
                    assert!(m[0].pos < 16);
                }
            }
        }
    }

    #[test]
    fn zero_size_rejected() {
        let g = build_grammar(4, 1.0, 1).unwrap();
        assert!(generate_dataset(&g, "h", 4, 0, 0, Task::MaskedLm, 1).is_err());
        assert!(generate_dataset(&g, "h", 4, 5, 3, Task::MaskedLm, 1).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let g = build_grammar(4, 1.0, 1).unwrap();
        let a = generate_dataset(&g, "h", 4, 2, 64, Task::MaskedLm, 5).unwrap();
        let b = generate_dataset(&g, "h", 4, 2, 64, Task::MaskedLm, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mask_positions_cover_all_leaves() {
        let g = build_grammar(2, 1.0, 1).unwrap();
        let ds = generate_dataset(&g, "h", 2, 0, 400, Task::MaskedLm, 5).unwrap();
        let Labels::Masked(m) = &ds.labels else { unreachable!() };
        let mut seen = [false; 4];
        for l in m {
            seen[l.pos] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn task_names_parse() {
        assert_eq!("mlm".parse::<Task>().unwrap(), Task::MaskedLm);
        assert_eq!("classification".parse::<Task>().unwrap(), Task::RootClassification);
        assert!("foo".parse::<Task>().is_err());
    }
}
