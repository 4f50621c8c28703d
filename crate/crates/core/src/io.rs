//! On-disk formats: grammar JSON, dataset directories, run manifests.
//!
//! Everything on disk is 1-based (symbols `1..=q`, leaf positions
//! `1..=2^ell`). Floats in grammar files are written with 17 significant
//! digits so that a write/read cycle is bit-exact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, Labels, MaskLabel, Task};
use crate::grammar::{Grammar, Logit, Partition};
use crate::tree::{Shape, TreeSample};
use crate::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;
/// Row-sum tolerance accepted when reading a grammar file.
pub const READ_TOL: f64 = 1e-9;

/// JSON formatter writing every float as `{:.16e}`.
struct SigDigits17;

impl serde_json::ser::Formatter for SigDigits17 {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

fn to_json_17<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigits17);
    value.serialize(&mut ser).expect("in-memory serialization cannot fail");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path) -> impl FnOnce(serde_json::Error) -> Error + '_ {
    move |source| Error::Parse { path: path.to_path_buf(), source }
}

#[derive(Debug, Serialize, Deserialize)]
struct LogitEntry {
    a: usize,
    b: usize,
    c: usize,
    xi: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GrammarFile {
    q: usize,
    sigma: f64,
    seed: u64,
    p0: Vec<f64>,
    partition: Vec<Vec<[usize; 2]>>,
    logits: Vec<LogitEntry>,
    tensor: Vec<f64>,
}

/// Canonical grammar document; its SHA-256 is the grammar hash.
pub fn grammar_to_json(g: &Grammar) -> String {
    let file = GrammarFile {
        q: g.q(),
        sigma: g.sigma(),
        seed: g.seed(),
        p0: g.p0().to_vec(),
        partition: g
            .partition()
            .blocks()
            .iter()
            .map(|block| block.iter().map(|&(b, c)| [b + 1, c + 1]).collect())
            .collect(),
        logits: g
            .logits()
            .iter()
            .map(|l| LogitEntry { a: l.a + 1, b: l.b + 1, c: l.c + 1, xi: l.xi })
            .collect(),
        tensor: g.tensor().to_vec(),
    };
    to_json_17(&file)
}

fn one_based(v: usize, q: usize, what: &str) -> Result<usize> {
    if (1..=q).contains(&v) {
        Ok(v - 1)
    } else {
        Err(Error::Validation(format!("{what} {v} outside 1..={q}")))
    }
}

pub fn grammar_from_json(text: &str, path: &Path) -> Result<Grammar> {
    let file: GrammarFile = serde_json::from_str(text).map_err(parse_err(path))?;
    let q = file.q;
    if q == 0 {
        return Err(Error::Validation("q must be at least 1".into()));
    }
    let blocks = file
        .partition
        .iter()
        .map(|block| {
            block
                .iter()
                .map(|&[b, c]| Ok((one_based(b, q, "symbol")?, one_based(c, q, "symbol")?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let partition = Partition::new(q, blocks)?;
    let logits = file
        .logits
        .iter()
        .map(|l| {
            let logit = Logit {
                a: one_based(l.a, q, "symbol")?,
                b: one_based(l.b, q, "symbol")?,
                c: one_based(l.c, q, "symbol")?,
                xi: l.xi,
            };
            if partition.owner(logit.b, logit.c) != logit.a {
                return Err(Error::Validation(format!(
                    "logit ({},{},{}) lies off the partition support",
                    l.a, l.b, l.c
                )));
            }
            Ok(logit)
        })
        .collect::<Result<Vec<_>>>()?;
    if logits.len() != q * q {
        return Err(Error::Validation(format!("expected {} logits, found {}", q * q, logits.len())));
    }
    Grammar::from_parts(q, file.sigma, file.seed, partition, logits, file.tensor, file.p0, READ_TOL)
}

pub fn grammar_hash(g: &Grammar) -> String {
    hex::encode(Sha256::digest(grammar_to_json(g).as_bytes()))
}

pub fn write_grammar(g: &Grammar, path: &Path) -> Result<()> {
    fs::write(path, grammar_to_json(g)).map_err(io_err(path))
}

pub fn read_grammar(path: &Path) -> Result<Grammar> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    grammar_from_json(&text, path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub grammar_hash: String,
    pub q: usize,
    pub ell: usize,
    pub k: usize,
    #[serde(rename = "P")]
    pub p: usize,
    pub task: Task,
    pub master_seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskLine {
    pos: usize,
    #[serde(rename = "true")]
    truth: usize,
}

pub const META_FILE: &str = "meta.json";
pub const SEQUENCES_FILE: &str = "sequences.u8";
pub const LABELS_FILE: &str = "labels.u8";
pub const MASKS_FILE: &str = "masks.jsonl";

fn to_byte(symbol: usize) -> u8 {
    u8::try_from(symbol + 1).expect("vocabulary fits in a byte")
}

/// Writes `meta.json`, `sequences.u8` and either `labels.u8` or
/// `masks.jsonl`. Returns the paths written.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = DatasetMeta {
        format_version: DATASET_FORMAT_VERSION,
        grammar_hash: ds.grammar_hash.clone(),
        q: ds.q,
        ell: ds.ell,
        k: ds.k,
        p: ds.len(),
        task: ds.task(),
        master_seed: ds.master_seed,
    };
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        written.push(path);
        Ok(())
    };
    let mut meta_text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    meta_text.push('\n');
    put(META_FILE, meta_text.into_bytes())?;
    put(SEQUENCES_FILE, ds.sequences.iter().map(|&s| to_byte(s)).collect())?;
    match &ds.labels {
        Labels::Root(roots) => put(LABELS_FILE, roots.iter().map(|&s| to_byte(s)).collect())?,
        Labels::Masked(masks) => {
            let mut text = String::new();
            for m in masks {
                let line = MaskLine { pos: m.pos + 1, truth: m.symbol + 1 };
                text.push_str(&serde_json::to_string(&line).expect("mask serializes"));
                text.push('\n');
            }
            put(MASKS_FILE, text.into_bytes())?;
        }
    }
    Ok(written)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join(META_FILE);
    let meta_text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text).map_err(parse_err(&meta_path))?;
    if meta.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Validation(format!("unsupported format_version {}", meta.format_version)));
    }
    let shape = Shape::new(meta.ell)?;
    if meta.k > meta.ell || meta.p == 0 || meta.q == 0 || meta.q > 255 {
        return Err(Error::Validation("meta.json holds invalid q/ell/k/P".into()));
    }
    let n = shape.n_leaves();
    let seq_path = dir.join(SEQUENCES_FILE);
    let raw = fs::read(&seq_path).map_err(io_err(&seq_path))?;
    if raw.len() != meta.p * n {
        return Err(Error::Validation(format!(
            "{} holds {} bytes, expected P * 2^ell = {}",
            seq_path.display(),
            raw.len(),
            meta.p * n
        )));
    }
    let sequences = raw
        .iter()
        .map(|&b| one_based(usize::from(b), meta.q, "symbol"))
        .collect::<Result<Vec<_>>>()?;
    let labels = match meta.task {
        Task::RootClassification => {
            let path = dir.join(LABELS_FILE);
            let raw = fs::read(&path).map_err(io_err(&path))?;
            if raw.len() != meta.p {
                return Err(Error::Validation(format!("{} holds {} labels, expected {}", path.display(), raw.len(), meta.p)));
            }
            Labels::Root(raw.iter().map(|&b| one_based(usize::from(b), meta.q, "label")).collect::<Result<_>>()?)
        }
        Task::MaskedLm => {
            let path = dir.join(MASKS_FILE);
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let mut masks = Vec::with_capacity(meta.p);
            for (row, line) in text.lines().enumerate() {
                let m: MaskLine = serde_json::from_str(line).map_err(|e| Error::Validation(format!(
                    "{} line {}: {e}",
                    path.display(),
                    row + 1
                )))?;
                let pos = one_based(m.pos, n, "mask position")?;
                let symbol = one_based(m.truth, meta.q, "symbol")?;
                if row < meta.p && sequences[row * n + pos] != symbol {
                    return Err(Error::Validation(format!(
                        "{} line {}: true symbol disagrees with the sequence",
                        path.display(),
                        row + 1
                    )));
                }
                masks.push(MaskLabel { pos, symbol });
            }
            if masks.len() != meta.p {
                return Err(Error::Validation(format!("{} holds {} masks, expected {}", path.display(), masks.len(), meta.p)));
            }
            Labels::Masked(masks)
        }
    };
    Ok(Dataset {
        grammar_hash: meta.grammar_hash,
        q: meta.q,
        ell: meta.ell,
        k: meta.k,
        master_seed: meta.master_seed,
        sequences,
        labels,
    })
}

/// Reads a dataset and checks that it was generated from `g`.
pub fn read_dataset_for(dir: &Path, g: &Grammar) -> Result<Dataset> {
    let ds = read_dataset(dir)?;
    let expected = grammar_hash(g);
    if ds.grammar_hash != expected || ds.q != g.q() {
        return Err(Error::Integrity(format!(
            "dataset grammar_hash {} does not match grammar {expected}",
            ds.grammar_hash
        )));
    }
    Ok(ds)
}

/// One line of `sample` output: 1-based symbols, `null` for absent nodes.
pub fn tree_to_json(t: &TreeSample) -> String {
    #[derive(Serialize)]
    struct Line {
        ell: usize,
        k: usize,
        nodes: Vec<Option<usize>>,
    }
    let line = Line { ell: t.ell, k: t.k, nodes: t.nodes.iter().map(|n| n.map(|s| s + 1)).collect() };
    serde_json::to_string(&line).expect("tree serializes")
}

/// Provenance record written by every command-line run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub argv: Vec<String>,
    pub grammar_hash: Option<String>,
    pub parameters: serde_json::Map<String, serde_json::Value>,
    pub seeds: serde_json::Map<String, serde_json::Value>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_secs: f64,
    pub wall_clock_secs: f64,
}

pub fn write_manifest(m: &RunManifest, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(m).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(parse_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_dataset;
    use crate::grammar::build_grammar;
    use proptest::prelude::*;

    #[test]
    fn floats_use_17_digits() {
        let g = build_grammar(2, 1.0, 1).unwrap();
        let text = grammar_to_json(&g);
        assert!(text.contains("\"sigma\":1.0000000000000000e0"));
        assert!(text.contains("\"p0\":[5.0000000000000000e-1,5.0000000000000000e-1]"));
    }

    #[test]
    fn grammar_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        let g = build_grammar(4, 1.0, 7).unwrap();
        write_grammar(&g, &path).unwrap();
        let back = read_grammar(&path).unwrap();
        assert_eq!(g, back);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(g.tensor()), bits(back.tensor()));
        assert_eq!(grammar_hash(&g), grammar_hash(&back));
    }

    #[test]
    fn bad_rows_are_rejected() {
        let g = build_grammar(2, 1.0, 7).unwrap();
        let mut doc: serde_json::Value = serde_json::from_str(&grammar_to_json(&g)).unwrap();
        let t = doc["tensor"].as_array_mut().unwrap();
        let idx = t.iter().position(|v| v.as_f64().unwrap() > 0.0).unwrap();
        t[idx] = serde_json::json!(t[idx].as_f64().unwrap() * 0.9);
        let err = grammar_from_json(&doc.to_string(), Path::new("x.json")).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = grammar_from_json("{\"q\": 2,\n \"sigma\": }", Path::new("g.json")).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Parse { .. }));
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn dataset_round_trip_is_byte_identical() {
        let g = build_grammar(4, 1.0, 7).unwrap();
        let hash = grammar_hash(&g);
        for task in [Task::RootClassification, Task::MaskedLm] {
            let ds = generate_dataset(&g, &hash, 3, 1, 8, task, 3).unwrap();
            let a = tempfile::tempdir().unwrap();
            let b = tempfile::tempdir().unwrap();
            let files = write_dataset(&ds, a.path()).unwrap();
            let back = read_dataset_for(a.path(), &g).unwrap();
            assert_eq!(back, ds);
            write_dataset(&back, b.path()).unwrap();
            for f in files {
                let name = f.file_name().unwrap();
                assert_eq!(fs::read(&f).unwrap(), fs::read(b.path().join(name)).unwrap());
            }
            assert_eq!(fs::read(a.path().join(SEQUENCES_FILE)).unwrap().len(), 8 * 8);
        }
    }

    #[test]
    fn hash_mismatch_is_an_integrity_error() {
        let g = build_grammar(4, 1.0, 7).unwrap();
        let other = build_grammar(4, 1.0, 8).unwrap();
        let ds = generate_dataset(&g, &grammar_hash(&g), 2, 0, 4, Task::MaskedLm, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        assert!(matches!(read_dataset_for(dir.path(), &other), Err(Error::Integrity(_))));
    }

    #[test]
    fn truncated_sequences_rejected() {
        let g = build_grammar(4, 1.0, 7).unwrap();
        let ds = generate_dataset(&g, "h", 2, 0, 4, Task::RootClassification, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        fs::write(dir.path().join(SEQUENCES_FILE), [1u8; 5]).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Validation(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn grammar_json_round_trips(q in 1usize..6, sigma in 0.0f64..4.0, seed in any::<u64>()) {
            let g = build_grammar(q, sigma, seed).unwrap();
            let text = grammar_to_json(&g);
            let back = grammar_from_json(&text, Path::new("mem")).unwrap();
            prop_assert_eq!(&g, &back);
            prop_assert_eq!(text, grammar_to_json(&back));
        }
    }
}
