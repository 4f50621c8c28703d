//! Subcommand implementations. Each returns what the manifest needs.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use hibp_core::bp::{argmax, build_graph, Posteriors};
use hibp_core::dataset::{draw_mask_position, generate_dataset, Labels, Task};
use hibp_core::embed::{build_embedding, encode_tokens};
use hibp_core::evalgrid::{default_n, embed_vs_bp_report, reference_curves};
use hibp_core::grammar::{build_grammar, Grammar};
use hibp_core::io;
use hibp_core::oracle::enumerate_posteriors;
use hibp_core::rng::derive_seed;
use hibp_core::tree::{apply_mask, sample_tree, Evidence, TreeSampler};

use crate::{effective_seed, Failure};

/// Manifest contents produced by a command.
pub struct Run {
    pub grammar_hash: Option<String>,
    pub parameters: Map<String, Value>,
    pub seeds: Map<String, Value>,
    pub outputs: Vec<PathBuf>,
    /// Directory output gets `manifest.json` inside; a file gets a sibling.
    pub anchor: Option<(PathBuf, bool)>,
}

impl Run {
    fn new<A: Serialize>(args: &A) -> Self {
        let parameters = match serde_json::to_value(args).expect("arguments serialize") {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        Run { grammar_hash: None, parameters, seeds: Map::new(), outputs: Vec::new(), anchor: None }
    }

    fn seed(&mut self, flag: u64) -> Result<u64, Failure> {
        let (seed, source) = effective_seed(flag)?;
        self.seeds.insert("seed".into(), json!(seed));
        self.seeds.insert("seed_source".into(), json!(source));
        Ok(seed)
    }

    fn file(&mut self, path: &Path) {
        self.anchor = Some((path.to_path_buf(), false));
    }

    pub fn default_manifest_path(&self, command: &str) -> PathBuf {
        match &self.anchor {
            Some((dir, true)) => dir.join("manifest.json"),
            Some((file, false)) => {
                let mut name = file.file_name().unwrap_or_default().to_os_string();
                name.push(".manifest.json");
                file.with_file_name(name)
            }
            None => PathBuf::from(format!("hibp-{command}.manifest.json")),
        }
    }
}

pub struct Aborted {
    pub run: Option<Box<Run>>,
    pub failure: Failure,
}

impl<E: Into<Failure>> From<E> for Aborted {
    fn from(e: E) -> Self {
        Aborted { run: None, failure: e.into() }
    }
}

type Outcome = Result<Run, Aborted>;

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|source| hibp_core::Error::Io { path: path.to_path_buf(), source }.into())
}

/// Writes to `out` (recording it) or to stdout.
fn emit(run: &mut Run, out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => {
            write_text(path, text)?;
            run.file(path);
            run.outputs.push(path.to_path_buf());
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Failure::Usage(format!("cannot write to stdout: {e}")))?;
        }
    }
    Ok(())
}

fn load_grammar(run: &mut Run, path: &Path) -> Result<Grammar, Failure> {
    let g = io::read_grammar(path)?;
    run.grammar_hash = Some(io::grammar_hash(&g));
    Ok(g)
}

#[derive(Debug, Args, Serialize)]
pub struct GrammarGenArgs {
    #[arg(long, default_value_t = 4)]
    pub q: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn grammar_gen(a: &GrammarGenArgs) -> Outcome {
    let mut run = Run::new(a);
    let seed = run.seed(a.seed)?;
    let g = build_grammar(a.q, a.sigma, seed)?;
    io::write_grammar(&g, &a.out)?;
    run.grammar_hash = Some(io::grammar_hash(&g));
    run.file(&a.out);
    run.outputs.push(a.out.clone());
    Ok(run)
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub grammar: PathBuf,
    #[arg(long)]
    pub ell: usize,
    #[arg(long, default_value_t = 0)]
    pub k: usize,
    /// Number of trees.
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON lines file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn sample(a: &SampleArgs) -> Outcome {
    let mut run = Run::new(a);
    let seed = run.seed(a.seed)?;
    let g = load_grammar(&mut run, &a.grammar)?;
    let sampler = TreeSampler::new(&g, a.ell, a.k)?;
    let lines: Vec<String> = (0..a.n as u64)
        .into_par_iter()
        .map(|i| io::tree_to_json(&sampler.sample(derive_seed(seed, i))))
        .collect();
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    emit(&mut run, a.out.as_deref(), &text)?;
    Ok(run)
}

#[derive(Debug, Args, Serialize)]
pub struct DatasetArgs {
    #[arg(long)]
    pub grammar: PathBuf,
    #[arg(long)]
    pub ell: usize,
    #[arg(long, default_value_t = 0)]
    pub k: usize,
    /// Number of sequences.
    #[arg(long = "P")]
    #[serde(rename = "P")]
    pub p: usize,
    #[arg(long)]
    pub task: Task,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn dataset(a: &DatasetArgs) -> Outcome {
    let mut run = Run::new(a);
    let seed = run.seed(a.seed)?;
    let g = load_grammar(&mut run, &a.grammar)?;
    let hash = run.grammar_hash.clone().expect("set by load_grammar");
    let ds = generate_dataset(&g, &hash, a.ell, a.k, a.p, a.task, seed)?;
    run.outputs = io::write_dataset(&ds, &a.out)?;
    run.anchor = Some((a.out.clone(), true));
    Ok(run)
}

#[derive(Debug, Args, Serialize)]
pub struct BpInferArgs {
    #[arg(long)]
    pub grammar: PathBuf,
    /// Filtering level of the factor graph.
    #[arg(long, default_value_t = 0)]
    pub k: usize,
    /// Dataset directory to score.
    #[arg(long, conflicts_with = "sequence", required_unless_present = "sequence")]
    pub dataset: Option<PathBuf>,
    /// Comma-separated 1-based leaf symbols; 0 marks a masked leaf.
    #[arg(long)]
    pub sequence: Option<String>,
    /// Clamp the root to this 1-based symbol (sequence mode only).
    #[arg(long, requires = "sequence")]
    pub root: Option<usize>,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_sequence(text: &str, q: usize) -> Result<(Vec<Option<usize>>, usize), Failure> {
    let leaves = text
        .split(',')
        .map(|t| {
            let v: usize = t.trim().parse().map_err(|_| Failure::Usage(format!("bad symbol {t:?} in --sequence")))?;
            match v {
                0 => Ok(None),
                s if s <= q => Ok(Some(s - 1)),
                s => Err(Failure::Usage(format!("symbol {s} outside 1..={q}"))),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = leaves.len();
    if !n.is_power_of_two() || n < 2 {
        return Err(Failure::Usage(format!("--sequence has {n} symbols; expected 2^ell with ell >= 1")));
    }
    Ok((leaves, n.trailing_zeros() as usize))
}

pub fn bp_infer(a: &BpInferArgs) -> Outcome {
    let mut run = Run::new(a);
    let g = load_grammar(&mut run, &a.grammar)?;
    if let Some(text) = &a.sequence {
        let (leaves, ell) = parse_sequence(text, g.q())?;
        let root = match a.root {
            Some(r) if (1..=g.q()).contains(&r) => Some(r - 1),
            Some(r) => return Err(Failure::Usage(format!("--root {r} outside 1..={}", g.q())).into()),
            None => None,
        };
        let fg = build_graph(&g, ell, a.k)?;
        let post = fg.infer(&Evidence { ell, leaves, root })?;
        let doc = json!({
            "ell": ell,
            "k": a.k,
            "root": post.root,
            "root_map": argmax(&post.root) + 1,
            "leaf_incoming": post.leaf_incoming,
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("json");
        text.push('\n');
        emit(&mut run, a.out.as_deref(), &text)?;
        return Ok(run);
    }
    let dir = a.dataset.as_ref().expect("clap enforces one input");
    let ds = io::read_dataset_for(dir, &g)?;
    let fg = build_graph(&g, ds.ell, a.k)?;
    let rows: Vec<(String, bool)> = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let seq = ds.sequence(i);
            let (ev, truth, pos) = match &ds.labels {
                Labels::Root(r) => (Evidence::observed(seq, ds.ell)?, r[i], None),
                Labels::Masked(m) => (apply_mask(seq, &[m[i].pos], ds.ell)?, m[i].symbol, Some(m[i].pos)),
            };
            let post: Posteriors = fg.infer(&ev)?;
            let p = match pos {
                None => &post.root,
                Some(pos) => &post.leaf_incoming[pos],
            };
            let map = argmax(p);
            let mut line = json!({ "index": i, "posterior": p, "map": map + 1, "true": truth + 1 });
            if let Some(pos) = pos {
                line["pos"] = json!(pos + 1);
            }
            Ok((line.to_string(), map == truth))
        })
        .collect::<Result<_, hibp_core::Error>>()?;
    let hits = rows.iter().filter(|r| r.1).count();
    let mut text = String::new();
    for (line, _) in &rows {
        text.push_str(line);
        text.push('\n');
    }
    emit(&mut run, a.out.as_deref(), &text)?;
    let summary = json!({
        "task": ds.task(),
        "k_data": ds.k,
        "k_bp": a.k,
        "n": ds.len(),
        "accuracy": hits as f64 / ds.len() as f64,
    });
    run.parameters.insert("summary".into(), summary.clone());
    if a.out.is_some() {
        println!("{summary}");
    }
    Ok(run)
}

#[derive(Debug, Args, Serialize)]
pub struct OracleCheckArgs {
    #[arg(long)]
    pub ell: usize,
    #[arg(long)]
    pub q: usize,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON summary file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Trial `t`: a fresh grammar, level `k = t mod (ell + 1)`, and evidence that
/// alternates between fully observed and one uniformly masked leaf.
pub fn oracle_check(a: &OracleCheckArgs) -> Outcome {
    let mut run = Run::new(a);
    let seed = run.seed(a.seed)?;
    if a.trials == 0 {
        return Err(Failure::Usage("--trials must be at least 1".into()).into());
    }
    let devs: Vec<(usize, f64)> = (0..a.trials)
        .into_par_iter()
        .map(|t| {
            let gseed = derive_seed(seed, t as u64);
            let g = build_grammar(a.q, a.sigma, gseed)?;
            let k = t % (a.ell + 1);
            let tseed = derive_seed(gseed, 1);
            let tree = sample_tree(&g, a.ell, k, tseed)?;
            let masked: Vec<usize> =
                if t % 2 == 1 { vec![draw_mask_position(tseed, 1 << a.ell)] } else { Vec::new() };
            let ev = apply_mask(&tree.leaves(), &masked, a.ell)?;
            let bp = build_graph(&g, a.ell, k)?.infer(&ev)?;
            let exact = enumerate_posteriors(&g, a.ell, k, &ev)?;
            Ok((t, bp.max_deviation(&exact)))
        })
        .collect::<Result<_, hibp_core::Error>>()?;
    let max = devs.iter().map(|d| d.1).fold(0.0, f64::max);
    let failures: Vec<usize> = devs.iter().filter(|d| d.1.is_nan() || d.1 >= a.tol).map(|d| d.0).collect();
    let summary = json!({
        "ell": a.ell,
        "q": a.q,
        "trials": a.trials,
        "tol": a.tol,
        "max_abs_dev": max,
        "failed_trials": failures,
        "pass": failures.is_empty(),
    });
    let mut text = serde_json::to_string_pretty(&summary).expect("json");
    text.push('\n');
    emit(&mut run, a.out.as_deref(), &text)?;
    if failures.is_empty() {
        Ok(run)
    } else {
        let failure = Failure::Check(format!("{} of {} trials exceed tol {}", failures.len(), a.trials, a.tol));
        Err(Aborted { run: Some(Box::new(run)), failure })
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EvalGridArgs {
    #[arg(long)]
    pub grammar: PathBuf,
    #[arg(long)]
    pub ell: usize,
    #[arg(long)]
    pub task: Task,
    /// Samples per cell (default: 10^4 for classification, 10^5 for mlm).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn eval_grid(a: &EvalGridArgs) -> Outcome {
    let mut run = Run::new(a);
    let seed = run.seed(a.seed)?;
    let g = load_grammar(&mut run, &a.grammar)?;
    let n = a.n.unwrap_or_else(|| default_n(a.task));
    run.parameters.insert("n".into(), json!(n));
    run.parameters.insert("n_is_default".into(), json!(a.n.is_none()));
    let grid = reference_curves(&g, a.ell, a.task, n, seed)?;
    run.parameters.insert(
        "cross_entropy".into(),
        json!(grid.cells.iter().map(|c| json!({"k_data": c.k_data, "k_bp": c.k_bp, "value": c.cross_entropy})).collect::<Vec<_>>()),
    );
    emit(&mut run, Some(&a.out), &grid.to_csv())?;
    Ok(run)
}

#[derive(Debug, Args, Serialize)]
pub struct EmbedCheckArgs {
    #[arg(long)]
    pub grammar: PathBuf,
    #[arg(long)]
    pub ell: usize,
    #[arg(long, default_value_t = 0)]
    pub k: usize,
    #[arg(long, value_delimiter = ',', default_value = "10,30,50")]
    pub betas: Vec<f64>,
    /// Single-mask cases per beta.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for per-block attention matrices as CSV.
    #[arg(long)]
    pub attention_dir: Option<PathBuf>,
    /// Fail with exit code 2 if any max_abs_dev reaches this value.
    #[arg(long)]
    pub tol: Option<f64>,
}

fn attention_csv(w: &[f64], n: usize) -> String {
    let mut out = String::new();
    for row in w.chunks(n) {
        let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn embed_check(a: &EmbedCheckArgs) -> Outcome {
    let mut run = Run::new(a);
    let seed = run.seed(a.seed)?;
    let g = load_grammar(&mut run, &a.grammar)?;
    let reports = embed_vs_bp_report(&g, a.ell, a.k, &a.betas, a.n, seed)?;
    if let Some(dir) = &a.attention_dir {
        fs::create_dir_all(dir).map_err(|source| hibp_core::Error::Io { path: dir.clone(), source })?;
        // Attention depends on positions only, so any input gives the same maps.
        let ev = Evidence { ell: a.ell, leaves: vec![None; 1 << a.ell], root: None };
        let tokens = encode_tokens(&ev, &g, a.ell)?;
        for &beta in &a.betas {
            let et = build_embedding(&g, a.ell, a.k, beta)?;
            for block in et.blocks() {
                let path = dir.join(format!("attention_beta{beta}_block{}.csv", block.index));
                write_text(&path, &attention_csv(&et.attention_matrix(block, &tokens), tokens.n_tokens()))?;
                run.outputs.push(path);
            }
        }
    }
    let mut text = serde_json::to_string_pretty(&reports).expect("json");
    text.push('\n');
    emit(&mut run, a.out.as_deref(), &text)?;
    if let Some(tol) = a.tol {
        if let Some(bad) = reports.iter().find(|r| r.max_abs_dev.is_nan() || r.max_abs_dev >= tol) {
            let failure = Failure::Check(format!("beta {} max_abs_dev {:e} >= {tol:e}", bad.beta, bad.max_abs_dev));
            return Err(Aborted { run: Some(Box::new(run)), failure });
        }
    }
    Ok(run)
}
