use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

mod commands;

use commands::{
    BpInferArgs, DatasetArgs, EmbedCheckArgs, EvalGridArgs, GrammarGenArgs, OracleCheckArgs, SampleArgs,
};

/// Hierarchical grammar toolkit: sampling, exact inference and reference
/// accuracies.
#[derive(Debug, Parser)]
#[command(name = "hibp", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Where to write the run manifest (default: next to the output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a random grammar and write it as JSON.
    GrammarGen(GrammarGenArgs),
    /// Sample full trees as JSON lines.
    Sample(SampleArgs),
    /// Export a training dataset directory.
    Dataset(DatasetArgs),
    /// Run belief propagation on a dataset or a single sequence.
    BpInfer(BpInferArgs),
    /// Compare belief propagation against brute-force enumeration.
    OracleCheck(OracleCheckArgs),
    /// Monte-Carlo accuracy over all (k_data, k_bp) pairs, as CSV.
    EvalGrid(EvalGridArgs),
    /// Compare the embedded transformer against belief propagation.
    EmbedCheck(EmbedCheckArgs),
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(hibp_core::Error),
    /// A correctness check ran and did not pass.
    Check(String),
}

impl From<hibp_core::Error> for Failure {
    fn from(e: hibp_core::Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(hibp_core::Error::Numerical(_)) => 2,
            Failure::Core(_) => 1,
            Failure::Check(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Check(m) => write!(f, "check failed: {m}"),
        }
    }
}

/// Seed from `HIBP_SEED` when set, otherwise the flag value.
pub fn effective_seed(flag: u64) -> Result<(u64, &'static str), Failure> {
    match std::env::var("HIBP_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(|s| (s, "HIBP_SEED"))
            .map_err(|_| Failure::Usage(format!("HIBP_SEED={v:?} is not an unsigned 64-bit integer"))),
        Err(_) => Ok((flag, "--seed")),
    }
}

fn run(cli: Cli, argv: Vec<String>) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot configure thread pool: {e}")))?;
    }
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let clock = Instant::now();
    let (name, outcome) = match &cli.command {
        Command::GrammarGen(a) => ("grammar-gen", commands::grammar_gen(a)),
        Command::Sample(a) => ("sample", commands::sample(a)),
        Command::Dataset(a) => ("dataset", commands::dataset(a)),
        Command::BpInfer(a) => ("bp-infer", commands::bp_infer(a)),
        Command::OracleCheck(a) => ("oracle-check", commands::oracle_check(a)),
        Command::EvalGrid(a) => ("eval-grid", commands::eval_grid(a)),
        Command::EmbedCheck(a) => ("embed-check", commands::embed_check(a)),
    };
    // A failed check still leaves a manifest describing what was run.
    let (run, result) = match outcome {
        Ok(run) => (run, Ok(())),
        Err(commands::Aborted { run: Some(run), failure }) => (*run, Err(failure)),
        Err(commands::Aborted { run: None, failure }) => return Err(failure),
    };
    let manifest_path = cli.manifest.clone().unwrap_or_else(|| run.default_manifest_path(name));
    let manifest = hibp_core::io::RunManifest {
        command: name.to_owned(),
        version: env!("CARGO_PKG_VERSION").to_owned(),
        argv,
        grammar_hash: run.grammar_hash,
        parameters: run.parameters,
        seeds: run.seeds,
        outputs: run.outputs,
        started_unix_secs: started,
        wall_clock_secs: clock.elapsed().as_secs_f64(),
    };
    hibp_core::io::write_manifest(&manifest, &manifest_path)?;
    result
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
