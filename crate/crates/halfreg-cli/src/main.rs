//! Command-line surface over the halfreg library.
//!
//! Exit codes: 0 on success, 1 when the instance is invalid (or a domain
//! guard rejects the request), 2 on I/O or file-format errors. All
//! randomized subcommands are reproducible from `--seed` alone.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use halfreg::connect::transformation_path;
use halfreg::io::{
    matrix_from_json, realization_from_csv, realization_from_json, realization_to_csv,
    realization_to_json, DiagnosticsFile, SampleLine,
};
use halfreg::kernel::{chain_seed, run_single_chain, ChainMode, Diagnostics};
use halfreg::model::{validate, ColoredRealization, DegreeMatrix};
use halfreg::oracle::{enumerate_guarded, DEFAULT_SIZE_GUARD};
use halfreg::stats::uniformity_test;
use halfreg::construct_realization;

#[derive(Parser)]
#[command(
    name = "halfreg",
    version,
    about = "Check, construct, transform and uniformly sample realizations of half-regular bipartite degree matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an instance against the existence conditions.
    Check {
        /// Degree matrix JSON file.
        matrix: PathBuf,
    },
    /// Deterministically construct one realization.
    Construct {
        matrix: PathBuf,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Run Markov chains and stream sampled realizations as NDJSON.
    Sample {
        matrix: PathBuf,
        #[arg(long)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        burnin: u64,
        #[arg(long, default_value_t = 1)]
        thin: u64,
        #[arg(long, default_value_t = 1)]
        chains: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write merged chain diagnostics as JSON to this file.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Enumerate all realizations of a small instance.
    Enumerate {
        matrix: PathBuf,
        /// Report the count only.
        #[arg(long)]
        count_only: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the step list transforming one realization into another.
    Path {
        /// Starting realization (JSON, or CSV by extension).
        from: PathBuf,
        /// Target realization.
        to: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Uniformity statistics (chi-square, p-value, TV distance) of an
    /// NDJSON sample stream.
    TestUniformity {
        /// Sample stream file; `-` reads stdin.
        samples: PathBuf,
        /// State-space size; required unless --matrix enumerates it.
        #[arg(long)]
        states: Option<usize>,
        /// Instance whose enumeration supplies the state-space size.
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum CliError {
    /// Exit code 2: missing files, unreadable or malformed content.
    Io(String),
    /// Exit code 1: structurally fine input that fails a domain condition.
    Instance(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 2,
            CliError::Instance(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Io(m) | CliError::Instance(m) => m,
        }
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_matrix(path: &Path) -> Result<DegreeMatrix, CliError> {
    let text = read_file(path)?;
    matrix_from_json(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_realization(path: &Path) -> Result<ColoredRealization, CliError> {
    let text = read_file(path)?;
    let parsed = if path.extension().is_some_and(|e| e == "csv") {
        realization_from_csv(&text, None)
    } else {
        realization_from_json(&text)
    };
    parsed.map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_output(out: Option<&Path>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, content)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => {
            print!("{content}");
            if !content.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}

fn size_guard() -> usize {
    std::env::var("HALFREG_SIZE_GUARD")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(DEFAULT_SIZE_GUARD)
}

fn cmd_check(matrix: &Path) -> Result<(), CliError> {
    let mat = read_matrix(matrix)?;
    let report = validate(&mat);
    if report.ok {
        println!("{report}");
        Ok(())
    } else {
        Err(CliError::Instance(report.to_string()))
    }
}

fn cmd_construct(matrix: &Path, out: Option<&Path>, format: Format) -> Result<(), CliError> {
    let mat = read_matrix(matrix)?;
    let real = construct_realization(&mat).map_err(|e| CliError::Instance(e.to_string()))?;
    let content = match format {
        Format::Json => realization_to_json(&real),
        Format::Csv => realization_to_csv(&real),
    };
    write_output(out, &content)
}

#[allow(clippy::too_many_arguments)]
fn cmd_sample(
    matrix: &Path,
    steps: u64,
    burnin: u64,
    thin: u64,
    chains: u32,
    seed: u64,
    out: Option<&Path>,
    diagnostics: Option<&Path>,
) -> Result<(), CliError> {
    if thin == 0 {
        return Err(CliError::Instance("--thin must be at least 1".into()));
    }
    let mat = read_matrix(matrix)?;
    let report = validate(&mat);
    if !report.ok {
        return Err(CliError::Instance(report.to_string()));
    }
    let chains = chains.max(1);

    let mut sink: BufWriter<Box<dyn Write>> = BufWriter::new(match out {
        Some(path) => Box::new(
            fs::File::create(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
        ),
        None => Box::new(std::io::stdout()),
    });

    let merged = if chains == 1 {
        run_single_chain(&mat, chain_seed(seed, 0), steps, burnin, thin, ChainMode::DiagnosticsOnly, |state| {
            let line = serde_json::to_string(&SampleLine::new(0, state)).unwrap();
            writeln!(sink, "{line}").expect("sample stream write failed");
        })
        .map_err(|e| CliError::Instance(e.to_string()))?
    } else {
        // Independent chain workers; lines interleave in arrival order but
        // each chain's content is deterministic.
        let (tx, rx) = mpsc::channel::<Option<String>>();
        let mut handles = Vec::new();
        for chain in 0..chains {
            let tx = tx.clone();
            let mat = mat.clone();
            handles.push(std::thread::spawn(move || {
                let diag = run_single_chain(
                    &mat,
                    chain_seed(seed, chain),
                    steps,
                    burnin,
                    thin,
                    ChainMode::DiagnosticsOnly,
                    |state| {
                        let line = serde_json::to_string(&SampleLine::new(chain, state)).unwrap();
                        tx.send(Some(line)).expect("writer hung up");
                    },
                );
                tx.send(None).expect("writer hung up");
                diag
            }));
        }
        drop(tx);
        let mut finished = 0;
        while finished < chains {
            match rx.recv().expect("all workers exited early") {
                Some(line) => writeln!(sink, "{line}").expect("sample stream write failed"),
                None => finished += 1,
            }
        }
        let mut merged = Diagnostics::default();
        for handle in handles {
            let diag = handle
                .join()
                .expect("chain worker panicked")
                .map_err(|e| CliError::Instance(e.to_string()))?;
            merged.merge(&diag);
        }
        merged
    };
    sink.flush().map_err(|e| CliError::Io(e.to_string()))?;

    if let Some(path) = diagnostics {
        let file = DiagnosticsFile::from(&merged);
        let text = serde_json::to_string_pretty(&file).unwrap();
        fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EnumerateOutput {
    count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    realizations: Option<Vec<String>>,
}

fn cmd_enumerate(matrix: &Path, count_only: bool, out: Option<&Path>) -> Result<(), CliError> {
    let mat = read_matrix(matrix)?;
    let result = enumerate_guarded(&mat, count_only, size_guard(), None)
        .map_err(|e| CliError::Instance(e.to_string()))?;
    let output = EnumerateOutput {
        count: result.count,
        realizations: result.encodings,
    };
    write_output(out, &serde_json::to_string(&output).unwrap())
}

fn cmd_path(from: &Path, to: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let a = read_realization(from)?;
    let b = read_realization(to)?;
    let steps = transformation_path(&a, &b).map_err(|e| CliError::Instance(e.to_string()))?;
    write_output(out, &serde_json::to_string(&steps).unwrap())
}

fn cmd_test_uniformity(
    samples: &Path,
    states: Option<usize>,
    matrix: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let states = match (states, matrix) {
        (Some(s), _) => s,
        (None, Some(path)) => {
            let mat = read_matrix(path)?;
            enumerate_guarded(&mat, true, size_guard(), None)
                .map_err(|e| CliError::Instance(e.to_string()))?
                .count
        }
        (None, None) => {
            return Err(CliError::Instance(
                "either --states or --matrix is required".into(),
            ))
        }
    };
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut tally = |line: &str| -> Result<(), CliError> {
        if line.trim().is_empty() {
            return Ok(());
        }
        let sample: SampleLine =
            serde_json::from_str(line).map_err(|e| CliError::Io(format!("sample line: {e}")))?;
        let real = sample
            .into_realization()
            .map_err(|e| CliError::Io(format!("sample line: {e}")))?;
        *counts.entry(real.canonical_key()).or_insert(0) += 1;
        Ok(())
    };
    if samples == Path::new("-") {
        let stdin = std::io::stdin();
        for line in stdin.lock().lines() {
            let line = line.map_err(|e| CliError::Io(e.to_string()))?;
            tally(&line)?;
        }
    } else {
        for line in read_file(samples)?.lines() {
            tally(line)?;
        }
    }
    let report = uniformity_test(&counts, states).map_err(|e| CliError::Instance(e.to_string()))?;
    #[derive(Serialize)]
    #[serde(rename_all = "camelCase")]
    struct UniformityOutput {
        chi2: f64,
        p_value: f64,
        tv_distance: f64,
        states: usize,
        samples: u64,
    }
    let output = UniformityOutput {
        chi2: report.chi2,
        p_value: report.p_value,
        tv_distance: report.tv_distance,
        states: report.states,
        samples: report.samples,
    };
    write_output(out, &serde_json::to_string(&output).unwrap())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Check { matrix } => cmd_check(&matrix),
        Command::Construct { matrix, out, format } => {
            cmd_construct(&matrix, out.as_deref(), format)
        }
        Command::Sample {
            matrix,
            steps,
            burnin,
            thin,
            chains,
            seed,
            out,
            diagnostics,
        } => cmd_sample(
            &matrix,
            steps,
            burnin,
            thin,
            chains,
            seed,
            out.as_deref(),
            diagnostics.as_deref(),
        ),
        Command::Enumerate {
            matrix,
            count_only,
            out,
        } => cmd_enumerate(&matrix, count_only, out.as_deref()),
        Command::Path { from, to, out } => cmd_path(&from, &to, out.as_deref()),
        Command::TestUniformity {
            samples,
            states,
            matrix,
            out,
        } => cmd_test_uniformity(&samples, states, matrix.as_deref(), out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}
