//! `pdfa`: extract, evaluate, sample and export probabilistic automata.

mod target;

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pdfa_core::eval::{render_table, DEFAULT_MAX_LEN, DEFAULT_PREFIXES, DEFAULT_SAMPLES};
use pdfa_core::extract::{extract_with, Observer, RoundEvent};
use pdfa_core::oracle::sample_target_with;
use pdfa_core::{
    io, ndcg, wer, Error, ExtractionConfig, MetricReport, SamplingEquivalence, StopReason,
    TableConfig,
};

use target::{render_samples, TargetSpec};

/// Exit status for unreadable or invalid input.
const EXIT_INPUT: u8 = 2;
/// Exit status for oracle failures.
const EXIT_ORACLE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "pdfa",
    version,
    about = "Extract probabilistic automata from next-token oracles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a PDFA from a target.
    Extract(ExtractArgs),
    /// Compare a model against a reference with WER and NDCG.
    Evaluate(EvaluateArgs),
    /// Draw sequences from a target, one per line.
    Sample(SampleArgs),
    /// Write a PDFA as a Graphviz graph.
    ExportDot(ExportDotArgs),
    /// Answer oracle requests for a target on stdin/stdout.
    #[command(name = "serve-pdfa")]
    ServePdfa(ServeArgs),
}

#[derive(Args)]
struct ExtractArgs {
    /// grammar://NAME, file:PATH, ngram:N:SAMPLES or external:COMMAND
    #[arg(long)]
    target: TargetSpec,
    /// Learned PDFA file.
    #[arg(long, default_value = "extracted.json")]
    out: PathBuf,
    /// Report file; defaults to OUT with a .report.json suffix.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write the PDFA as Graphviz.
    #[arg(long)]
    dot: Option<PathBuf>,
    /// Row tolerance t.
    #[arg(long, default_value_t = 0.1)]
    tolerance: f64,
    /// Prefix probability threshold for new rows.
    #[arg(long, default_value_t = 0.01)]
    eps_p: f64,
    /// Conditional probability threshold for new columns.
    #[arg(long, default_value_t = 0.01)]
    eps_s: f64,
    #[arg(long, default_value_t = 5000)]
    max_p: usize,
    #[arg(long, default_value_t = 100)]
    max_s: usize,
    /// Samples per equivalence query.
    #[arg(long, default_value_t = 500)]
    eq_samples: usize,
    /// Sample truncation length for equivalence queries.
    #[arg(long)]
    eq_max_len: Option<usize>,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    time_budget: Option<f64>,
    #[arg(long)]
    max_rounds: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Suppress the round summary.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Model under evaluation (target syntax).
    #[arg(long)]
    model: TargetSpec,
    /// Reference model; samples are drawn from it.
    #[arg(long)]
    reference: TargetSpec,
    #[arg(long)]
    wer: bool,
    /// NDCG cut-off k.
    #[arg(long, value_name = "K")]
    ndcg: Option<usize>,
    /// Samples for WER and prefixes for NDCG.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    target: TargetSpec,
    /// Number of sequences.
    #[arg(short = 'n', long)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    max_len: usize,
}

#[derive(Args)]
struct ExportDotArgs {
    /// PDFA to export (target syntax; grammar or file).
    model: TargetSpec,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    target: TargetSpec,
}

type CliResult<T> = Result<T, CliError>;

enum CliError {
    Core(Error),
    Usage(String),
    /// Artifacts were written but the run ended on an oracle failure.
    RunFailed(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::Oracle(_) | Error::Contract(_)) | CliError::RunFailed(_) => {
                EXIT_ORACLE
            }
            _ => EXIT_INPUT,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract(a) => run_extract(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Sample(a) => run_sample(a),
        Command::ExportDot(a) => run_export_dot(a),
        Command::ServePdfa(a) => run_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = match &e {
                CliError::Core(err) => err.to_string(),
                CliError::Usage(m) | CliError::RunFailed(m) => m.clone(),
            };
            eprintln!("pdfa: {msg}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

/// Prints one line per round as the run progresses.
struct Summary {
    start: Instant,
    quiet: bool,
}

impl Observer for Summary {
    fn on_round(&mut self, e: &RoundEvent<'_>) {
        if !self.quiet {
            println!(
                "round {}: {} states, |P| = {}, |S| = {}, {:.3} s",
                e.round,
                e.hypothesis.num_states(),
                e.table.num_rows(),
                e.table.num_suffixes(),
                self.start.elapsed().as_secs_f64()
            );
        }
    }
}

fn run_extract(a: ExtractArgs) -> CliResult<()> {
    let time_budget = match a.time_budget {
        Some(s) if !(s.is_finite() && s >= 0.0) => {
            return Err(CliError::Usage(format!("invalid time budget {s}")));
        }
        s => s.map(Duration::from_secs_f64),
    };
    let cfg = ExtractionConfig {
        table: TableConfig {
            t: a.tolerance,
            eps_p: a.eps_p,
            eps_s: a.eps_s,
            max_p: Some(a.max_p),
            max_s: Some(a.max_s),
            time_budget,
        },
        eq_samples: a.eq_samples,
        eq_max_len: a.eq_max_len,
        seed: a.seed,
        max_rounds: a.max_rounds,
        ..ExtractionConfig::default()
    };
    cfg.validate()?;
    let target = a.target.load()?;
    let mut eq = SamplingEquivalence::new(&cfg);
    let mut summary = Summary {
        start: Instant::now(),
        quiet: a.quiet,
    };
    let report = extract_with(target.oracle.as_ref(), &cfg, &mut eq, &mut summary)?;
    if !a.quiet {
        for r in report.rounds.iter().filter(|r| r.counterexample.is_some()) {
            println!(
                "round {}: counterexample {} added {} rows",
                r.round,
                r.counterexample.as_deref().unwrap_or_default(),
                r.rows_added
            );
        }
        println!(
            "stop: {}, {} states, {} rounds, {} queries ({} unique), {:.3} s",
            report.stop_reason,
            report.states,
            report.rounds.len(),
            report.queries.queries,
            report.queries.unique,
            report.elapsed.as_secs_f64()
        );
    }
    if let Some(pdfa) = &report.pdfa {
        write_file(&a.out, &io::to_json(pdfa))?;
        if let Some(dot) = &a.dot {
            write_file(dot, &io::to_dot(pdfa))?;
        }
    }
    let report_path = a.report.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".report.json");
        p.into()
    });
    write_file(&report_path, &report.to_json())?;
    if report.stop_reason == StopReason::Error {
        return Err(CliError::RunFailed(format!(
            "extraction failed: {}",
            report.error.as_deref().unwrap_or("unknown error")
        )));
    }
    Ok(())
}

fn run_evaluate(a: EvaluateArgs) -> CliResult<()> {
    let model = a.model.load()?;
    let reference = a.reference.load()?;
    if model.oracle.alphabet() != reference.oracle.alphabet() {
        return Err(CliError::Usage(format!(
            "alphabets differ: {:?} vs {:?}",
            model.oracle.alphabet().names(),
            reference.oracle.alphabet().names()
        )));
    }
    let (want_wer, k) = match (a.wer, a.ndcg) {
        (false, None) => (true, Some(2)),
        (w, k) => (w, k),
    };
    let mut row = MetricReport {
        model: a.model.to_string(),
        size: model.size,
        seed: a.seed,
        ..MetricReport::default()
    };
    if want_wer {
        let r = wer(
            model.oracle.as_ref(),
            reference.oracle.as_ref(),
            a.samples,
            a.seed,
            a.max_len,
        )?;
        row.wer = Some(r.wer);
        row.samples = r.samples;
    }
    if let Some(k) = k {
        let prefixes = if a.samples == DEFAULT_SAMPLES {
            DEFAULT_PREFIXES
        } else {
            a.samples
        };
        let r = ndcg(
            model.oracle.as_ref(),
            reference.oracle.as_ref(),
            k,
            prefixes,
            a.seed,
            a.max_len,
        )?;
        row.ndcg = Some(r.ndcg);
        row.k = Some(k);
        row.prefixes = r.prefixes;
        row.skipped = r.skipped;
    }
    if a.json {
        println!(
            "{}",
            serde_json::to_string(&row).expect("report serializes")
        );
    } else {
        print!("{}", render_table(&[row]));
    }
    Ok(())
}

fn run_sample(a: SampleArgs) -> CliResult<()> {
    if a.max_len == 0 {
        return Err(CliError::Usage("max-len must be at least 1".into()));
    }
    let target = a.target.load()?;
    let oracle = target.oracle.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let samples = (0..a.count)
        .map(|_| sample_target_with(oracle, &mut rng, a.max_len))
        .collect::<Result<Vec<_>, _>>()?;
    let truncated = samples.iter().filter(|s| s.truncated()).count();
    if truncated > 0 {
        eprintln!(
            "pdfa: {truncated} samples hit max-len {} and were cut",
            a.max_len
        );
    }
    write_file(&a.out, &render_samples(oracle.alphabet(), &samples))
}

fn run_export_dot(a: ExportDotArgs) -> CliResult<()> {
    let pdfa = a
        .model
        .load()?
        .pdfa
        .ok_or_else(|| CliError::Usage(format!("{} is not a PDFA", a.model)))?;
    let dot = io::to_dot(&pdfa);
    match &a.out {
        Some(path) => write_file(path, &dot),
        None => {
            std::io::stdout().write_all(dot.as_bytes())?;
            Ok(())
        }
    }
}

fn run_serve(a: ServeArgs) -> CliResult<()> {
    let target = a.target.load()?;
    let stdin = std::io::stdin().lock();
    let stdout = BufWriter::new(std::io::stdout().lock());
    pdfa_core::external::serve(target.oracle.as_ref(), stdin, stdout)?;
    Ok(())
}
