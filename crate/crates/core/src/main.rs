//! Command-line entry point.
//!
//! Four modes: `convert` (one document), `corpus` (batch run),
//! `validate` (check a MathML file), `bench` (throughput). Logging
//! goes to standard error only; machine-readable JSON goes to files
//! or, under `--json`, to standard output.
//!
//! Precedence for settings: flags, then environment (`TEXWEB_OUTPUT_DIR`,
//! `TEXWEB_WORKERS`), then the optional `--config` file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use texweb::doc::{walk, NodeKind};
use texweb::harness::{self, HarnessConfig};
use texweb::math::parse_math;
use texweb::mathml::{emit_math, serialize};
use texweb::pipeline::{convert_document, PipelineOptions};
use texweb::report::ConversionStatus;
use texweb::scaffold::DEFAULT_THEME;
use texweb::validator::{parse_mathml, validate_core};

const EXIT_OK: u8 = 0;
const EXIT_WITH_ERRORS: u8 = 1;
const EXIT_FAILED: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "texweb", version, about = "Scoped LaTeX to HTML+MathML converter")]
struct Cli {
    #[command(subcommand)]
    mode: Mode,
    /// Optional JSON config file; flags win over its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print machine-readable JSON to standard output.
    #[arg(long, global = true)]
    json: bool,
    /// Increase log verbosity on standard error (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Mode {
    /// Convert a single LaTeX document to HTML.
    Convert {
        input: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        /// embedded keeps math in the page; standalone-xml also writes
        /// each formula as its own namespaced XML file.
        #[arg(long, default_value = "embedded")]
        math: MathMode,
        /// Stylesheet href written into the page head.
        #[arg(long)]
        theme: Option<String>,
    },
    /// Convert every document in a directory and report health metrics.
    Corpus {
        input: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        /// Worker pool width; 0 uses all available cores.
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Optional CSV of `document-id,report-count` feedback.
        #[arg(long)]
        feedback: Option<PathBuf>,
    },
    /// Validate a MathML file against the Core profile.
    Validate { input: PathBuf },
    /// Measure conversion throughput over a corpus.
    Bench {
        input: PathBuf,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Output directory.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Per-document timeout in seconds (default 60).
    #[arg(long)]
    timeout: Option<u64>,
}

fn resolve_timeout(flag: Option<u64>, config: &FileConfig) -> u64 {
    flag.or(config.timeout).unwrap_or(60)
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum MathMode {
    Embedded,
    StandaloneXml,
}

/// Keys mirroring the flags; anything absent falls back to defaults.
#[derive(Default, Deserialize)]
struct FileConfig {
    output: Option<PathBuf>,
    workers: Option<usize>,
    timeout: Option<u64>,
    theme: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let file_config = match load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(why) => {
            eprintln!("texweb: {why}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let code = run(cli, file_config);
    ExitCode::from(code)
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, String> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
}

fn run(cli: Cli, file_config: FileConfig) -> u8 {
    let verbose = cli.verbose;
    match cli.mode {
        Mode::Convert {
            input,
            common,
            math,
            theme,
        } => {
            let out_dir = resolve_output(common.output, &file_config);
            let theme = theme.or(file_config.theme.clone());
            cmd_convert(&input, &out_dir, resolve_timeout(common.timeout, &file_config), math, theme, cli.json, verbose)
        }
        Mode::Corpus {
            input,
            common,
            workers,
            feedback,
        } => {
            let out_dir = resolve_output(common.output, &file_config);
            let workers = resolve_workers(workers, &file_config);
            cmd_corpus(
                &input,
                &out_dir,
                workers,
                resolve_timeout(common.timeout, &file_config),
                feedback,
                cli.json,
                verbose,
            )
        }
        Mode::Validate { input } => cmd_validate(&input, cli.json),
        Mode::Bench {
            input,
            reps,
            workers,
        } => cmd_bench(&input, reps, resolve_workers(workers, &file_config), cli.json),
    }
}

fn resolve_output(flag: Option<PathBuf>, config: &FileConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os("TEXWEB_OUTPUT_DIR").map(PathBuf::from))
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn resolve_workers(flag: usize, config: &FileConfig) -> usize {
    if flag != 0 {
        return flag;
    }
    std::env::var("TEXWEB_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .or(config.workers)
        .unwrap_or(0)
}

fn cmd_convert(
    input: &Path,
    out_dir: &Path,
    timeout: u64,
    math: MathMode,
    theme: Option<String>,
    json: bool,
    verbose: u8,
) -> u8 {
    let source = match fs::read_to_string(input) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("texweb: cannot read {}: {e}", input.display());
            return EXIT_USAGE;
        }
    };
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "document".to_string());
    let options = PipelineOptions {
        timeout: Some(Duration::from_secs(timeout)),
        stylesheet: theme.unwrap_or_else(|| "theme.css".to_string()),
    };
    let mut result = convert_document(&source, &stem, &options);
    if let Err(e) = fs::create_dir_all(out_dir) {
        eprintln!("texweb: cannot create {}: {e}", out_dir.display());
        return EXIT_USAGE;
    }
    if let Some(html) = &result.html {
        let page_path = out_dir.join(format!("{stem}.html"));
        if fs::write(&page_path, html).is_err() {
            eprintln!("texweb: cannot write {}", page_path.display());
            return EXIT_USAGE;
        }
        let _ = fs::write(out_dir.join("theme.css"), DEFAULT_THEME);
        result.report.output_path = Some(format!("{stem}.html"));
        if verbose > 0 {
            eprintln!("texweb: wrote {}", page_path.display());
        }
        if math == MathMode::StandaloneXml {
            write_standalone_math(&result, out_dir, &stem, verbose);
        }
    }
    let sidecar = out_dir.join(format!("{stem}.report.json"));
    let report_json = serde_json::to_string_pretty(&result.report).unwrap();
    let _ = fs::write(&sidecar, &report_json);
    if json {
        println!("{report_json}");
    }
    for d in &result.report.diagnostics {
        if verbose > 0 || d.is_error() {
            eprintln!("texweb: {d}");
        }
    }
    match result.report.status {
        ConversionStatus::ErrorFree => EXIT_OK,
        ConversionStatus::CompletedWithErrors => EXIT_WITH_ERRORS,
        ConversionStatus::Failed => EXIT_FAILED,
    }
}

/// One namespaced XML file per formula, next to the page.
fn write_standalone_math(
    result: &texweb::pipeline::PipelineResult,
    out_dir: &Path,
    stem: &str,
    verbose: u8,
) {
    let Some(tree) = &result.tree else { return };
    let mut index = 0usize;
    walk(tree, &mut |node| {
        if let NodeKind::Math {
            display,
            tokens,
            verbatim,
        } = &node.kind
        {
            index += 1;
            let (expr, _) = parse_math(tokens, *display);
            let mathml = emit_math(&expr, verbatim, *display)
                .attr("xmlns", "http://www.w3.org/1998/Math/MathML");
            let path = out_dir.join(format!("{stem}-math-{index:03}.xml"));
            if fs::write(&path, serialize(&mathml)).is_ok() && verbose > 0 {
                eprintln!("texweb: wrote {}", path.display());
            }
        }
    });
}

fn cmd_corpus(
    input: &Path,
    out_dir: &Path,
    workers: usize,
    timeout: u64,
    feedback: Option<PathBuf>,
    json: bool,
    verbose: u8,
) -> u8 {
    let config = HarnessConfig {
        workers,
        timeout: Duration::from_secs(timeout),
        feedback_csv: feedback,
    };
    let run = match harness::convert_corpus(input, &config) {
        Ok(run) => run,
        Err(e) => {
            eprintln!("texweb: {e}");
            return EXIT_USAGE;
        }
    };
    for warning in &run.warnings {
        eprintln!("texweb: warning: {warning}");
    }
    if let Err(e) = harness::write_outputs(&run, out_dir) {
        eprintln!("texweb: cannot write outputs to {}: {e}", out_dir.display());
        return EXIT_USAGE;
    }
    if verbose > 0 {
        eprintln!(
            "texweb: {} documents, {} error-free, {} failed, {:.1} docs/s",
            run.summary.documents,
            run.summary.error_free,
            run.summary.failed,
            run.summary.docs_per_second
        );
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&run.summary).unwrap());
    }
    if run.summary.failed > 0 {
        EXIT_FAILED
    } else if run.summary.completed_with_errors > 0 {
        EXIT_WITH_ERRORS
    } else {
        EXIT_OK
    }
}

fn cmd_validate(input: &Path, json: bool) -> u8 {
    let text = match fs::read_to_string(input) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("texweb: cannot read {}: {e}", input.display());
            return EXIT_USAGE;
        }
    };
    let node = match parse_mathml(&text) {
        Ok(node) => node,
        Err(e) => {
            eprintln!("texweb: {}: not well-formed XML: {e}", input.display());
            return EXIT_FAILED;
        }
    };
    let violations = validate_core(&node);
    if json {
        let rows: Vec<serde_json::Value> = violations
            .iter()
            .map(|v| {
                serde_json::json!({
                    "path": v.path,
                    "rule": v.rule,
                    "message": v.message,
                })
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&rows).unwrap());
    } else {
        for v in &violations {
            println!("{v}");
        }
    }
    if violations.is_empty() {
        EXIT_OK
    } else {
        EXIT_FAILED
    }
}

fn cmd_bench(input: &Path, reps: usize, workers: usize, json: bool) -> u8 {
    let config = HarnessConfig {
        workers,
        ..HarnessConfig::default()
    };
    let docs = match harness::discover_documents(input) {
        Ok(docs) => docs,
        Err(e) => {
            eprintln!("texweb: {e}");
            return EXIT_USAGE;
        }
    };
    let mut sources = Vec::new();
    for (id, path) in docs {
        match fs::read_to_string(&path) {
            Ok(text) => sources.push((id, text)),
            Err(e) => {
                eprintln!("texweb: cannot read {}: {e}", path.display());
                return EXIT_USAGE;
            }
        }
    }
    // Benchmarking presumes a corpus that converts; refuse otherwise.
    let probe = harness::convert_sources(&sources, &config);
    if probe.summary.failed > 0 {
        eprintln!(
            "texweb: {} document(s) fail to convert; fix the corpus before benchmarking",
            probe.summary.failed
        );
        return EXIT_FAILED;
    }
    let summary = harness::benchmark(&sources, reps, &config);
    if json {
        println!("{}", serde_json::to_string_pretty(&summary).unwrap());
    } else {
        println!(
            "{} documents, {} repetitions: median {:.1} docs/s (min {:.1}, max {:.1})",
            summary.documents,
            summary.repetitions,
            summary.median_docs_per_second,
            summary.min_docs_per_second,
            summary.max_docs_per_second
        );
        println!(
            "stage medians (ms): expand {:.2}, model {:.2}, emit {:.2}, total {:.2}",
            summary.stage_medians.expand_ms,
            summary.stage_medians.model_ms,
            summary.stage_medians.emit_ms,
            summary.stage_medians.total_ms
        );
    }
    EXIT_OK
}
