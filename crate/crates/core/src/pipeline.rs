//! The end-to-end conversion of one document.

use std::time::{Duration, Instant};

use crate::catcode::CatcodeTable;
use crate::diagnostics::Diagnostic;
use crate::doc::{build_document, DocNode};
use crate::macros::Engine;
use crate::report::{ConversionReport, ConversionStatus, StageTimings, REPORT_SCHEMA_VERSION};
use crate::scaffold::{assemble_page, PageOptions};
use crate::tokenizer::Lexer;

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    /// Hard wall-clock budget for the whole conversion.
    pub timeout: Option<Duration>,
    pub stylesheet: String,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            timeout: Some(Duration::from_secs(60)),
            stylesheet: "theme.css".to_string(),
        }
    }
}

pub struct PipelineResult {
    pub report: ConversionReport,
    /// The rendered page. None exactly when the status is failed.
    pub html: Option<String>,
    /// The document tree, kept for callers that post-process.
    pub tree: Option<DocNode>,
}

/// Runs the full pipeline over one source text. Never panics and never
/// returns an error: problems land in the report's diagnostics, and a
/// fatal one yields a failed report with no output.
pub fn convert_document(
    source: &str,
    document_id: &str,
    options: &PipelineOptions,
) -> PipelineResult {
    let started = Instant::now();
    let deadline = options.timeout.map(|t| started + t);
    let mut timings = StageTimings::default();
    let mut diagnostics: Vec<Diagnostic> = Vec::new();

    // Tokenization and expansion are interleaved so category code
    // changes take effect mid-stream; the split timing below charges
    // the combined cost to the expand stage.
    let stage = Instant::now();
    let mut lexer = Lexer::new(source, CatcodeTable::default_catcodes());
    let mut engine = Engine::with_builtins();
    engine.deadline = deadline;
    let outcome = engine.expand_lexer(&mut lexer);
    diagnostics.extend(lexer.take_diagnostics());
    diagnostics.extend(outcome.diagnostics.clone());
    timings.expand_ms = ms_since(stage);

    let stage = Instant::now();
    let build = build_document(outcome.tokens, source);
    diagnostics.extend(build.diagnostics.clone());
    timings.model_ms = ms_since(stage);

    let fatal = build.fatal || diagnostics.iter().any(|d| d.severity == crate::diagnostics::Severity::Fatal);
    let (html, tree) = if fatal {
        (None, None)
    } else {
        let stage = Instant::now();
        let page_options = PageOptions {
            stylesheet: options.stylesheet.clone(),
            ..PageOptions::default()
        };
        let page = assemble_page(&build.tree, &page_options);
        diagnostics.extend(page.diagnostics);
        timings.emit_ms = ms_since(stage);
        (Some(page.html), Some(build.tree))
    };

    timings.total_ms = ms_since(started);
    let status = ConversionReport::status_from(&diagnostics);
    debug_assert_eq!(html.is_none(), status == ConversionStatus::Failed);
    let report = ConversionReport {
        schema_version: REPORT_SCHEMA_VERSION,
        document_id: document_id.to_string(),
        status,
        diagnostics,
        missing_macros: outcome.missing,
        timings,
        output_path: None,
    };
    PipelineResult { report, html, tree }
}

fn ms_since(instant: Instant) -> f64 {
    instant.elapsed().as_secs_f64() * 1000.0
}
