//! Report schemas for single conversions and corpus runs.
//!
//! These are the stable JSON surface of the tool; the version field
//! bumps whenever a field changes meaning or disappears.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{Diagnostic, Severity};
use crate::macros::MissingMacroRecord;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConversionStatus {
    /// Output produced, no diagnostics at error severity or above.
    ErrorFree,
    /// Output produced despite error diagnostics.
    CompletedWithErrors,
    /// A fatal diagnostic stopped the pipeline; no output exists.
    Failed,
}

/// Wall-clock milliseconds spent in each pipeline stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub tokenize_ms: f64,
    pub expand_ms: f64,
    pub model_ms: f64,
    /// Math parsing happens while the page renders; conversions that
    /// track it separately fill this, others fold it into emit.
    pub math_ms: f64,
    pub emit_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConversionReport {
    pub schema_version: u32,
    /// Stem of the input file, unique within a corpus.
    pub document_id: String,
    pub status: ConversionStatus,
    pub diagnostics: Vec<Diagnostic>,
    pub missing_macros: Vec<MissingMacroRecord>,
    pub timings: StageTimings,
    /// Relative path of the generated page; absent when failed.
    pub output_path: Option<String>,
}

impl ConversionReport {
    /// Derives the status from the diagnostics: any fatal means the
    /// run failed and produced nothing, any error demotes it to
    /// completed-with-errors, otherwise it is error-free.
    pub fn status_from(diagnostics: &[Diagnostic]) -> ConversionStatus {
        if diagnostics.iter().any(|d| d.severity == Severity::Fatal) {
            ConversionStatus::Failed
        } else if diagnostics.iter().any(|d| d.is_error()) {
            ConversionStatus::CompletedWithErrors
        } else {
            ConversionStatus::ErrorFree
        }
    }
}

/// One entry in the corpus-wide unknown-macro frequency table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacroFrequency {
    pub name: String,
    /// Number of documents the macro appeared in.
    pub documents: usize,
    /// Total occurrences across the corpus.
    pub occurrences: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusReport {
    pub schema_version: u32,
    pub documents: usize,
    pub error_free: usize,
    pub completed_with_errors: usize,
    pub failed: usize,
    /// Fraction of documents with error-free conversions.
    pub error_free_rate: f64,
    /// Fraction of documents that produced an HTML page at all.
    pub html_availability_rate: f64,
    pub macro_frequency: Vec<MacroFrequency>,
    pub wall_time_ms: f64,
    pub docs_per_second: f64,
}

impl CorpusReport {
    pub fn from_reports(reports: &[ConversionReport], wall_time_ms: f64) -> CorpusReport {
        let documents = reports.len();
        let error_free = reports
            .iter()
            .filter(|r| r.status == ConversionStatus::ErrorFree)
            .count();
        let completed_with_errors = reports
            .iter()
            .filter(|r| r.status == ConversionStatus::CompletedWithErrors)
            .count();
        let failed = reports
            .iter()
            .filter(|r| r.status == ConversionStatus::Failed)
            .count();
        // Empty corpora count as fully healthy; the harness warns
        // separately so this does not mask a misconfigured path.
        let (error_free_rate, html_availability_rate) = if documents == 0 {
            (1.0, 1.0)
        } else {
            (
                error_free as f64 / documents as f64,
                (documents - failed) as f64 / documents as f64,
            )
        };
        let docs_per_second = if wall_time_ms > 0.0 {
            documents as f64 / (wall_time_ms / 1000.0)
        } else {
            0.0
        };
        CorpusReport {
            schema_version: REPORT_SCHEMA_VERSION,
            documents,
            error_free,
            completed_with_errors,
            failed,
            error_free_rate,
            html_availability_rate,
            macro_frequency: rank_missing_macros(reports),
            wall_time_ms,
            docs_per_second,
        }
    }
}

/// Aggregates unknown-macro tallies across reports and ranks them by
/// document count, then total occurrences, then name. The ordering is
/// total, so equal inputs always rank identically.
pub fn rank_missing_macros(reports: &[ConversionReport]) -> Vec<MacroFrequency> {
    let mut by_name: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for report in reports {
        for record in &report.missing_macros {
            let entry = by_name.entry(&record.name).or_insert((0, 0));
            entry.0 += 1;
            entry.1 += record.count as usize;
        }
    }
    let mut ranked: Vec<MacroFrequency> = by_name
        .into_iter()
        .map(|(name, (documents, occurrences))| MacroFrequency {
            name: name.to_string(),
            documents,
            occurrences,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.documents
            .cmp(&a.documents)
            .then(b.occurrences.cmp(&a.occurrences))
            .then(a.name.cmp(&b.name))
    });
    ranked
}
