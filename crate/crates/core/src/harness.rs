//! Batch conversion over a corpus with aggregate health metrics.
//!
//! Documents convert concurrently on a bounded worker pool. Each
//! conversion is isolated: a panic or timeout in one document becomes
//! a failed report entry and never aborts the batch. All aggregates
//! are independent of scheduling order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::diagnostics::Diagnostic;
use crate::pipeline::{convert_document, PipelineOptions, PipelineResult};
use crate::report::{ConversionReport, ConversionStatus, CorpusReport, MacroFrequency, StageTimings, REPORT_SCHEMA_VERSION};

#[derive(Debug, Clone)]
pub struct HarnessConfig {
    /// Worker pool width; 0 picks the available parallelism.
    pub workers: usize,
    pub timeout: Duration,
    /// Optional CSV of `document-id,report-count` pairs merged into
    /// the summary as an external feedback signal.
    pub feedback_csv: Option<PathBuf>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            workers: 0,
            timeout: Duration::from_secs(60),
            feedback_csv: None,
        }
    }
}

#[derive(Debug)]
pub enum HarnessError {
    InputDirUnreadable(String),
    DuplicateDocumentId(String),
}

impl std::fmt::Display for HarnessError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HarnessError::InputDirUnreadable(why) => {
                write!(f, "input directory unreadable: {why}")
            }
            HarnessError::DuplicateDocumentId(id) => {
                write!(f, "duplicate document id `{id}`")
            }
        }
    }
}

impl std::error::Error for HarnessError {}

pub struct CorpusRun {
    /// Ordered by document id regardless of scheduling.
    pub reports: Vec<ConversionReport>,
    pub summary: CorpusReport,
    /// Rendered pages keyed by document id; absent for failed docs.
    pub pages: BTreeMap<String, String>,
    pub warnings: Vec<String>,
    /// Feedback report counts when a CSV was supplied.
    pub feedback: BTreeMap<String, u64>,
}

/// Finds the documents under a corpus directory: every `*.tex` file,
/// plus every subdirectory containing a `main.tex`. Ids are the file
/// stem or directory name, sorted.
pub fn discover_documents(dir: &Path) -> Result<Vec<(String, PathBuf)>, HarnessError> {
    let entries =
        fs::read_dir(dir).map_err(|e| HarnessError::InputDirUnreadable(e.to_string()))?;
    let mut docs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| HarnessError::InputDirUnreadable(e.to_string()))?;
        let path = entry.path();
        if path.is_dir() {
            let main = path.join("main.tex");
            if main.is_file() {
                let id = path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                docs.push((id, main));
            }
        } else if path.extension().is_some_and(|e| e == "tex") {
            let id = path
                .file_stem()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            docs.push((id, path));
        }
    }
    docs.sort_by(|a, b| a.0.cmp(&b.0));
    for pair in docs.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(HarnessError::DuplicateDocumentId(pair[0].0.clone()));
        }
    }
    Ok(docs)
}

/// Converts every document in a directory.
pub fn convert_corpus(dir: &Path, config: &HarnessConfig) -> Result<CorpusRun, HarnessError> {
    let docs = discover_documents(dir)?;
    let mut sources = Vec::new();
    let mut warnings = Vec::new();
    for (id, path) in docs {
        match fs::read_to_string(&path) {
            Ok(text) => sources.push((id, text)),
            Err(e) => warnings.push(format!("skipping `{id}`: {e}")),
        }
    }
    let mut run = convert_sources(&sources, config);
    run.warnings.extend(warnings);
    if let Some(csv) = &config.feedback_csv {
        match import_feedback_csv(csv) {
            Ok(feedback) => run.feedback = feedback,
            Err(why) => run.warnings.push(format!("feedback CSV ignored: {why}")),
        }
    }
    Ok(run)
}

/// Converts an in-memory list of `(id, source)` documents. The list
/// order does not matter; output ordering and aggregates depend only
/// on content.
pub fn convert_sources(sources: &[(String, String)], config: &HarnessConfig) -> CorpusRun {
    run_pool(sources, config, |id, text| {
        convert_document(
            text,
            id,
            &PipelineOptions {
                timeout: Some(config.timeout),
                ..PipelineOptions::default()
            },
        )
    })
}

/// The generic pool: exposed at crate level so tests can inject a
/// crashing converter and observe isolation.
pub(crate) fn run_pool(
    sources: &[(String, String)],
    config: &HarnessConfig,
    convert: impl Fn(&str, &str) -> PipelineResult + Sync,
) -> CorpusRun {
    let started = Instant::now();
    let workers = if config.workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        config.workers
    };
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<(ConversionReport, Option<String>)>>> =
        Mutex::new((0..sources.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.min(sources.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((id, text)) = sources.get(i) else {
                    break;
                };
                let outcome = catch_unwind(AssertUnwindSafe(|| convert(id, text)));
                let (report, html) = match outcome {
                    Ok(result) => (result.report, result.html),
                    Err(_) => (panic_report(id), None),
                };
                slots.lock().unwrap()[i] = Some((report, html));
            });
        }
    });
    let mut reports = Vec::with_capacity(sources.len());
    let mut pages = BTreeMap::new();
    for slot in slots.into_inner().unwrap() {
        let (mut report, html) = slot.expect("every document attempted");
        if let Some(html) = html {
            report.output_path = Some(format!("{}.html", report.document_id));
            pages.insert(report.document_id.clone(), html);
        }
        reports.push(report);
    }
    reports.sort_by(|a, b| a.document_id.cmp(&b.document_id));
    let wall_time_ms = started.elapsed().as_secs_f64() * 1000.0;
    let summary = CorpusReport::from_reports(&reports, wall_time_ms);
    let mut warnings = Vec::new();
    if reports.is_empty() {
        warnings.push("corpus is empty; rates default to 1.0".to_string());
    }
    CorpusRun {
        reports,
        summary,
        pages,
        warnings,
        feedback: BTreeMap::new(),
    }
}

fn panic_report(id: &str) -> ConversionReport {
    ConversionReport {
        schema_version: REPORT_SCHEMA_VERSION,
        document_id: id.to_string(),
        status: ConversionStatus::Failed,
        diagnostics: vec![Diagnostic::fatal(
            "internal-panic",
            "conversion crashed; document isolated and marked failed",
        )],
        missing_macros: Vec::new(),
        timings: StageTimings::default(),
        output_path: None,
    }
}

/// Top-k slice of an already ranked frequency table.
pub fn top_missing(summary: &CorpusReport, k: usize) -> &[MacroFrequency] {
    &summary.macro_frequency[..k.min(summary.macro_frequency.len())]
}

/// Merges two runs' per-document reports and recomputes aggregates.
/// Associative and commutative on everything except wall time, which
/// sums.
pub fn merge_reports(
    a: &[ConversionReport],
    b: &[ConversionReport],
    wall_time_ms: f64,
) -> Result<CorpusReport, HarnessError> {
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for report in a.iter().chain(b) {
        if !seen.insert(&report.document_id) {
            return Err(HarnessError::DuplicateDocumentId(
                report.document_id.clone(),
            ));
        }
    }
    let mut merged: Vec<ConversionReport> = a.iter().chain(b).cloned().collect();
    merged.sort_by(|x, y| x.document_id.cmp(&y.document_id));
    Ok(CorpusReport::from_reports(&merged, wall_time_ms))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct BenchSummary {
    pub repetitions: usize,
    pub documents: usize,
    pub median_docs_per_second: f64,
    pub min_docs_per_second: f64,
    pub max_docs_per_second: f64,
    /// Median per-document stage timings across all repetitions.
    pub stage_medians: StageTimings,
}

/// Converts the corpus `repetitions` times and reports the median and
/// spread of throughput plus per-stage medians.
pub fn benchmark(
    sources: &[(String, String)],
    repetitions: usize,
    config: &HarnessConfig,
) -> BenchSummary {
    let repetitions = repetitions.max(1);
    let mut rates = Vec::with_capacity(repetitions);
    let mut tokenize = Vec::new();
    let mut expand = Vec::new();
    let mut model = Vec::new();
    let mut math = Vec::new();
    let mut emit = Vec::new();
    let mut total = Vec::new();
    for _ in 0..repetitions {
        let run = convert_sources(sources, config);
        rates.push(run.summary.docs_per_second);
        for report in &run.reports {
            tokenize.push(report.timings.tokenize_ms);
            expand.push(report.timings.expand_ms);
            model.push(report.timings.model_ms);
            math.push(report.timings.math_ms);
            emit.push(report.timings.emit_ms);
            total.push(report.timings.total_ms);
        }
    }
    rates.sort_by(f64::total_cmp);
    BenchSummary {
        repetitions,
        documents: sources.len(),
        median_docs_per_second: median(&mut rates.clone()),
        min_docs_per_second: rates.first().copied().unwrap_or(0.0),
        max_docs_per_second: rates.last().copied().unwrap_or(0.0),
        stage_medians: StageTimings {
            tokenize_ms: median(&mut tokenize),
            expand_ms: median(&mut expand),
            model_ms: median(&mut model),
            math_ms: median(&mut math),
            emit_ms: median(&mut emit),
            total_ms: median(&mut total),
        },
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    }
}

/// Reads the optional feedback signal: `document-id,report-count`
/// lines, header row allowed.
pub fn import_feedback_csv(path: &Path) -> Result<BTreeMap<String, u64>, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((id, count)) = line.split_once(',') else {
            return Err(format!("line {}: expected `id,count`", i + 1));
        };
        match count.trim().parse::<u64>() {
            Ok(count) => {
                out.insert(id.trim().to_string(), count);
            }
            Err(_) if i == 0 => {} // header row
            Err(_) => return Err(format!("line {}: bad count `{count}`", i + 1)),
        }
    }
    Ok(out)
}

/// Writes the run artifacts: one HTML page per surviving document,
/// the shared stylesheet, `report.jsonl`, `summary.json`, and
/// `ranking.txt`.
pub fn write_outputs(run: &CorpusRun, out_dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("theme.css"), crate::scaffold::DEFAULT_THEME)?;
    for (id, html) in &run.pages {
        fs::write(out_dir.join(format!("{id}.html")), html)?;
    }
    let mut jsonl = fs::File::create(out_dir.join("report.jsonl"))?;
    for report in &run.reports {
        serde_json::to_writer(&mut jsonl, report)?;
        jsonl.write_all(b"\n")?;
    }
    let mut summary = serde_json::to_value(&run.summary)?;
    if !run.feedback.is_empty() {
        summary["feedback_report_counts"] = serde_json::to_value(&run.feedback)?;
    }
    fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    let mut ranking = String::new();
    for entry in &run.summary.macro_frequency {
        let feedback = run
            .feedback
            .get(&entry.name)
            .map(|n| format!("\t{n} reports"))
            .unwrap_or_default();
        ranking.push_str(&format!(
            "{}\t{} docs\t{} uses{}\n",
            entry.name, entry.documents, entry.occurrences, feedback
        ));
    }
    fs::write(out_dir.join("ranking.txt"), ranking)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sources(docs: &[(&str, &str)]) -> Vec<(String, String)> {
        docs.iter()
            .map(|(id, text)| (id.to_string(), text.to_string()))
            .collect()
    }

    #[test]
    fn small_corpus_rates() {
        let docs = sources(&[
            ("clean1", "Just text."),
            ("clean2", "Math $x+y$ works."),
            ("warns", "Uses \\unknowncmd today."),
            ("fails", "Broken $math"),
        ]);
        let run = convert_sources(&docs, &HarnessConfig::default());
        assert_eq!(run.summary.documents, 4);
        assert_eq!(run.summary.error_free, 2);
        assert_eq!(run.summary.failed, 1);
        assert_eq!(run.summary.html_availability_rate, 0.75);
        assert_eq!(run.summary.error_free_rate, 0.5);
        assert!(run.pages.contains_key("clean1"));
        assert!(!run.pages.contains_key("fails"));
    }

    #[test]
    fn empty_corpus_warns() {
        let run = convert_sources(&[], &HarnessConfig::default());
        assert_eq!(run.summary.documents, 0);
        assert_eq!(run.summary.error_free_rate, 1.0);
        assert!(!run.warnings.is_empty());
    }

    #[test]
    fn aggregates_independent_of_worker_width() {
        let docs: Vec<(String, String)> = (0..12)
            .map(|i| {
                (
                    format!("doc{i:02}"),
                    format!("\\section{{S{i}}} Body $x_{{{i}}}$ and \\mystery{i}."),
                )
            })
            .collect();
        let runs: Vec<CorpusRun> = [1usize, 3, 8]
            .iter()
            .map(|&workers| {
                convert_sources(
                    &docs,
                    &HarnessConfig {
                        workers,
                        ..HarnessConfig::default()
                    },
                )
            })
            .collect();
        for run in &runs[1..] {
            assert_eq!(run.pages, runs[0].pages);
            assert_eq!(run.summary.error_free, runs[0].summary.error_free);
            assert_eq!(run.summary.macro_frequency, runs[0].summary.macro_frequency);
            let ids: Vec<&String> = run.reports.iter().map(|r| &r.document_id).collect();
            let base: Vec<&String> = runs[0].reports.iter().map(|r| &r.document_id).collect();
            assert_eq!(ids, base);
        }
    }

    #[test]
    fn crash_isolates_to_one_report() {
        let docs = sources(&[("a", "fine"), ("bomb", "boom"), ("c", "also fine")]);
        let run = run_pool(&docs, &HarnessConfig::default(), |id, text| {
            if id == "bomb" {
                panic!("deliberate test crash");
            }
            convert_document(text, id, &PipelineOptions::default())
        });
        assert_eq!(run.summary.failed, 1);
        let bomb = run
            .reports
            .iter()
            .find(|r| r.document_id == "bomb")
            .unwrap();
        assert_eq!(bomb.status, ConversionStatus::Failed);
        assert!(bomb.diagnostics.iter().any(|d| d.code == "internal-panic"));
        assert!(run.pages.contains_key("a") && run.pages.contains_key("c"));
    }

    #[test]
    fn timeout_marks_document_failed() {
        let docs = sources(&[("spin", "\\def\\x#1{\\x{#1#1}}\\x{a}"), ("ok", "fine")]);
        let run = convert_sources(
            &docs,
            &HarnessConfig {
                timeout: Duration::from_millis(100),
                ..HarnessConfig::default()
            },
        );
        assert!(run.pages.contains_key("ok"));
        let spin = run
            .reports
            .iter()
            .find(|r| r.document_id == "spin")
            .unwrap();
        // Either the timeout or the expansion limit catches it.
        assert_ne!(spin.status, ConversionStatus::ErrorFree);
    }

    #[test]
    fn unknown_macro_everywhere_ranks_first() {
        let docs: Vec<(String, String)> = (0..5)
            .map(|i| (format!("d{i}"), "uses \\unknowncmd once".to_string()))
            .collect();
        let run = convert_sources(&docs, &HarnessConfig::default());
        assert_eq!(run.summary.macro_frequency[0].name, "unknowncmd");
        assert_eq!(run.summary.macro_frequency[0].documents, 5);
    }

    #[test]
    fn top_k_clamps() {
        let docs = sources(&[("a", "\\foo \\bar \\foo")]);
        let run = convert_sources(&docs, &HarnessConfig::default());
        assert_eq!(top_missing(&run.summary, 1).len(), 1);
        assert_eq!(
            top_missing(&run.summary, 99).len(),
            run.summary.macro_frequency.len()
        );
    }

    #[test]
    fn merge_matches_single_shot() {
        let docs = sources(&[
            ("a", "text \\foo"),
            ("b", "text"),
            ("c", "broken $x"),
            ("d", "\\foo \\foo"),
        ]);
        let whole = convert_sources(&docs, &HarnessConfig::default());
        let left = convert_sources(&docs[..2], &HarnessConfig::default());
        let right = convert_sources(&docs[2..], &HarnessConfig::default());
        let merged = merge_reports(&left.reports, &right.reports, 0.0).unwrap();
        assert_eq!(merged.error_free, whole.summary.error_free);
        assert_eq!(merged.failed, whole.summary.failed);
        assert_eq!(merged.macro_frequency, whole.summary.macro_frequency);
        // Commutativity.
        let swapped = merge_reports(&right.reports, &left.reports, 0.0).unwrap();
        assert_eq!(swapped.macro_frequency, merged.macro_frequency);
        assert_eq!(swapped.error_free, merged.error_free);
    }

    #[test]
    fn merge_rejects_duplicates() {
        let docs = sources(&[("same", "x")]);
        let run = convert_sources(&docs, &HarnessConfig::default());
        let err = merge_reports(&run.reports, &run.reports, 0.0).unwrap_err();
        assert!(matches!(err, HarnessError::DuplicateDocumentId(id) if id == "same"));
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let docs = sources(&[("a", "x"), ("b", "\\nope")]);
        let run = convert_sources(&docs, &HarnessConfig::default());
        let merged = merge_reports(&run.reports, &[], run.summary.wall_time_ms).unwrap();
        assert_eq!(merged.error_free, run.summary.error_free);
        assert_eq!(merged.macro_frequency, run.summary.macro_frequency);
    }

    #[test]
    fn bench_reports_positive_throughput() {
        let docs = sources(&[("a", "short $x$"), ("b", "also short")]);
        let summary = benchmark(&docs, 3, &HarnessConfig::default());
        assert_eq!(summary.repetitions, 3);
        assert!(summary.median_docs_per_second > 0.0);
        assert!(summary.min_docs_per_second <= summary.median_docs_per_second);
        assert!(summary.median_docs_per_second <= summary.max_docs_per_second);
    }

    #[test]
    fn artifacts_written() {
        let dir = tempfile::tempdir().unwrap();
        let docs = sources(&[("good", "hello"), ("bad", "broken $x"), ("warn", "\\nope")]);
        let run = convert_sources(&docs, &HarnessConfig::default());
        write_outputs(&run, dir.path()).unwrap();
        assert!(dir.path().join("good.html").is_file());
        assert!(!dir.path().join("bad.html").exists());
        assert!(dir.path().join("theme.css").is_file());
        let jsonl = fs::read_to_string(dir.path().join("report.jsonl")).unwrap();
        assert_eq!(jsonl.lines().count(), 3);
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
                .unwrap();
        assert_eq!(summary["documents"], 3);
        let ranking = fs::read_to_string(dir.path().join("ranking.txt")).unwrap();
        assert!(ranking.contains("nope"));
    }

    #[test]
    fn discover_and_convert_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("one.tex"), "text one").unwrap();
        fs::write(dir.path().join("two.tex"), "text two").unwrap();
        fs::create_dir(dir.path().join("bundle")).unwrap();
        fs::write(dir.path().join("bundle/main.tex"), "bundled").unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let docs = discover_documents(dir.path()).unwrap();
        let ids: Vec<&str> = docs.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ids, vec!["bundle", "one", "two"]);
        let run = convert_corpus(dir.path(), &HarnessConfig::default()).unwrap();
        assert_eq!(run.summary.documents, 3);
        assert_eq!(run.summary.failed, 0);
    }

    #[test]
    fn feedback_csv_import() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("feedback.csv");
        fs::write(&csv, "id,reports\npaper1,12\npaper2,3\n").unwrap();
        let feedback = import_feedback_csv(&csv).unwrap();
        assert_eq!(feedback["paper1"], 12);
        assert_eq!(feedback.len(), 2);
    }
}
