//! Report artifacts. Tables round to two decimals; JSON and CSV keep full
//! precision (shortest round-trip formatting).

use msnt_core::distill::CompressionReport;
use msnt_core::ensemble::AgreementMatrix;
use msnt_core::finetune::EpochRecord;
use msnt_core::metrics::{round2, Aggregate, EvalReport};
use msnt_core::pretrain::PretrainTrace;
use msnt_core::Sentiment;
use serde::{Deserialize, Serialize};

use crate::config::Settings;

/// `git describe`-style version string recorded in run logs.
pub fn version() -> &'static str {
    option_env!("MSNT_GIT_DESCRIBE").unwrap_or(concat!("v", env!("CARGO_PKG_VERSION")))
}

/// Which table a report belongs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportKind {
    Model,
    Ensemble,
    Student,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<Aggregate> for AggregateRecord {
    fn from(a: Aggregate) -> Self {
        Self {
            precision: a.precision,
            recall: a.recall,
            f1: a.f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub name: String,
    pub kind: ReportKind,
    pub dataset: String,
    pub accuracy: f64,
    pub classes: Vec<ClassRecord>,
    pub macro_avg: AggregateRecord,
    pub weighted_avg: AggregateRecord,
    pub micro_avg: AggregateRecord,
    /// Rows are true labels, columns predictions, both in class order.
    pub confusion: [[u64; 3]; 3],
    pub warnings: Vec<String>,
}

impl ReportRecord {
    pub fn new(report: &EvalReport, kind: ReportKind, dataset: &str) -> Self {
        Self {
            name: report.name.clone(),
            kind,
            dataset: dataset.to_string(),
            accuracy: report.accuracy,
            classes: Sentiment::ALL
                .iter()
                .map(|&c| {
                    let m = report.class(c);
                    ClassRecord {
                        label: c.name().into(),
                        precision: m.precision,
                        recall: m.recall,
                        f1: m.f1,
                        support: m.support,
                    }
                })
                .collect(),
            macro_avg: report.macro_avg.into(),
            weighted_avg: report.weighted_avg.into(),
            micro_avg: report.micro_avg.into(),
            confusion: report.confusion.counts,
            warnings: report.warnings.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

fn title(kind: ReportKind) -> &'static str {
    match kind {
        ReportKind::Model => "Fine-tuned models",
        ReportKind::Ensemble => "Ensemble",
        ReportKind::Student => "Compressed model",
    }
}

/// Renders rows as space-separated columns; the first `left` columns are
/// left-aligned, the rest right-aligned.
fn align(rows: &[Vec<String>], left: usize) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c < left {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn fmt2(x: f64) -> String {
    format!("{:.2}", round2(x))
}

/// One table of per-class precision, recall and F1 per model and dataset,
/// followed by macro and weighted averages.
pub fn render_table(heading: &str, reports: &[&ReportRecord]) -> String {
    let mut rows = vec![["Model", "Dataset", "Class", "Precision", "Recall", "F1", "Support"]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()];
    let dash = rows[0].iter().map(|h| "-".repeat(h.len())).collect();
    rows.push(dash);
    for r in reports {
        let total: u64 = r.classes.iter().map(|c| c.support).sum();
        for (i, c) in r.classes.iter().enumerate() {
            let (name, dataset) = if i == 0 { (r.name.clone(), r.dataset.clone()) } else { (String::new(), String::new()) };
            rows.push(vec![name, dataset, c.label.clone(), fmt2(c.precision), fmt2(c.recall), fmt2(c.f1), c.support.to_string()]);
        }
        for (label, a) in [("macro avg", r.macro_avg), ("weighted avg", r.weighted_avg)] {
            rows.push(vec![String::new(), String::new(), label.into(), fmt2(a.precision), fmt2(a.recall), fmt2(a.f1), total.to_string()]);
        }
        rows.push(vec![String::new(), String::new(), "accuracy".into(), String::new(), String::new(), fmt2(r.accuracy), total.to_string()]);
    }
    format!("{heading}\n\n{}", align(&rows, 3))
}

/// Full report: one table per report kind present, then the compression
/// summary when given.
pub fn render_report(reports: &[ReportRecord], compression: Option<&CompressionRecord>) -> String {
    let mut sections = Vec::new();
    for kind in [ReportKind::Model, ReportKind::Ensemble, ReportKind::Student] {
        let group: Vec<&ReportRecord> = reports.iter().filter(|r| r.kind == kind).collect();
        if !group.is_empty() {
            sections.push(render_table(title(kind), &group));
        }
    }
    if let Some(c) = compression {
        sections.push(render_compression(c));
    }
    sections.join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionRecord {
    pub teacher_parameters: usize,
    pub student_parameters: usize,
    pub size_reduction: f64,
    pub teacher_macro_f1: f64,
    pub student_macro_f1: f64,
    pub retention: f64,
}

impl From<&CompressionReport> for CompressionRecord {
    fn from(c: &CompressionReport) -> Self {
        Self {
            teacher_parameters: c.teacher_parameters,
            student_parameters: c.student_parameters,
            size_reduction: c.size_reduction,
            teacher_macro_f1: c.teacher_macro_f1,
            student_macro_f1: c.student_macro_f1,
            retention: c.retention,
        }
    }
}

impl CompressionRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes") + "\n"
    }
}

pub fn render_compression(c: &CompressionRecord) -> String {
    let rows = vec![
        vec!["Model".to_string(), "Parameters".into(), "Macro F1".into()],
        vec!["-----".to_string(), "----------".into(), "--------".into()],
        vec!["teacher".to_string(), c.teacher_parameters.to_string(), fmt2(c.teacher_macro_f1)],
        vec!["student".to_string(), c.student_parameters.to_string(), fmt2(c.student_macro_f1)],
    ];
    format!(
        "Compression\n\n{}\nsize reduction {:.1}%, F1 retention {:.1}%\n",
        align(&rows, 1),
        100.0 * c.size_reduction,
        100.0 * c.retention
    )
}

fn csv_matrix<T>(names: &[String], rows: &[Vec<T>], cell: impl Fn(&T) -> String) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let header: Vec<&str> = std::iter::once("model").chain(names.iter().map(String::as_str)).collect();
    w.write_record(&header).expect("in-memory write");
    for (name, row) in names.iter().zip(rows) {
        let cells: Vec<String> = std::iter::once(name.clone()).chain(row.iter().map(&cell)).collect();
        w.write_record(&cells).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
}

/// Pairwise agreement rates with model names as headers.
pub fn agreement_csv(m: &AgreementMatrix) -> String {
    csv_matrix(&m.names, &m.agreement, |v| v.to_string())
}

/// Pairwise Pearson correlations; undefined entries are `NA`.
pub fn correlation_csv(m: &AgreementMatrix) -> String {
    csv_matrix(&m.names, &m.correlation, |v| v.map_or_else(|| "NA".to_string(), |x| x.to_string()))
}

/// Parses a matrix written by [`agreement_csv`] or [`correlation_csv`].
pub fn parse_matrix_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<Option<f64>>>), String> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let names: Vec<String> = r.headers().map_err(|e| e.to_string())?.iter().skip(1).map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let row = rec
            .iter()
            .skip(1)
            .map(|c| if c == "NA" { Ok(None) } else { c.parse().map(Some).map_err(|_| format!("bad cell {c:?}")) })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok((names, rows))
}

pub fn history_jsonl(history: &[EpochRecord]) -> String {
    msnt_core::finetune::history_jsonl(history)
}

#[derive(Serialize)]
struct StepRecord {
    step: usize,
    loss: f64,
    mlm_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pair_loss: Option<f64>,
}

/// One JSON line per pretraining step.
pub fn pretrain_trace_jsonl(trace: &PretrainTrace) -> String {
    let mut out = String::new();
    for (i, (&loss, &mlm)) in trace.loss.iter().zip(&trace.mlm_loss).enumerate() {
        let rec = StepRecord {
            step: i + 1,
            loss,
            mlm_loss: mlm,
            pair_loss: trace.pair_loss.get(i).copied(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Run log: command, version, seed, inputs and every setting. Holds no
/// timestamps so identical runs log identical bytes.
pub fn run_log(command: &str, settings: &Settings, inputs: &[(&str, String)]) -> String {
    let mut out = format!("command = {command}\nversion = {}\nseed = {}\n\n[inputs]\n", version(), settings.seed);
    for (k, v) in inputs {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out.push_str("\n[settings]\n");
    out.push_str(&settings.render());
    out
}
