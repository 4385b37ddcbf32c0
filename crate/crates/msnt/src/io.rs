//! Dataset, corpus, vocabulary, checkpoint and resource files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use msnt_core::augment::{StubTranslator, Thesaurus};
use msnt_core::model::{decode_checkpoint_for, encode_checkpoint};
use msnt_core::{LabeledExample, Sentiment, SentimentModel, Vocab};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

/// Offending rows listed before a load aborts.
pub const MAX_REPORTED: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Jsonl,
    Csv,
}

impl DatasetFormat {
    pub fn from_path(path: &Path) -> AppResult<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("jsonl" | "json") => Ok(DatasetFormat::Jsonl),
            Some("csv") => Ok(DatasetFormat::Csv),
            _ => Err(AppError::Usage(format!(
                "{}: dataset files must end in .jsonl or .csv",
                path.display()
            ))),
        }
    }
}

/// A malformed row: 1-based line number and reason.
pub type Offender = (usize, String);

pub fn read_bytes(path: &Path) -> AppResult<Vec<u8>> {
    fs::read(path).map_err(|e| AppError::reading(path, e))
}

pub fn read_text(path: &Path) -> AppResult<String> {
    String::from_utf8(read_bytes(path)?).map_err(|e| AppError::reading(path, e))
}

/// Writes `bytes`, creating parent directories as needed.
pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> AppResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AppError::writing(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| AppError::writing(path, e))
}

fn parse_label(raw: &str) -> Result<Sentiment, String> {
    Sentiment::parse(raw).ok_or_else(|| format!("unknown label {raw:?}"))
}

struct Collector {
    examples: Vec<LabeledExample>,
    offenders: Vec<Offender>,
    ids: BTreeSet<usize>,
}

impl Collector {
    fn new() -> Self {
        Self {
            examples: Vec::new(),
            offenders: Vec::new(),
            ids: BTreeSet::new(),
        }
    }

    fn push(&mut self, line: usize, row: Result<(Option<usize>, String, Sentiment), String>) {
        match row {
            Ok((id, text, label)) => {
                let id = id.unwrap_or(self.examples.len() + self.offenders.len());
                if text.trim().is_empty() {
                    self.offenders.push((line, "empty text".into()));
                } else if !self.ids.insert(id) {
                    self.offenders.push((line, format!("duplicate id {id}")));
                } else {
                    self.examples.push(LabeledExample::new(id, text, label));
                }
            }
            Err(reason) => self.offenders.push((line, reason)),
        }
    }

    fn finish(self) -> Result<Vec<LabeledExample>, Vec<Offender>> {
        if self.offenders.is_empty() {
            Ok(self.examples)
        } else {
            Err(self.offenders)
        }
    }
}

fn json_row(line: &str) -> Result<(Option<usize>, String, Sentiment), String> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value.as_object().ok_or("record is not a JSON object")?;
    let text = match obj.get("text") {
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(_) => return Err("field \"text\" is not a string".into()),
        None => return Err("missing field \"text\"".into()),
    };
    let label = match obj.get("label") {
        Some(serde_json::Value::String(s)) => parse_label(s)?,
        Some(_) => return Err("field \"label\" is not a string".into()),
        None => return Err("missing field \"label\"".into()),
    };
    let id = match obj.get("id") {
        None => None,
        Some(v) => Some(v.as_u64().ok_or("field \"id\" is not a non-negative integer")? as usize),
    };
    Ok((id, text, label))
}

/// Parses JSON-lines records `{"text", "label"[, "id"]}`; blank lines are
/// skipped. Missing ids default to the record's ordinal.
pub fn parse_jsonl(bytes: &[u8]) -> Result<Vec<LabeledExample>, Vec<Offender>> {
    let mut c = Collector::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = match std::str::from_utf8(raw) {
            Ok(s) => s.trim_end_matches('\r'),
            Err(_) => {
                c.offenders.push((i + 1, "invalid UTF-8".into()));
                continue;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        c.push(i + 1, json_row(line));
    }
    c.finish()
}

/// Parses CSV with a header naming `text` and `label` (and optionally
/// `id`) columns in any order.
pub fn parse_csv(bytes: &[u8]) -> Result<Vec<LabeledExample>, Vec<Offender>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = match reader.byte_headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(vec![(1, format!("unreadable header: {e}"))]),
    };
    let column = |name: &str| header.iter().position(|h| h.eq_ignore_ascii_case(name.as_bytes()));
    let (Some(text_col), Some(label_col)) = (column("text"), column("label")) else {
        return Err(vec![(1, "header must name \"text\" and \"label\" columns".into())]);
    };
    let id_col = column("id");
    let mut c = Collector::new();
    for record in reader.byte_records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                c.offenders.push((line, format!("malformed row: {e}")));
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| -> Result<&str, String> {
            let raw = record.get(i).ok_or("missing field")?;
            std::str::from_utf8(raw).map_err(|_| "invalid UTF-8".to_string())
        };
        let row = (|| {
            let text = field(text_col)?.to_string();
            let label = parse_label(field(label_col)?)?;
            let id = match id_col {
                Some(i) => Some(field(i)?.trim().parse::<usize>().map_err(|_| "id is not a non-negative integer")?),
                None => None,
            };
            Ok((id, text, label))
        })();
        c.push(line, row);
    }
    c.finish()
}

fn offender_error(path: &Path, offenders: &[Offender]) -> AppError {
    let mut msg = format!("{}: {} malformed row(s)", path.display(), offenders.len());
    for (line, reason) in offenders.iter().take(MAX_REPORTED) {
        msg.push_str(&format!("\n  line {line}: {reason}"));
    }
    if offenders.len() > MAX_REPORTED {
        msg.push_str(&format!("\n  ... and {} more", offenders.len() - MAX_REPORTED));
    }
    AppError::Data(msg)
}

/// Loads a labeled dataset, inferring the format from the extension.
pub fn load_dataset(path: &Path) -> AppResult<Vec<LabeledExample>> {
    let format = DatasetFormat::from_path(path)?;
    let bytes = read_bytes(path)?;
    let parsed = match format {
        DatasetFormat::Jsonl => parse_jsonl(&bytes),
        DatasetFormat::Csv => parse_csv(&bytes),
    };
    let examples = parsed.map_err(|o| offender_error(path, &o))?;
    if examples.is_empty() {
        return Err(AppError::Data(format!("{}: no examples", path.display())));
    }
    Ok(examples)
}

#[derive(Serialize)]
struct ExampleRecord<'a> {
    id: usize,
    text: &'a str,
    label: &'static str,
}

pub fn dataset_jsonl(examples: &[LabeledExample]) -> String {
    let mut out = String::new();
    for e in examples {
        let rec = ExampleRecord {
            id: e.id,
            text: &e.text,
            label: e.label.name(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("plain record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &Path, examples: &[LabeledExample]) -> AppResult<()> {
    write_file(path, dataset_jsonl(examples))
}

/// Raw texts for vocabulary building: the `text` field of a dataset file,
/// or every non-blank line of any other file.
pub fn read_texts(path: &Path) -> AppResult<Vec<String>> {
    if DatasetFormat::from_path(path).is_ok() {
        return Ok(load_dataset(path)?.into_iter().map(|e| e.text).collect());
    }
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Pretraining corpus: one sentence per line, blank lines between
/// documents.
pub fn parse_corpus(text: &str) -> Vec<Vec<String>> {
    let mut docs = Vec::new();
    let mut current: Vec<String> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            if !current.is_empty() {
                docs.push(std::mem::take(&mut current));
            }
        } else {
            current.push(line.to_string());
        }
    }
    if !current.is_empty() {
        docs.push(current);
    }
    docs
}

pub fn corpus_text(docs: &[Vec<String>]) -> String {
    docs.iter().map(|d| d.join("\n") + "\n").collect::<Vec<_>>().join("\n")
}

pub fn read_corpus(path: &Path) -> AppResult<Vec<Vec<String>>> {
    let docs = parse_corpus(&read_text(path)?);
    if docs.is_empty() {
        return Err(AppError::Data(format!("{}: corpus has no sentences", path.display())));
    }
    Ok(docs)
}

pub fn read_vocab(path: &Path) -> AppResult<Vocab> {
    Vocab::parse(&read_text(path)?).map_err(|e| AppError::reading(path, e))
}

pub fn write_vocab(path: &Path, vocab: &Vocab) -> AppResult<()> {
    write_file(path, vocab.to_file_string())
}

/// Loads a checkpoint and checks it against `vocab`.
pub fn read_model(path: &Path, vocab: &Vocab) -> AppResult<SentimentModel> {
    decode_checkpoint_for(&read_bytes(path)?, vocab).map_err(|e| AppError::reading(path, e))
}

pub fn write_model(path: &Path, model: &SentimentModel, vocab: &Vocab) -> AppResult<()> {
    write_file(path, encode_checkpoint(model, vocab.fingerprint()))
}

/// JSON object mapping each word to a list of synonyms.
pub fn read_thesaurus(path: &Path) -> AppResult<Thesaurus> {
    let map: BTreeMap<String, Vec<String>> =
        serde_json::from_str(&read_text(path)?).map_err(|e| AppError::reading(path, e))?;
    Thesaurus::new(map).map_err(|e| AppError::reading(path, e))
}

/// JSON object mapping each target language to a word-to-word dictionary.
pub fn read_translator(path: &Path) -> AppResult<StubTranslator> {
    let dictionaries: BTreeMap<String, BTreeMap<String, String>> =
        serde_json::from_str(&read_text(path)?).map_err(|e| AppError::reading(path, e))?;
    Ok(StubTranslator { dictionaries })
}

/// One predicted label per example, optionally with canonical-order
/// probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub text_id: usize,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<[f64; 3]>,
}

pub fn predictions_jsonl(records: &[PredictionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("plain record serializes"));
        out.push('\n');
    }
    out
}

/// Reads a predictions file; labels are validated and case-folded.
pub fn read_predictions(path: &Path) -> AppResult<Vec<(usize, Sentiment)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    let mut offenders = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<PredictionRecord>(line) {
            Ok(r) => match parse_label(&r.label) {
                Ok(l) => out.push((r.text_id, l)),
                Err(e) => offenders.push((i + 1, e)),
            },
            Err(e) => offenders.push((i + 1, format!("invalid record: {e}"))),
        }
    }
    if !offenders.is_empty() {
        return Err(offender_error(path, &offenders));
    }
    if out.is_empty() {
        return Err(AppError::Data(format!("{}: no predictions", path.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_defaults_ids_to_ordinals() {
        let data = b"{\"text\":\"a\",\"label\":\"negative\"}\n\n{\"text\":\"b\",\"label\":\"Positive\"}\n";
        let ex = parse_jsonl(data).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!((ex[0].id, ex[1].id), (0, 1));
        assert_eq!(ex[1].label, Sentiment::Positive);
    }

    #[test]
    fn offenders_carry_line_numbers() {
        let data = b"{\"text\":\"a\",\"label\":\"pos\"}\n{\"label\":\"neutral\"}\n{\"text\":\"c\",\"label\":\"neutral\"}\n\xff\n";
        let err = parse_jsonl(data).unwrap_err();
        let lines: Vec<usize> = err.iter().map(|o| o.0).collect();
        assert_eq!(lines, [1, 2, 4]);
        assert!(err[0].1.contains("pos"));
        assert!(err[1].1.contains("text"));
        assert!(err[2].1.contains("UTF-8"));
    }

    #[test]
    fn csv_columns_in_any_order() {
        let data = b"label,text\nneutral,\"hello, world\"\nNEGATIVE,broken\n";
        let ex = parse_csv(data).unwrap();
        assert_eq!(ex[0].text, "hello, world");
        assert_eq!(ex[1].label, Sentiment::Negative);
        assert!(parse_csv(b"body,label\nx,neutral\n").is_err());
        let err = parse_csv(b"text,label\nx,neutral\ny,pos\n").unwrap_err();
        assert_eq!(err[0].0, 3);
    }

    #[test]
    fn corpus_round_trip() {
        let docs = vec![vec!["a b".to_string(), "c".to_string()], vec!["d".to_string(), "e f".to_string()]];
        let text = corpus_text(&docs);
        assert_eq!(text, "a b\nc\n\nd\ne f\n");
        assert_eq!(parse_corpus(&text), docs);
        assert_eq!(parse_corpus("\n\nx\n\n\ny\n"), vec![vec!["x".to_string()], vec!["y".to_string()]]);
    }

    #[test]
    fn dataset_round_trip() {
        let ex = vec![
            LabeledExample::new(4, "a \"quoted\" text", Sentiment::Neutral),
            LabeledExample::new(9, "b", Sentiment::Positive),
        ];
        assert_eq!(parse_jsonl(dataset_jsonl(&ex).as_bytes()).unwrap(), ex);
    }
}
