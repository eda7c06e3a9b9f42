//! Question datasets: one JSON record per line.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::manifest::sha256_hex;
use crate::protocol::Question;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {message}")]
    Io { path: String, message: String },
    #[error("dataset {path} has {count} fatal issue(s); first: line {line}: {message}")]
    Invalid {
        path: String,
        count: usize,
        line: usize,
        message: String,
    },
}

/// A per-line problem, fatal or advisory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetIssue {
    pub line: usize,
    pub message: String,
}

/// Validation outcome: parsed records plus fatal issues and warnings with
/// line numbers. Malformed lines are listed, never silently skipped.
#[derive(Debug)]
pub struct DatasetReport {
    pub questions: Vec<Question>,
    pub fatal: Vec<DatasetIssue>,
    pub warnings: Vec<DatasetIssue>,
    /// Content digest of the raw file.
    pub digest: String,
}

impl DatasetReport {
    pub fn is_clean(&self) -> bool {
        self.fatal.is_empty()
    }
}

/// Checks every record against the question invariants.
///
/// Duplicate ids are fatal and list both lines; a missing difficulty label
/// is a warning.
pub fn validate_dataset(path: &Path) -> Result<DatasetReport, DatasetError> {
    let raw = std::fs::read(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let digest = sha256_hex(&raw);
    let reader = BufReader::new(raw.as_slice());
    let mut questions = Vec::new();
    let mut fatal = Vec::new();
    let mut warnings = Vec::new();
    let mut seen_ids: BTreeMap<String, usize> = BTreeMap::new();
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line = line.map_err(|e| DatasetError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let question: Question = match serde_json::from_str(&line) {
            Ok(q) => q,
            Err(e) => {
                fatal.push(DatasetIssue {
                    line: line_no,
                    message: format!("malformed record: {e}"),
                });
                continue;
            }
        };
        if let Err(e) = question.validate() {
            fatal.push(DatasetIssue {
                line: line_no,
                message: e.to_string(),
            });
            continue;
        }
        if let Some(&first_line) = seen_ids.get(&question.id) {
            fatal.push(DatasetIssue {
                line: line_no,
                message: format!(
                    "duplicate id `{}` (first seen at line {first_line})",
                    question.id
                ),
            });
            continue;
        }
        seen_ids.insert(question.id.clone(), line_no);
        if question.difficulty_label.is_none() {
            warnings.push(DatasetIssue {
                line: line_no,
                message: format!("record `{}` has no difficulty_label", question.id),
            });
        }
        questions.push(question);
    }
    Ok(DatasetReport {
        questions,
        fatal,
        warnings,
        digest,
    })
}

/// Loads a dataset, failing on any fatal issue.
pub fn load_questions(path: &Path) -> Result<(Vec<Question>, String), DatasetError> {
    let report = validate_dataset(path)?;
    if let Some(first) = report.fatal.first() {
        return Err(DatasetError::Invalid {
            path: path.display().to_string(),
            count: report.fatal.len(),
            line: first.line,
            message: first.message.clone(),
        });
    }
    Ok((report.questions, report.digest))
}

/// Writes records as line-delimited JSON. Field order follows declaration
/// order, so output bytes are a pure function of the records.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut file, record)?;
        file.write_all(b"\n")?;
    }
    file.flush()
}

/// Reads line-delimited JSON records, with the 1-based line number on error.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let file = std::fs::File::open(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DatasetError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| DatasetError::Invalid {
            path: path.display().to_string(),
            count: 1,
            line: index + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_questions(path: &Path, questions: &[Question]) -> std::io::Result<()> {
    write_jsonl(path, questions)
}
