use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::example::{Dataset, Record};
use crate::error::{Error, Result};

/// Parses a JSONL corpus. Blank lines are skipped; line numbers are 1-based.
pub fn parse_jsonl(text: &str) -> Result<Dataset> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        record.validate().map_err(|e| Error::Parse {
            line: i + 1,
            column: 0,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(Dataset::new(records))
}

pub fn to_jsonl_string(ds: &Dataset) -> String {
    let mut out = String::new();
    for r in &ds.records {
        let line = serde_json::to_string(r).expect("records always serialize");
        writeln!(out, "{line}").unwrap();
    }
    out
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text)
}

pub fn save_jsonl(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_jsonl_string(ds)).map_err(|e| Error::io(path, e))
}
