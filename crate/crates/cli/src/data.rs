//! CSV input and output.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::CliError;

/// Numeric table read from CSV, with its header when the file had one.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
    /// File line of each row.
    pub lines: Vec<u64>,
}

impl Table {
    pub fn columns(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }
}

fn parse_cell(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok()
}

// The reader's position can sit on blank lines it skipped before the record.
fn record_line(text: &str, pos: &csv::Position) -> u64 {
    let start = pos.byte() as usize;
    let skipped = text.as_bytes()[start.min(text.len())..]
        .iter()
        .take_while(|&&b| b == b'\n' || b == b'\r')
        .filter(|&&b| b == b'\n')
        .count();
    pos.line() + skipped as u64
}

/// Reads a comma-separated numeric table. The first row is a header when
/// any of its cells is not a number.
pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut lines = Vec::new();
    let mut width = None;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(idx as u64 + 1, |p| record_line(&text, p));
        if record.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        if idx == 0 && record.iter().any(|c| parse_cell(c).is_none()) {
            header = Some(record.iter().map(|c| c.trim().to_string()).collect::<Vec<_>>());
            width = Some(record.len());
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(CliError::Data(format!(
                "{}: line {line}: expected {expected} columns, found {}",
                path.display(),
                record.len()
            )));
        }
        let mut row = Vec::with_capacity(expected);
        for (col, cell) in record.iter().enumerate() {
            match parse_cell(cell) {
                Some(v) if v.is_finite() => row.push(v),
                _ => {
                    return Err(CliError::Data(format!(
                        "{}: line {line}, column {}: {cell:?} is not a finite number",
                        path.display(),
                        col + 1
                    )))
                }
            }
        }
        rows.push(row);
        lines.push(line);
    }
    if rows.is_empty() {
        return Err(CliError::Data(format!("{}: no data rows", path.display())));
    }
    Ok(Table { header, rows, lines })
}

/// `c1, ..., cd`.
pub fn default_header(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("c{j}")).collect()
}

/// Writes a header and rows. Numbers use the shortest decimal form that
/// parses back to the same `f64`.
pub fn write_table(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| write_error(path, e))?;
    writer.write_record(header).map_err(|e| write_error(path, e))?;
    for row in rows {
        writer
            .write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| write_error(path, e))?;
    }
    writer.flush().map_err(|e| write_error(path, e))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut file = File::create(path).map_err(|e| write_error(path, e))?;
    serde_json::to_writer_pretty(&mut file, value).map_err(|e| write_error(path, e))?;
    writeln!(file).map_err(|e| write_error(path, e))
}

fn write_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("cannot write {}: {e}", path.display()))
}
