//! Named numeric tables and their CSV form.
//!
//! A file is a block of `# key=value` metadata lines, a header row and one
//! row per sample. Numbers use the shortest decimal that parses back to
//! the same `f64`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("row {row} has {got} values, expected {expected}")]
    Ragged {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("time column `{column}` decreases at row {row}")]
    NotMonotone { column: String, row: usize },
    #[error("metadata key `{0}` may not contain `=` or line breaks")]
    BadKey(String),
    #[error("missing header row")]
    MissingHeader,
    #[error("bad number `{text}` at line {line}")]
    BadNumber { text: String, line: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug)]
pub struct TraceRecord {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub metadata: BTreeMap<String, String>,
}

impl PartialEq for TraceRecord {
    /// Bitwise on the values, so NaN entries compare equal to themselves.
    fn eq(&self, other: &Self) -> bool {
        let bits = |rows: &[Vec<f64>]| -> Vec<Vec<u64>> {
            rows.iter()
                .map(|r| r.iter().map(|x| x.to_bits()).collect())
                .collect()
        };
        self.name == other.name
            && self.columns == other.columns
            && self.metadata == other.metadata
            && bits(&self.rows) == bits(&other.rows)
    }
}

pub fn format_number(x: f64) -> String {
    format!("{x:?}")
}

impl TraceRecord {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        TraceRecord {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Rectangular rows, and a non-decreasing first column when it is
    /// called `t` or `t_r`.
    pub fn check(&self) -> Result<(), TraceError> {
        let expected = self.columns.len();
        for (row, r) in self.rows.iter().enumerate() {
            if r.len() != expected {
                return Err(TraceError::Ragged {
                    row,
                    got: r.len(),
                    expected,
                });
            }
        }
        if let Some(first) = self.columns.first().filter(|c| *c == "t" || *c == "t_r") {
            if let Some(row) = self.rows.windows(2).position(|w| w[1][0] < w[0][0]) {
                return Err(TraceError::NotMonotone {
                    column: first.clone(),
                    row: row + 1,
                });
            }
        }
        for key in self.metadata.keys().chain(self.metadata.values()) {
            if key.contains(['\n', '\r']) {
                return Err(TraceError::BadKey(key.clone()));
            }
        }
        if let Some(key) = self.metadata.keys().find(|k| k.contains('=')) {
            return Err(TraceError::BadKey(key.clone()));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), TraceError> {
        self.check()?;
        writeln!(out, "# name={}", self.name)?;
        for (k, v) in &self.metadata {
            writeln!(out, "# {k}={v}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|&x| format_number(x)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String, TraceError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn parse_csv<R: BufRead>(input: R) -> Result<Self, TraceError> {
        let mut name = String::new();
        let mut metadata = BTreeMap::new();
        let mut body = String::new();
        let mut header_line = 0;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if body.is_empty() {
                if let Some(meta) = line.strip_prefix("# ") {
                    let (k, v) = meta.split_once('=').unwrap_or((meta, ""));
                    if k == "name" {
                        name = v.to_string();
                    } else {
                        metadata.insert(k.to_string(), v.to_string());
                    }
                    continue;
                }
                header_line = i + 1;
            }
            body.push_str(&line);
            body.push('\n');
        }
        let mut reader = csv::ReaderBuilder::new().from_reader(body.as_bytes());
        let columns: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if columns.is_empty() || body.is_empty() {
            return Err(TraceError::MissingHeader);
        }
        let mut rows = Vec::new();
        for (k, record) in reader.records().enumerate() {
            let record = record?;
            let row = record
                .iter()
                .map(|s| {
                    s.parse::<f64>().map_err(|_| TraceError::BadNumber {
                        text: s.to_string(),
                        line: header_line + k + 1,
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            rows.push(row);
        }
        let record = TraceRecord {
            name,
            columns,
            rows,
            metadata,
        };
        record.check()?;
        Ok(record)
    }
}
