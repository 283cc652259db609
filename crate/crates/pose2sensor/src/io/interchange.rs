//! Canonical text interchange format for time-indexed signals: a header line
//! naming the columns, then one comma-separated row of decimal values per
//! sample. The first column is sample time in seconds and must be strictly
//! increasing; every row has the same column count.

use std::path::Path;

use crate::error::{Error, Result};

/// A parsed interchange table: named columns over row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct InterchangeMatrix {
    columns: Vec<String>,
    /// Row-major values, `columns.len()` per row.
    data: Vec<f64>,
}

impl InterchangeMatrix {
    /// Build a table, checking the column-count and time-ordering invariants.
    pub fn new(columns: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Format("interchange table needs at least a time column".into()));
        }
        let n_cols = columns.len();
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        let mut prev_time = f64::NEG_INFINITY;
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::Format(format!(
                    "row {} has {} values, header names {} columns",
                    i + 1,
                    row.len(),
                    n_cols
                )));
            }
            check_time(row[0], &mut prev_time, i)?;
            data.extend_from_slice(&row);
        }
        Ok(Self { columns, data })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.columns.len();
        &self.data[i * n..(i + 1) * n]
    }

    /// The time column (first value of every row).
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.chunks_exact(self.columns.len()).map(|r| r[0])
    }

    /// One named column as a vector; errors if the name is absent.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Format(format!("no column named {name:?}")))?;
        Ok(self
            .data
            .chunks_exact(self.columns.len())
            .map(|r| r[idx])
            .collect())
    }

    /// Serialize to the canonical text form. `{}` formatting emits the
    /// shortest decimal that parses back to the identical float, so
    /// write→read is exact and byte-deterministic.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in self.data.chunks_exact(self.columns.len()) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                first = false;
                out.push_str(&format_value(*v));
            }
            out.push('\n');
        }
        out
    }
}

fn format_value(v: f64) -> String {
    // Keep NaN/inf out of files; they would not survive a strict re-read.
    debug_assert!(v.is_finite(), "non-finite value in interchange table");
    format!("{v}")
}

fn check_time(t: f64, prev: &mut f64, row: usize) -> Result<()> {
    if !t.is_finite() {
        return Err(Error::Format(format!("row {} has a non-finite time", row + 1)));
    }
    if t <= *prev {
        return Err(Error::Format(format!(
            "time column not strictly increasing at row {} ({t} after {prev})",
            row + 1
        )));
    }
    *prev = t;
    Ok(())
}

pub fn parse_interchange(text: &str) -> Result<InterchangeMatrix> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty interchange file".into()))?;
    let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
    if columns.iter().any(|c| c.is_empty()) {
        return Err(Error::Format(format!("header has an empty column name: {header:?}")));
    }
    let n_cols = columns.len();
    let mut data = Vec::new();
    let mut prev_time = f64::NEG_INFINITY;
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let start = data.len();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Format(format!("row {}: {field:?} is not a decimal value", i + 1))
            })?;
            data.push(v);
        }
        let got = data.len() - start;
        if got != n_cols {
            return Err(Error::Format(format!(
                "row {} has {got} values, header names {n_cols} columns",
                i + 1
            )));
        }
        check_time(data[start], &mut prev_time, i)?;
    }
    Ok(InterchangeMatrix { columns, data })
}

pub fn read_interchange(path: &Path) -> Result<InterchangeMatrix> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    parse_interchange(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_interchange(path: &Path, m: &InterchangeMatrix) -> Result<()> {
    std::fs::write(path, m.render())?;
    Ok(())
}
