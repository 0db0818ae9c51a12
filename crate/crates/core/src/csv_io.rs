//! Small helpers for the `#`-annotated CSV files the pipeline exchanges.

use crate::error::{validation, Result};

/// Formats a number with the shortest representation that parses back to
/// the same value.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        // avoid "-0"
        return "0".into();
    }
    format!("{v}")
}

/// `# `-prefixed metadata lines.
pub fn comment_block(lines: &[String]) -> String {
    let mut out = String::new();
    for l in lines {
        out.push_str("# ");
        out.push_str(l);
        out.push('\n');
    }
    out
}

/// A parsed CSV: metadata lines (without the `# ` prefix), header, records.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub meta: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| validation(format!("missing column {name:?}")))
    }

    /// Value of a `key=value` metadata line.
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find_map(|m| m.strip_prefix(key)?.strip_prefix('='))
    }
}

pub fn read_table(text: &str) -> Result<Table> {
    let meta = text
        .lines()
        .filter_map(|l| l.strip_prefix('#'))
        .map(|l| l.strip_prefix(' ').unwrap_or(l).to_string())
        .collect();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = rdr.headers()?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok(Table { meta, header, rows })
}

pub fn parse_num(s: &str, what: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| validation(format!("invalid number {s:?} in column {what}")))
}
