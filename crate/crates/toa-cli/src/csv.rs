//! CSV output: a header row, then numbers in their shortest round-trip form.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::fmt_f64;
use crate::CliError;

pub fn numeric(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

/// Two-column `quantity,value` table.
pub fn summary(rows: &[(&str, String)]) -> String {
    let mut out = String::from("quantity,value\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

pub fn write(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}
