//! Score CSV files: one float per line after a comment header.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const SCORE_HEADER: &str = "# oodkit confidence scores; larger = more in-distribution";

pub fn format_scores(scores: &[f64]) -> String {
    let mut out = String::with_capacity(scores.len() * 20 + SCORE_HEADER.len() + 1);
    out.push_str(SCORE_HEADER);
    out.push('\n');
    for s in scores {
        let _ = writeln!(out, "{s}");
    }
    out
}

pub fn parse_scores(text: &str) -> Result<Vec<f64>> {
    let mut scores = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| Error::invalid(format!("line {}: {line:?} is not a number", lineno + 1)))?;
        if !v.is_finite() {
            return Err(Error::invalid(format!("line {}: non-finite score", lineno + 1)));
        }
        scores.push(v);
    }
    Ok(scores)
}

pub fn write_scores(path: impl AsRef<Path>, scores: &[f64]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_scores(scores)).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(&text)
}
