//! Series input and text output.

use std::str::FromStr;

use dplr_core::fit::fmt_float;
use serde_json::Value;

use crate::CliError;

/// One column of a numeric file: one value per line, or comma-separated
/// columns with an optional header row.
pub fn parse_series(text: &str, column: usize) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let field = fields
            .get(column)
            .ok_or_else(|| format!("line {}: no column {column}", i + 1))?;
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if out.is_empty() && i == 0 => {} // header
            Err(_) => return Err(format!("line {}: '{field}' is not a number", i + 1)),
        }
    }
    if out.is_empty() {
        return Err("no data".into());
    }
    Ok(out)
}

pub fn read_series(path: &str, column: usize) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{path}: {e}")))?;
    parse_series(&text, column).map_err(|e| CliError::Usage(format!("{path}: {e}")))
}

pub fn write_file(path: &str, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{path}: {e}")))
}

pub fn write_output(path: &Option<String>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_file(p, text),
        None => {
            use std::io::Write;
            match std::io::stdout().lock().write_all(text.as_bytes()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Io(format!("stdout: {e}"))),
                _ => Ok(()),
            }
        }
    }
}

/// A JSON number printed with 17 significant digits; null when not finite.
pub fn json_float(v: f64) -> Value {
    if !v.is_finite() {
        return Value::Null;
    }
    Value::Number(serde_json::Number::from_str(&fmt_float(v)).expect("formatted float parses"))
}
