//! Plain-text table helpers: 17 significant digit floats, comma separated.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// One line per matrix column (column-major), values comma separated.
pub fn columns_to_csv(m: &DMatrix<f64>, header: &str) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for col in m.column_iter() {
        let line: Vec<String> = col.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Parses comma-separated rows of floats into a row-major matrix.
pub fn parse_rows(lines: &[&str], first_line: usize) -> Result<DMatrix<f64>> {
    let mut data = Vec::new();
    let mut width = None;
    for (k, line) in lines.iter().enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { line: first_line + k, msg: e.to_string() })?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse {
                    line: first_line + k,
                    msg: format!("expected {w} fields, got {}", row.len()),
                })
            }
            _ => {}
        }
        data.extend(row);
    }
    let cols = width.unwrap_or(0);
    Ok(DMatrix::from_row_slice(lines.len(), cols, &data))
}
