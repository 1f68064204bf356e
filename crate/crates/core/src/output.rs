//! CSV and JSON writers. CSV floats use 17 significant digits (`{:.16e}`);
//! JSON uses the shortest representation that round-trips exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Result, SisError};

pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn csv_string(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        for (k, x) in row.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            let _ = write!(out, "{x:.16e}");
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    if let Some(bad) = rows.iter().find(|r| r.len() != header.len()) {
        return Err(SisError::Internal(format!("csv row has {} fields, header has {}", bad.len(), header.len())));
    }
    fs::write(path, csv_string(header, rows))?;
    Ok(())
}

pub fn json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| SisError::Internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, json_string(value)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            let s = format_float(x);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
            assert_eq!(mantissa.len(), 17, "{s}");
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn csv_layout() {
        let s = csv_string(&["t", "v"], &[vec![0.0, 1.0], vec![0.5, 2.0]]);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "t,v");
        assert_eq!(lines[2], "5.0000000000000000e-1,2.0000000000000000e0");
    }

    #[test]
    fn ragged_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_csv(&dir.path().join("x.csv"), &["a", "b"], &[vec![1.0]]).is_err());
    }
}
