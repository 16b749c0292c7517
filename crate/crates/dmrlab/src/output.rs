//! Bit-stable tabular outputs: CSV columns rendered at 17 significant digits
//! (lossless for f64) and a JSON run summary carrying the config hash,
//! tolerances, and diagnostics.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{DiagnosticsReport, SandwichOutcome, StabilityReport};
use crate::error::{Error, Result};

/// 17 significant digits: round-trips every finite f64 exactly.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_csv(path: &Path, headers: &[&str], columns: &[&[f64]]) -> Result<()> {
    assert_eq!(headers.len(), columns.len(), "headers/columns mismatch");
    let rows = columns.first().map(|c| c.len()).unwrap_or(0);
    for col in columns {
        assert_eq!(col.len(), rows, "ragged CSV columns");
    }
    let mut text = String::with_capacity(rows * headers.len() * 26);
    text.push_str(&headers.join(","));
    text.push('\n');
    for row in 0..rows {
        for (i, col) in columns.iter().enumerate() {
            if i > 0 {
                text.push(',');
            }
            text.push_str(&format_f64(col[row]));
        }
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}

/// Render the CSV into a string without touching the filesystem (used by the
/// validator for byte comparison).
pub fn render_csv(headers: &[&str], columns: &[&[f64]]) -> String {
    let rows = columns.first().map(|c| c.len()).unwrap_or(0);
    let mut text = String::new();
    text.push_str(&headers.join(","));
    text.push('\n');
    for row in 0..rows {
        for (i, col) in columns.iter().enumerate() {
            if i > 0 {
                text.push(',');
            }
            text.push_str(&format_f64(col[row]));
        }
        text.push('\n');
    }
    text
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSummary {
    pub horizon: f64,
    pub steps: usize,
}

/// Run summary written next to the data files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub grid: GridSummary,
    pub paths: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_trace: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub picard_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_penalty: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penetration: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relaxed_origin: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope_pen_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub successive_diffs: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discrepancies: Option<Vec<(f64, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sandwich: Option<SandwichOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compensator_total_variation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flatoff: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub notes: Option<Vec<String>>,
}

impl RunSummary {
    pub fn new(command: &str, config_hash: &str, seed: u64, horizon: f64, steps: usize, paths: usize) -> Self {
        RunSummary {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            grid: GridSummary { horizon, steps },
            paths,
            iterations: None,
            delta_trace: None,
            picard_tol: None,
            diagnostics: None,
            n_penalty: None,
            penetration: None,
            relaxed_origin: None,
            slope_pen_r: None,
            successive_diffs: None,
            discrepancies: None,
            sandwich: None,
            stability: None,
            compensator_total_variation: None,
            flatoff: None,
            notes: None,
        }
    }

    pub fn render(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|mut s| {
                s.push('\n');
                s
            })
            .map_err(|e| Error::Config(format!("summary serialization failed: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.render()?)
    }
}

pub fn read_summary(path: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("summary parse error in {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digit_round_trip() {
        for &x in &[
            0.1,
            -3.0,
            1.0 / 3.0,
            std::f64::consts::PI,
            1e-300,
            2.2250738585072014e-308,
            123456789.123456789,
        ] {
            let s = format_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "round trip failed for {s}");
        }
    }

    #[test]
    fn csv_rendering_is_deterministic() {
        let a = vec![0.0, 0.5, 1.0];
        let b = vec![1.0, -2.0, 0.25];
        let one = render_csv(&["t", "v"], &[&a, &b]);
        let two = render_csv(&["t", "v"], &[&a, &b]);
        assert_eq!(one, two);
        assert!(one.starts_with("t,v\n"));
        assert_eq!(one.lines().count(), 4);
    }
}
