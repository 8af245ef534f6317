use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::Metrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub label: String,
    pub metrics: Metrics,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

/// Fixed-width text table.
pub fn render_table(rows: &[MetricsRow]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:>10}  {:>10}  {:>10}  {:>10}  {:>8}",
        "setup", "MAE", "RMSE", "MAPE%", "MRE%", "n"
    );
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{:<width$}  {:>10.4}  {:>10.4}  {:>10}  {:>10}  {:>8}",
            r.label,
            m.mae,
            m.rmse,
            cell(m.mape),
            cell(m.mre),
            m.count
        );
    }
    s
}

pub fn write_table(json: &Path, text: &Path, rows: &[MetricsRow]) -> Result<()> {
    let body = serde_json::to_string_pretty(rows)? + "\n";
    fs::write(json, body).map_err(|e| Error::io(json, e))?;
    fs::write(text, render_table(rows)).map_err(|e| Error::io(text, e))
}
