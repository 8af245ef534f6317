use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entries with `|y|` below this are left out of MAPE.
pub const MAPE_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// Percent; `None` when every target is below the guard.
    pub mape: Option<f64>,
    /// Percent; `None` when `Σ|y| = 0`.
    pub mre: Option<f64>,
    pub count: usize,
}

pub fn metrics(y: &[f64], y_hat: &[f64]) -> Result<Metrics> {
    if y.is_empty() || y.len() != y_hat.len() {
        return Err(Error::Config(format!(
            "metrics need equal non-empty inputs, got {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    let n = y.len() as f64;
    let (mut abs, mut sq, mut l1) = (0.0, 0.0, 0.0);
    let (mut pct, mut kept) = (0.0, 0usize);
    for (&t, &p) in y.iter().zip(y_hat) {
        let e = (p - t).abs();
        abs += e;
        sq += e * e;
        l1 += t.abs();
        if t.abs() >= MAPE_GUARD {
            pct += e / t.abs();
            kept += 1;
        }
    }
    Ok(Metrics {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        mape: (kept > 0).then(|| 100.0 * pct / kept as f64),
        mre: (l1 > 0.0).then(|| 100.0 * abs / l1),
        count: y.len(),
    })
}
