//! Chronological train/validation/test split.

use super::panel::Panel;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Panel,
    pub val: Panel,
    pub test: Panel,
}

/// Segment lengths for `steps` under `ratios`: floor for the first two,
/// remainder to the last.
pub fn split_lengths(steps: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !(*r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios {ratios:?} must be positive and sum to 1"
        )));
    }
    // The small nudge keeps products such as 10 × 0.7 = 6.999… on the integer.
    let train = (steps as f64 * ratios[0] + 1e-9).floor() as usize;
    let val = (steps as f64 * ratios[1] + 1e-9).floor() as usize;
    let train = train.min(steps);
    let val = val.min(steps - train);
    Ok([train, val, steps - train - val])
}

/// Splits along time; every segment must hold at least `min_len` steps.
pub fn chronological_split(panel: &Panel, ratios: [f64; 3], min_len: usize) -> Result<Split> {
    let [a, b, c] = split_lengths(panel.n_steps(), ratios)?;
    if let Some(&len) = [a, b, c].iter().find(|&&l| l < min_len) {
        return Err(Error::TooShort { len, need: min_len });
    }
    Ok(Split {
        train: panel.segment(0, a),
        val: panel.segment(a, b),
        test: panel.segment(a + b, c),
    })
}
