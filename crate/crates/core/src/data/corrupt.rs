//! Random masking of exogenous channels for robustness evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::window::WindowSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Corruption {
    Zero,
    RandomNormal,
}

impl Corruption {
    pub fn label(self) -> &'static str {
        match self {
            Corruption::Zero => "zero",
            Corruption::RandomNormal => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub strategy: Corruption,
    pub ratio: f64,
    pub seed: u64,
    /// Also mask the calendar channels.
    #[serde(default)]
    pub include_date: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CorruptionReport {
    pub eligible: usize,
    pub replaced: usize,
}

fn corrupt_block(
    block: &Tensor,
    exo: usize,
    date: usize,
    spec: &CorruptionSpec,
    rng: &mut ChaCha8Rng,
    report: &mut CorruptionReport,
) -> Tensor {
    let width = exo + date;
    let eligible = if spec.include_date { width } else { exo };
    let mut out = block.clone();
    if width == 0 || eligible == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(width) {
        for v in &mut row[..eligible] {
            report.eligible += 1;
            if rng.random::<f64>() < spec.ratio {
                report.replaced += 1;
                *v = match spec.strategy {
                    Corruption::Zero => 0.0,
                    Corruption::RandomNormal => rng.sample(StandardNormal),
                };
            }
        }
    }
    out
}

/// Replaces each eligible exogenous entry with probability `ratio`. Targets are
/// never touched; calendar channels only when `include_date` is set.
pub fn corrupt_exogenous(
    samples: &[WindowSample],
    spec: &CorruptionSpec,
) -> Result<(Vec<WindowSample>, CorruptionReport)> {
    if !(0.0..=1.0).contains(&spec.ratio) {
        return Err(Error::Config(format!("corruption ratio {} outside [0, 1]", spec.ratio)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut report = CorruptionReport::default();
    let out = samples
        .iter()
        .map(|s| {
            let l = s.layout;
            let e_past = corrupt_block(&s.e_past, l.past_exo, l.date, spec, &mut rng, &mut report);
            let e_future = corrupt_block(&s.e_future, l.future_exo, l.date, spec, &mut rng, &mut report);
            WindowSample {
                e_past,
                e_future,
                ..s.clone()
            }
        })
        .collect();
    Ok((out, report))
}

/// Hard-zeroes every non-date exogenous channel.
pub fn zero_exogenous(samples: &[WindowSample]) -> Vec<WindowSample> {
    let zero = |block: &Tensor, exo: usize, width: usize| {
        let mut out = block.clone();
        if width > 0 {
            for row in out.data_mut().chunks_mut(width) {
                row[..exo].fill(0.0);
            }
        }
        out
    };
    samples
        .iter()
        .map(|s| {
            let l = s.layout;
            WindowSample {
                e_past: zero(&s.e_past, l.past_exo, l.past_width()),
                e_future: zero(&s.e_future, l.future_exo, l.future_width()),
                ..s.clone()
            }
        })
        .collect()
}
