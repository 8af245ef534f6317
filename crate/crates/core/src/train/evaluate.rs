use std::collections::HashMap;

use rayon::prelude::*;

use super::metrics::{metrics, Metrics};
use crate::data::{Scaler, WindowSample};
use crate::error::{Error, Result};
use crate::model::{Batch, ExoStModel};
use crate::tensor::Tensor;

/// Samples per prediction chunk during evaluation.
pub const EVAL_CHUNK: usize = 256;

/// Anything that maps a batch to `[B, N, T_f, 1]` normalized forecasts.
pub trait Forecaster: Sync {
    fn forecast(&self, batch: &Batch) -> Result<Tensor>;
}

impl Forecaster for ExoStModel {
    fn forecast(&self, batch: &Batch) -> Result<Tensor> {
        self.predict(batch)
    }
}

/// Forecasts for `samples` in order, one tensor `[N, T_f, 1]` each.
pub fn forecast_all(model: &dyn Forecaster, samples: &[WindowSample]) -> Result<Vec<Tensor>> {
    let chunks: Vec<Vec<Tensor>> = samples
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let refs: Vec<&WindowSample> = chunk.iter().collect();
            Ok(model.forecast(&Batch::from_samples(&refs)?)?.unstack())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Origins usable for a `days`-long rollout: indices `i` such that the
/// samples starting `j·T_f` steps later exist for every later day `j`.
pub fn rollout_origins(samples: &[WindowSample], days: usize) -> Vec<Vec<usize>> {
    let by_start: HashMap<usize, usize> = samples.iter().enumerate().map(|(i, s)| (s.start, i)).collect();
    samples
        .iter()
        .filter_map(|s| {
            let t_f = s.t_future();
            (0..days)
                .map(|j| by_start.get(&(s.start + j * t_f)).copied())
                .collect::<Option<Vec<_>>>()
        })
        .collect()
}

/// Last `t_past` steps of `history ++ prediction` along time (`[N, T, 1]`).
fn roll_history(history: &Tensor, prediction: &Tensor) -> Tensor {
    let (n, t_p, t_f) = (history.shape()[0], history.shape()[1], prediction.shape()[1]);
    Tensor::from_fn(&[n, t_p, 1], |i| {
        let (node, t) = (i / t_p, i % t_p);
        let pos = t + t_f;
        if pos < t_p {
            history.data()[node * t_p + pos]
        } else {
            prediction.data()[node * t_f + pos - t_p]
        }
    })
}

/// Denormalized metrics over a `days`-long horizon. Day one is a direct
/// forecast; each later day feeds the previous forecast back as target
/// history while exogenous channels come from the data.
pub fn evaluate(model: &dyn Forecaster, samples: &[WindowSample], scaler: &Scaler, days: usize) -> Result<Metrics> {
    let (y, y_hat) = rollout(model, samples, days)?;
    let y: Vec<f64> = y.iter().map(|&v| scaler.denormalize_target(v)).collect();
    let y_hat: Vec<f64> = y_hat.iter().map(|&v| scaler.denormalize_target(v)).collect();
    metrics(&y, &y_hat)
}

/// Normalized truths and forecasts over every usable origin, flattened.
pub fn rollout(model: &dyn Forecaster, samples: &[WindowSample], days: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if days == 0 {
        return Err(Error::Config("horizon must cover at least one day".into()));
    }
    let origins = if days == 1 {
        (0..samples.len()).map(|i| vec![i]).collect()
    } else {
        rollout_origins(samples, days)
    };
    if origins.is_empty() {
        return Err(Error::InsufficientContext(format!(
            "no origin among {} samples has {days} consecutive horizons",
            samples.len()
        )));
    }
    let mut current: Vec<WindowSample> = origins.iter().map(|o| samples[o[0]].clone()).collect();
    let mut per_day: Vec<Vec<Tensor>> = Vec::with_capacity(days);
    for day in 0..days {
        let preds = forecast_all(model, &current)?;
        if day + 1 < days {
            current = origins
                .iter()
                .zip(current.iter().zip(&preds))
                .map(|(o, (prev, pred))| WindowSample {
                    x: roll_history(&prev.x, pred),
                    ..samples[o[day + 1]].clone()
                })
                .collect();
        }
        per_day.push(preds);
    }
    let mut y = Vec::new();
    let mut y_hat = Vec::new();
    for (k, o) in origins.iter().enumerate() {
        for (day, &idx) in o.iter().enumerate() {
            y.extend_from_slice(samples[idx].y.data());
            y_hat.extend_from_slice(per_day[day][k].data());
        }
    }
    Ok((y, y_hat))
}
