//! Calendar features derived from wall-clock timestamps.

use std::f64::consts::PI;

use chrono::{Datelike, NaiveDateTime, Timelike};

use crate::tensor::Tensor;

/// Channels per step: sin/cos hour, sin/cos month, one-hot weekday.
pub const DATE_CHANNELS: usize = 11;

pub const DATE_CHANNEL_NAMES: [&str; DATE_CHANNELS] = [
    "hour_sin",
    "hour_cos",
    "month_sin",
    "month_cos",
    "mon",
    "tue",
    "wed",
    "thu",
    "fri",
    "sat",
    "sun",
];

pub fn encode_step(ts: &NaiveDateTime) -> [f64; DATE_CHANNELS] {
    let mut out = [0.0; DATE_CHANNELS];
    let hour = 2.0 * PI * ts.hour() as f64 / 24.0;
    let month = 2.0 * PI * ts.month0() as f64 / 12.0;
    out[0] = hour.sin();
    out[1] = hour.cos();
    out[2] = month.sin();
    out[3] = month.cos();
    out[4 + ts.weekday().num_days_from_monday() as usize] = 1.0;
    out
}

/// `[T, 11]` feature block; identical for every node.
pub fn encode_time(timestamps: &[NaiveDateTime]) -> Tensor {
    let data = timestamps.iter().flat_map(encode_step).collect();
    Tensor::new(vec![timestamps.len(), DATE_CHANNELS], data).expect("shape matches")
}
