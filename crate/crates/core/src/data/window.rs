//! Sliding-window sample extraction.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::calendar::{encode_time, DATE_CHANNELS};
use super::panel::{Panel, VariableRole};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which channel groups are routed into the exogenous streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelUse {
    pub past: bool,
    pub future: bool,
    pub date: bool,
}

impl Default for ChannelUse {
    fn default() -> Self {
        Self {
            past: true,
            future: true,
            date: true,
        }
    }
}

impl ChannelUse {
    /// Short label in the `P`/`F`/`D` notation of ablation tables.
    pub fn label(&self) -> String {
        let mut s = String::new();
        for (on, c) in [(self.past, 'P'), (self.future, 'F'), (self.date, 'D')] {
            if on {
                s.push(c);
            }
        }
        if s.is_empty() {
            s.push('-');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub t_past: usize,
    pub t_future: usize,
    pub stride: usize,
    pub channels: ChannelUse,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            t_past: 24,
            t_future: 24,
            stride: 1,
            channels: ChannelUse::default(),
        }
    }
}

/// Channel counts of a sample's exogenous streams. Within each stream the
/// non-date channels come first, then the date channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelLayout {
    pub past_exo: usize,
    pub future_exo: usize,
    pub date: usize,
}

impl ChannelLayout {
    pub fn past_width(&self) -> usize {
        self.past_exo + self.date
    }

    pub fn future_width(&self) -> usize {
        self.future_exo + self.date
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// `[N, T_p, 1]` target history.
    pub x: Tensor,
    /// `[N, T_p, C_p]`.
    pub e_past: Tensor,
    /// `[N, T_f, C_f]`.
    pub e_future: Tensor,
    /// `[N, T_f, 1]`.
    pub y: Tensor,
    /// Absolute step of the first history entry.
    pub start: usize,
    pub t_past: usize,
    pub layout: ChannelLayout,
}

impl WindowSample {
    pub fn t_future(&self) -> usize {
        self.y.shape()[1]
    }

    pub fn history(&self) -> Range<usize> {
        self.start..self.start + self.t_past
    }

    pub fn horizon(&self) -> Range<usize> {
        let h = self.start + self.t_past;
        h..h + self.t_future()
    }
}

pub fn layout_for(panel: &Panel, channels: ChannelUse) -> ChannelLayout {
    let count = |on: bool, role| if on { panel.channels_with_role(role).len() } else { 0 };
    ChannelLayout {
        past_exo: count(channels.past, VariableRole::PastExogenous),
        future_exo: count(channels.future, VariableRole::FutureExogenous),
        date: if channels.date { DATE_CHANNELS } else { 0 },
    }
}

/// Cuts `segment` into samples; `start` fields are absolute steps of the
/// panel the segment was taken from.
pub fn make_windows(segment: &Panel, spec: &WindowSpec) -> Result<Vec<WindowSample>> {
    let (t_p, t_f) = (spec.t_past, spec.t_future);
    if t_p == 0 || t_f == 0 || spec.stride == 0 {
        return Err(Error::Config("window lengths and stride must be positive".into()));
    }
    let len = segment.n_steps();
    if len < t_p + t_f {
        return Err(Error::TooShort { len, need: t_p + t_f });
    }
    let n = segment.n_nodes();
    let target = segment.target_index();
    let pick = |on: bool, role| {
        if on {
            segment.channels_with_role(role)
        } else {
            Vec::new()
        }
    };
    let past = pick(spec.channels.past, VariableRole::PastExogenous);
    let future = pick(spec.channels.future, VariableRole::FutureExogenous);
    let date = if spec.channels.date {
        Some(encode_time(segment.timestamps()))
    } else {
        None
    };
    let layout = layout_for(segment, spec.channels);

    let block = |from: usize, steps: usize, chans: &[usize]| -> Tensor {
        let width = chans.len() + layout.date;
        let mut data = Vec::with_capacity(n * steps * width);
        for node in 0..n {
            for t in from..from + steps {
                data.extend(chans.iter().map(|&c| segment.value(node, t, c)));
                if let Some(d) = &date {
                    data.extend_from_slice(&d.data()[t * DATE_CHANNELS..(t + 1) * DATE_CHANNELS]);
                }
            }
        }
        Tensor::new(vec![n, steps, width], data).expect("shape matches")
    };
    let series = |from: usize, steps: usize| -> Tensor {
        Tensor::from_fn(&[n, steps, 1], |i| segment.value(i / steps, from + i % steps, target))
    };

    Ok((0..=len - t_p - t_f)
        .step_by(spec.stride)
        .map(|o| WindowSample {
            x: series(o, t_p),
            e_past: block(o, t_p, &past),
            e_future: block(o + t_p, t_f, &future),
            y: series(o + t_p, t_f),
            start: segment.origin() + o,
            t_past: t_p,
            layout,
        })
        .collect())
}
