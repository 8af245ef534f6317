//! Synthetic panels with a known exogenous contribution to the target.
//!
//! For node `n` and step `t` (hour of day `h`):
//!
//! ```text
//! y(t) = a·p(t − lag) + b·f(t) + c_n·sin(2πh/24) + d_n·cos(2πh/24) + noise·ε(t)
//! ```
//!
//! `p` is a per-node sum of sinusoids, so its future is linearly predictable
//! from its own history. `f` is a unit-variance AR(1) driver whose future is
//! only weakly predictable from the past; a forecaster can recover `b·f(t)`
//! only by reading the future-exogenous channel.

use chrono::{Duration, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::panel::{parse_timestamp, Panel, Variable, VariableRole};
use crate::error::{Error, Result};

pub const AR_COEF: f64 = 0.6;
pub const PAST_COMPONENTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub nodes: usize,
    pub steps: usize,
    pub lag: usize,
    pub noise: f64,
    pub seed: u64,
    /// Weight `a` of the lagged past-exogenous channel.
    pub past_coef: f64,
    /// Weight `b` of the future-exogenous driver.
    pub future_coef: f64,
    pub start: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            nodes: 4,
            steps: 512,
            lag: 3,
            noise: 0.1,
            seed: 0,
            past_coef: 1.0,
            future_coef: 1.0,
            start: "2019-01-01T00:00:00".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub period: f64,
    pub phase: f64,
}

impl Sinusoid {
    fn at(&self, t: f64) -> f64 {
        self.amplitude * (2.0 * PI * t / self.period + self.phase).sin()
    }
}

/// Ground truth of a generated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMeta {
    pub config: SynthConfig,
    pub ar_coef: f64,
    /// Per node `[c_n, d_n]`.
    pub seasonal: Vec<[f64; 2]>,
    pub past_components: Vec<Vec<Sinusoid>>,
}

impl SynthMeta {
    pub fn past_value(&self, node: usize, t: f64) -> f64 {
        self.past_components[node].iter().map(|s| s.at(t)).sum()
    }
}

pub fn synth_generate(config: &SynthConfig) -> Result<(Panel, SynthMeta)> {
    if config.nodes == 0 || config.steps == 0 {
        return Err(Error::Config("synthetic panel needs at least one node and step".into()));
    }
    if !(config.noise >= 0.0) {
        return Err(Error::Config("noise level must be nonnegative".into()));
    }
    let start: NaiveDateTime = parse_timestamp(&config.start)
        .ok_or_else(|| Error::Config(format!("bad start timestamp `{}`", config.start)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (n, t) = (config.nodes, config.steps);

    let mut seasonal = Vec::with_capacity(n);
    let mut components = Vec::with_capacity(n);
    for _ in 0..n {
        seasonal.push([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        components.push(
            (0..PAST_COMPONENTS)
                .map(|_| Sinusoid {
                    amplitude: rng.random_range(0.4..0.8),
                    period: rng.random_range(6.0..48.0),
                    phase: rng.random_range(0.0..2.0 * PI),
                })
                .collect(),
        );
    }
    let meta = SynthMeta {
        config: config.clone(),
        ar_coef: AR_COEF,
        seasonal,
        past_components: components,
    };

    let innovation = (1.0 - AR_COEF * AR_COEF).sqrt();
    let mut data = vec![0.0; n * t * 3];
    for node in 0..n {
        let [c, d] = meta.seasonal[node];
        let mut f: f64 = rng.sample(StandardNormal);
        for step in 0..t {
            if step > 0 {
                let e: f64 = rng.sample(StandardNormal);
                f = AR_COEF * f + innovation * e;
            }
            let eps: f64 = rng.sample(StandardNormal);
            let hour = 2.0 * PI * (step % 24) as f64 / 24.0;
            // Calendar hour follows the start timestamp.
            let hour = hour + 2.0 * PI * chrono::Timelike::hour(&start) as f64 / 24.0;
            let p = meta.past_value(node, step as f64);
            let p_lag = meta.past_value(node, step as f64 - config.lag as f64);
            let y = config.past_coef * p_lag
                + config.future_coef * f
                + c * hour.sin()
                + d * hour.cos()
                + config.noise * eps;
            let base = (node * t + step) * 3;
            data[base] = y;
            data[base + 1] = p;
            data[base + 2] = f;
        }
    }
    let timestamps = (0..t).map(|h| start + Duration::hours(h as i64)).collect();
    let variables = vec![
        Variable {
            name: "target".into(),
            role: VariableRole::Target,
        },
        Variable {
            name: "past_exo".into(),
            role: VariableRole::PastExogenous,
        },
        Variable {
            name: "future_exo".into(),
            role: VariableRole::FutureExogenous,
        },
    ];
    let nodes = (0..n).map(|i| format!("node{i}")).collect();
    Ok((Panel::new(nodes, timestamps, variables, data)?, meta))
}
