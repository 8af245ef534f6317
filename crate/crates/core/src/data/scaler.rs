//! Per-channel z-score scaling fitted on training rows.

use serde::{Deserialize, Serialize};

use super::panel::Panel;

pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    /// Population standard deviation, already floored.
    pub std: Vec<f64>,
    pub target: usize,
}

impl Scaler {
    pub fn fit(train: &Panel) -> Scaler {
        let (n, t, f) = train.shape();
        let count = (n * t) as f64;
        let mut mean = vec![0.0; f];
        for row in train.data().chunks(f) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; f];
        for row in train.data().chunks(f) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / count).sqrt().max(STD_FLOOR)).collect();
        Scaler {
            names: train.variables().iter().map(|v| v.name.clone()).collect(),
            mean,
            std,
            target: train.target_index(),
        }
    }

    pub fn apply(&self, panel: &Panel, direction: Direction) -> Panel {
        panel.map_values(|c, v| self.scale(c, v, direction))
    }

    pub fn scale(&self, channel: usize, value: f64, direction: Direction) -> f64 {
        match direction {
            Direction::Forward => (value - self.mean[channel]) / self.std[channel],
            Direction::Inverse => value * self.std[channel] + self.mean[channel],
        }
    }

    pub fn denormalize_target(&self, value: f64) -> f64 {
        self.scale(self.target, value, Direction::Inverse)
    }

    pub fn normalize_target(&self, value: f64) -> f64 {
        self.scale(self.target, value, Direction::Forward)
    }
}
