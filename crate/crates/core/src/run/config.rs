use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{ChannelUse, CorruptionSpec, SynthConfig, WindowSpec};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Where the panel comes from and how it is cut into samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Panel file; when absent the synthetic generator is used.
    pub path: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub synth: SynthConfig,
    pub ratios: [f64; 3],
    pub t_past: usize,
    pub t_future: usize,
    pub channels: ChannelUse,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            schema: None,
            synth: SynthConfig::default(),
            ratios: [0.7, 0.2, 0.1],
            t_past: 24,
            t_future: 24,
            channels: ChannelUse::default(),
        }
    }
}

impl DataConfig {
    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec {
            t_past: self.t_past,
            t_future: self.t_future,
            stride: 1,
            channels: self.channels,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Seeds parameter initialization; training draws from `train.seed`.
    pub seed: u64,
    pub horizon_days: usize,
    pub corruption: Option<CorruptionSpec>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            seed: 0,
            horizon_days: 1,
            corruption: None,
            out: PathBuf::from("runs/latest"),
        }
    }
}

impl RunConfig {
    /// Applies one seed to initialization, training and corruption.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        if let Some(c) = self.corruption.as_mut() {
            c.seed = seed;
        }
        self
    }
}
