//! Optimization, schedules, early stopping, metrics and evaluation.

pub mod early_stop;
pub mod evaluate;
pub mod metrics;
pub mod optim;
pub mod schedule;
pub mod trainer;

pub use early_stop::{EarlyStopping, Verdict};
pub use evaluate::{evaluate, forecast_all, rollout, Forecaster};
pub use metrics::{metrics, Metrics};
pub use optim::{AdamW, AdamWConfig};
pub use schedule::cosine_lr;
pub use trainer::{train, EpochRecord, LossKind, TrainConfig, TrainReport};
