//! Panel ingestion, calendar encoding, scaling, splitting, windowing,
//! corruption and synthetic generation.

pub mod calendar;
pub mod corrupt;
pub mod panel;
pub mod scaler;
pub mod split;
pub mod synth;
pub mod window;

pub use calendar::{encode_time, DATE_CHANNELS};
pub use corrupt::{corrupt_exogenous, zero_exogenous, Corruption, CorruptionReport, CorruptionSpec};
pub use panel::{Panel, Schema, Variable, VariableRole};
pub use scaler::{Direction, Scaler};
pub use split::{chronological_split, split_lengths, Split};
pub use synth::{synth_generate, SynthConfig, SynthMeta};
pub use window::{make_windows, ChannelLayout, ChannelUse, WindowSample, WindowSpec};
