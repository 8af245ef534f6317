use crate::data::{chronological_split, make_windows, synth_generate, Direction, Panel, Scaler, Schema, WindowSample};
use crate::error::{Error, Result};
use crate::model::{fixed_graph, ExoStModel, ModelDims};
use crate::run::config::{DataConfig, RunConfig};
use crate::tensor::Tensor;

/// Scaled, windowed splits plus everything derived from the training rows.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scaler: Scaler,
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
    pub dims: ModelDims,
    /// Scaled training target histories, one row per node.
    pub train_targets: Vec<Vec<f64>>,
}

pub fn load_data(config: &DataConfig) -> Result<Panel> {
    match (&config.path, &config.schema) {
        (Some(path), Some(schema)) => Panel::load(path, &Schema::load(schema)?),
        (Some(_), None) => Err(Error::Config("a panel file needs its schema (--schema)".into())),
        (None, _) => Ok(synth_generate(&config.synth)?.0),
    }
}

pub fn prepare_panel(panel: &Panel, config: &DataConfig) -> Result<Prepared> {
    let spec = config.window_spec();
    let split = chronological_split(panel, config.ratios, spec.t_past + spec.t_future)?;
    let scaler = Scaler::fit(&split.train);
    let train_panel = scaler.apply(&split.train, Direction::Forward);
    let train = make_windows(&train_panel, &spec)?;
    let val = make_windows(&scaler.apply(&split.val, Direction::Forward), &spec)?;
    let test = make_windows(&scaler.apply(&split.test, Direction::Forward), &spec)?;
    let dims = ModelDims::from_sample(&train[0]);
    Ok(Prepared {
        scaler,
        train,
        val,
        test,
        dims,
        train_targets: train_panel.target_series(),
    })
}

pub fn prepare(config: &DataConfig) -> Result<Prepared> {
    prepare_panel(&load_data(config)?, config)
}

impl Prepared {
    pub fn graph(&self, run: &RunConfig) -> Result<Option<Tensor>> {
        fixed_graph(&run.model, &self.train_targets)
    }

    pub fn build_model(&self, run: &RunConfig) -> Result<ExoStModel> {
        ExoStModel::new(run.model.clone(), self.dims, self.graph(run)?, run.seed)
    }
}
