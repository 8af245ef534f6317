use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::prepare::{load_data, prepare, Prepared};
use super::report::{write_table, MetricsRow};
use crate::data::{
    corrupt_exogenous, synth_generate, zero_exogenous, ChannelUse, Corruption, CorruptionSpec, Scaler, SynthConfig,
};
use crate::error::{Error, Result};
use crate::fusion::FusionKind;
use crate::graph::{pearson_topk_adjacency, Graph};
use crate::model::ExoStModel;
use crate::train::{evaluate, train, Forecaster, Metrics, TrainReport};

pub const CONFIG_FILE: &str = "config.json";
pub const MODEL_FILE: &str = "model.bin";
pub const SCALER_FILE: &str = "scaler.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_TXT: &str = "metrics.txt";

pub const CORRUPTION_RATIOS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn json_line<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(value)? + "\n")
}

/// Writes a synthetic panel, its schema and the generator's ground truth.
pub fn cmd_synth(config: &SynthConfig, panel_path: &Path, schema_path: &Path) -> Result<PathBuf> {
    let (panel, meta) = synth_generate(config)?;
    panel.save(panel_path, schema_path)?;
    let meta_path = panel_path.with_extension("meta.json");
    write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(meta_path)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ExoStModel,
    pub report: TrainReport,
    pub test: Metrics,
}

/// Trains on already prepared data and evaluates on its test split, which
/// is corrupted first when the config asks for it.
pub fn fit(config: &RunConfig, data: &Prepared) -> Result<TrainOutcome> {
    let mut model = data.build_model(config)?;
    let report = train(&mut model, &data.train, &data.val, &data.scaler, &config.train)?;
    let corrupted;
    let samples = match &config.corruption {
        Some(spec) => {
            corrupted = corrupt_exogenous(&data.test, spec)?.0;
            &corrupted
        }
        None => &data.test,
    };
    let test = evaluate(&model as &dyn Forecaster, samples, &data.scaler, config.horizon_days)?;
    Ok(TrainOutcome { model, report, test })
}

fn metrics_row(label: impl Into<String>, m: &Metrics) -> MetricsRow {
    MetricsRow {
        label: label.into(),
        metrics: *m,
    }
}

/// Trains, then writes config, archive, scaler, history, timing and the
/// test metrics into `config.out`.
pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome> {
    let data = prepare(&config.data)?;
    let outcome = fit(config, &data)?;
    let out = &config.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(&out.join(CONFIG_FILE), serde_json::to_string_pretty(config)? + "\n")?;
    write(&out.join(MODEL_FILE), outcome.model.to_bytes()?)?;
    write(
        &out.join(SCALER_FILE),
        serde_json::to_string_pretty(&data.scaler)? + "\n",
    )?;
    let history: String = outcome.report.history.iter().map(json_line).collect::<Result<_>>()?;
    write(&out.join(HISTORY_FILE), history)?;
    let timing: String = outcome
        .report
        .epoch_seconds
        .iter()
        .enumerate()
        .map(|(epoch, s)| json_line(&serde_json::json!({ "epoch": epoch, "seconds": s })))
        .collect::<Result<_>>()?;
    write(&out.join(TIMING_FILE), timing)?;
    let label = format!("test {}d", config.horizon_days);
    write_table(
        &out.join(METRICS_JSON),
        &out.join(METRICS_TXT),
        &[metrics_row(label, &outcome.test)],
    )?;
    Ok(outcome)
}

/// A trained run reloaded from its output directory.
#[derive(Debug, Clone)]
pub struct Archived {
    pub config: RunConfig,
    pub model: ExoStModel,
    pub scaler: Scaler,
}

pub fn load_run(dir: &Path) -> Result<Archived> {
    let model_path = dir.join(MODEL_FILE);
    if !model_path.exists() {
        return Err(Error::Archive(format!(
            "missing model archive {}",
            model_path.display()
        )));
    }
    let config: RunConfig = serde_json::from_slice(&read(&dir.join(CONFIG_FILE))?)?;
    let model = ExoStModel::from_bytes(&read(&model_path)?)?;
    let scaler: Scaler = serde_json::from_slice(&read(&dir.join(SCALER_FILE))?)?;
    Ok(Archived { config, model, scaler })
}

/// Re-prepares the archived run's data, checking that it matches the model.
fn archived_data(run: &Archived) -> Result<Prepared> {
    let data = prepare(&run.config.data)?;
    if data.dims != *run.model.dims() {
        return Err(Error::Config(format!(
            "data dimensions {:?} do not match the archived model {:?}",
            data.dims,
            run.model.dims()
        )));
    }
    if data.scaler != run.scaler {
        return Err(Error::Config("data no longer matches the archived scaler".into()));
    }
    Ok(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub horizon_days: usize,
    pub corruption: Option<CorruptionSpec>,
}

/// Evaluates an archived run on its test split, optionally corrupting the
/// exogenous channels first.
pub fn cmd_eval(dir: &Path, request: &EvalRequest) -> Result<Metrics> {
    let run = load_run(dir)?;
    let data = archived_data(&run)?;
    let test = match &request.corruption {
        Some(spec) => corrupt_exogenous(&data.test, spec)?.0,
        None => data.test.clone(),
    };
    let m = evaluate(&run.model as &dyn Forecaster, &test, &run.scaler, request.horizon_days)?;
    let label = match &request.corruption {
        Some(c) => format!("test {}d {} {}", request.horizon_days, c.strategy.label(), c.ratio),
        None => format!("test {}d", request.horizon_days),
    };
    write_table(&dir.join("eval.json"), &dir.join("eval.txt"), &[metrics_row(label, &m)])?;
    Ok(m)
}

/// The ablation grid: seven variable subsets, selector and balancer
/// removal, and the five fusion strategies.
pub fn ablation_grid(base: &RunConfig) -> Vec<(String, RunConfig)> {
    let mut grid = Vec::new();
    let subsets = [
        (true, true, true),
        (true, true, false),
        (true, false, true),
        (false, true, true),
        (true, false, false),
        (false, true, false),
        (false, false, true),
    ];
    for (past, future, date) in subsets {
        let mut c = base.clone();
        c.data.channels = ChannelUse { past, future, date };
        grid.push((format!("vars {}", c.data.channels.label()), c));
    }
    let mut c = base.clone();
    c.model.no_selector = true;
    grid.push(("no-selector".into(), c));
    let mut c = base.clone();
    c.model.no_balancer = true;
    grid.push(("no-balancer".into(), c));
    for fusion in FusionKind::ALL {
        let mut c = base.clone();
        c.model.fusion = fusion;
        grid.push((format!("fusion {}", fusion.label()), c));
    }
    grid
}

/// Trains every grid cell in parallel and writes `ablation.{json,txt}`.
pub fn cmd_ablate(base: &RunConfig) -> Result<Vec<MetricsRow>> {
    let panel = load_data(&base.data)?;
    let rows = ablation_grid(base)
        .into_par_iter()
        .map(|(label, cfg)| {
            let data = super::prepare::prepare_panel(&panel, &cfg.data)?;
            Ok(metrics_row(label, &fit(&cfg, &data)?.test))
        })
        .collect::<Result<Vec<_>>>()?;
    let out = &base.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_table(&out.join("ablation.json"), &out.join("ablation.txt"), &rows)?;
    Ok(rows)
}

/// Every corruption cell of the robustness table, in report order.
pub fn corruption_grid(seed: u64) -> Vec<CorruptionSpec> {
    [Corruption::Zero, Corruption::RandomNormal]
        .into_iter()
        .flat_map(|strategy| {
            CORRUPTION_RATIOS.map(|ratio| CorruptionSpec {
                strategy,
                ratio,
                seed,
                include_date: false,
            })
        })
        .collect()
}

fn corruption_label(spec: &CorruptionSpec) -> String {
    format!("{} {:.0}%", spec.strategy.label(), spec.ratio * 100.0)
}

/// Robustness table for the archived run in `dir`: an uncorrupted row then
/// zero/random masking at each ratio on the test split. With `retrain`,
/// every cell instead trains a fresh model on equally corrupted training and
/// validation samples.
pub fn cmd_corrupt_eval(dir: &Path, retrain: bool) -> Result<Vec<MetricsRow>> {
    let run = load_run(dir)?;
    let data = archived_data(&run)?;
    let days = run.config.horizon_days;
    let clean = evaluate(&run.model as &dyn Forecaster, &data.test, &run.scaler, days)?;
    let cells = corruption_grid(run.config.seed);
    let evaluated = cells
        .par_iter()
        .map(|spec| {
            let test = corrupt_exogenous(&data.test, spec)?.0;
            if !retrain {
                return evaluate(&run.model as &dyn Forecaster, &test, &run.scaler, days);
            }
            // Distinct masks per split, all derived from the cell's seed.
            let split_spec = |offset: u64| CorruptionSpec {
                seed: spec.seed.wrapping_add(offset),
                ..*spec
            };
            let corrupted = Prepared {
                train: corrupt_exogenous(&data.train, &split_spec(1))?.0,
                val: corrupt_exogenous(&data.val, &split_spec(2))?.0,
                test,
                ..data.clone()
            };
            let mut model = corrupted.build_model(&run.config)?;
            train(
                &mut model,
                &corrupted.train,
                &corrupted.val,
                &corrupted.scaler,
                &run.config.train,
            )?;
            evaluate(&model as &dyn Forecaster, &corrupted.test, &corrupted.scaler, days)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = vec![metrics_row("no masking", &clean)];
    rows.extend(
        cells
            .iter()
            .zip(&evaluated)
            .map(|(s, m)| metrics_row(corruption_label(s), m)),
    );
    write_table(&dir.join("corruption.json"), &dir.join("corruption.txt"), &rows)?;
    Ok(rows)
}

/// Metrics of an archived run with every non-date exogenous channel zeroed.
pub fn eval_zeroed(dir: &Path) -> Result<Metrics> {
    let run = load_run(dir)?;
    let data = archived_data(&run)?;
    evaluate(
        &run.model as &dyn Forecaster,
        &zero_exogenous(&data.test),
        &run.scaler,
        run.config.horizon_days,
    )
}

/// Correlation graph over the training split, for inspection.
pub fn cmd_graph(config: &RunConfig) -> Result<Graph> {
    let data = prepare(&config.data)?;
    let n = data.train_targets.len();
    pearson_topk_adjacency(&data.train_targets, config.model.top_k.min(n.saturating_sub(1)))
}
