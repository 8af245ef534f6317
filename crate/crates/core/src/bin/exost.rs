use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use exost::backbone::BackboneKind;
use exost::data::{Corruption, CorruptionSpec, SynthConfig};
use exost::fusion::FusionKind;
use exost::graph::GraphKind;
use exost::run::{self, render_table, EvalRequest, MetricsRow, RunConfig};
use exost::{Error, Result};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(
    name = "exost",
    version,
    about = "Spatio-temporal forecasting with past and future exogenous variables"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panel with known exogenous structure.
    Synth(SynthArgs),
    /// Train a model and archive it with its history and test metrics.
    Train(RunArgs),
    /// Re-evaluate an archived run.
    Eval(EvalArgs),
    /// Train the variable, selector/balancer and fusion ablation grid.
    Ablate(RunArgs),
    /// Robustness table under zero / random masking of exogenous inputs.
    CorruptEval(CorruptArgs),
    /// Print the correlation graph of the training split as CSV.
    Graph(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Panel file to write.
    #[arg(long)]
    out: PathBuf,
    /// Schema file; defaults to the panel path with a `.schema.json` extension.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    nodes: usize,
    #[arg(long, default_value_t = 512)]
    steps: usize,
    #[arg(long, default_value_t = 3)]
    lag: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 1.0)]
    past_coef: f64,
    #[arg(long, default_value_t = 1.0)]
    future_coef: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackboneArg {
    Grugcn,
    MlpMixer,
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphArg {
    Pearson,
    Adaptive,
    AdaptiveDirected,
    Identity,
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    Context,
    Shared,
    Simple,
    Learnable,
    Attention,
}

#[derive(Clone, Copy, ValueEnum)]
enum CorruptArg {
    Zero,
    Random,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration used as the base; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Panel CSV; a synthetic panel is generated when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Start from the small preset instead of the full-size model.
    #[arg(long)]
    tiny: bool,
    #[arg(long)]
    experts: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, value_enum)]
    backbone: Option<BackboneArg>,
    #[arg(long, value_enum)]
    graph: Option<GraphArg>,
    #[arg(long, value_enum)]
    fusion: Option<FusionArg>,
    #[arg(long)]
    no_selector: bool,
    #[arg(long)]
    no_balancer: bool,
    #[arg(long, value_name = "BOOL")]
    use_past: Option<bool>,
    #[arg(long, value_name = "BOOL")]
    use_future: Option<bool>,
    #[arg(long, value_name = "BOOL")]
    use_date: Option<bool>,
    #[arg(long, value_enum)]
    corrupt: Option<CorruptArg>,
    #[arg(long)]
    corrupt_ratio: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=3))]
    horizon_days: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=3))]
    horizon_days: Option<u64>,
    #[arg(long, value_enum)]
    corrupt: Option<CorruptArg>,
    #[arg(long, default_value_t = 0.0)]
    corrupt_ratio: f64,
    /// Seed of the corruption mask; defaults to the run's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CorruptArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    out: PathBuf,
    /// Train a fresh model per cell on equally corrupted data.
    #[arg(long)]
    retrain: bool,
}

fn corruption(kind: CorruptArg) -> Corruption {
    match kind {
        CorruptArg::Zero => Corruption::Zero,
        CorruptArg::Random => Corruption::RandomNormal,
    }
}

fn read_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(serde_json::from_slice(&text)?)
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => read_config(path)?,
            None => RunConfig::default(),
        };
        if self.tiny {
            c.model = exost::ModelConfig::tiny();
        }
        if let Some(seed) = self.seed {
            c = c.with_seed(seed);
            c.data.synth.seed = seed;
        }
        if self.data.is_some() {
            c.data.path = self.data.clone();
        }
        if self.schema.is_some() {
            c.data.schema = self.schema.clone();
        }
        if let Some(out) = &self.out {
            c.out = out.clone();
        }
        let m = &mut c.model;
        if let Some(k) = self.experts {
            m.experts = k;
        }
        if let Some(h) = self.hidden {
            m.hidden = h;
        }
        if let Some(b) = self.backbone {
            m.backbone = match b {
                BackboneArg::Grugcn => BackboneKind::Grugcn,
                BackboneArg::MlpMixer => BackboneKind::MlpMixer,
            };
        }
        if let Some(g) = self.graph {
            m.graph = match g {
                GraphArg::Pearson => GraphKind::Pearson,
                GraphArg::Adaptive => GraphKind::Adaptive,
                GraphArg::AdaptiveDirected => GraphKind::AdaptiveDirected,
                GraphArg::Identity => GraphKind::Identity,
            };
        }
        if let Some(f) = self.fusion {
            m.fusion = match f {
                FusionArg::Context => FusionKind::Context,
                FusionArg::Shared => FusionKind::Shared,
                FusionArg::Simple => FusionKind::Simple,
                FusionArg::Learnable => FusionKind::Learnable,
                FusionArg::Attention => FusionKind::Attention,
            };
        }
        m.no_selector |= self.no_selector;
        m.no_balancer |= self.no_balancer;
        let ch = &mut c.data.channels;
        ch.past = self.use_past.unwrap_or(ch.past);
        ch.future = self.use_future.unwrap_or(ch.future);
        ch.date = self.use_date.unwrap_or(ch.date);
        if let Some(kind) = self.corrupt {
            c.corruption = Some(CorruptionSpec {
                strategy: corruption(kind),
                ratio: self.corrupt_ratio.unwrap_or(0.0),
                seed: c.seed,
                include_date: false,
            });
        } else if self.corrupt_ratio.is_some() {
            return Err(Error::Config("--corrupt-ratio needs --corrupt".into()));
        }
        if let Some(d) = self.horizon_days {
            c.horizon_days = d as usize;
        }
        if let Some(e) = self.epochs {
            c.train.epochs = e;
        }
        if let Some(b) = self.batch {
            c.train.batch_size = b;
        }
        if let Some(p) = self.patience {
            c.train.patience = p;
        }
        Ok(c)
    }
}

fn print_rows(rows: &[MetricsRow]) {
    print!("{}", render_table(rows));
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let config = SynthConfig {
                nodes: a.nodes,
                steps: a.steps,
                lag: a.lag,
                noise: a.noise,
                seed: a.seed,
                past_coef: a.past_coef,
                future_coef: a.future_coef,
                ..SynthConfig::default()
            };
            let schema = a.schema.unwrap_or_else(|| a.out.with_extension("schema.json"));
            let meta = run::cmd_synth(&config, &a.out, &schema)?;
            println!("wrote {} {} {}", a.out.display(), schema.display(), meta.display());
        }
        Command::Train(a) => {
            let config = a.resolve()?;
            let outcome = run::cmd_train(&config)?;
            let r = &outcome.report;
            println!(
                "trained {} epochs, best epoch {} (val MAE {:.4}), archived in {}",
                r.history.len(),
                r.best_epoch,
                r.best_val_mae,
                config.out.display()
            );
            print_rows(&[MetricsRow {
                label: format!("test {}d", config.horizon_days),
                metrics: outcome.test,
            }]);
        }
        Command::Eval(a) => {
            let archived = run::load_run(&a.out)?;
            let request = EvalRequest {
                horizon_days: a.horizon_days.map_or(archived.config.horizon_days, |d| d as usize),
                corruption: a.corrupt.map(|kind| CorruptionSpec {
                    strategy: corruption(kind),
                    ratio: a.corrupt_ratio,
                    seed: a.seed.unwrap_or(archived.config.seed),
                    include_date: false,
                }),
            };
            let m = run::cmd_eval(&a.out, &request)?;
            print_rows(&[MetricsRow {
                label: format!("test {}d", request.horizon_days),
                metrics: m,
            }]);
        }
        Command::Ablate(a) => print_rows(&run::cmd_ablate(&a.resolve()?)?),
        Command::CorruptEval(a) => print_rows(&run::cmd_corrupt_eval(&a.out, a.retrain)?),
        Command::Graph(a) => print!("{}", run::cmd_graph(&a.resolve()?)?.to_delimited()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
