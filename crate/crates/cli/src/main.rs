mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "blendopt", version, about = "Diffusion-guided gasoline blending scheduler")]
struct Cli {
    /// TOML or JSON file supplying defaults for any command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for all outputs of the command.
    #[arg(long, global = true, env = "BLENDOPT_OUT_DIR", default_value = "blendopt-out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic scheduling instance.
    GenInstance(GenInstanceArgs),
    /// Generate heuristic training schedules for an instance.
    GenData(GenDataArgs),
    /// Train the denoiser on a dataset.
    Train(TrainArgs),
    /// Guided diffusion sampling of a Pareto front.
    Optimize(OptimizeArgs),
    /// Run NSGA-II or the unguided generator.
    Baseline(BaselineArgs),
    /// Hypervolume and set coverage of front files.
    Evaluate(EvaluateArgs),
    /// SVG Gantt charts of schedules and scatter plots of fronts.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct GenInstanceArgs {
    #[arg(long)]
    pub n_ct: Option<usize>,
    #[arg(long)]
    pub n_pt: Option<usize>,
    /// Horizon length (even).
    #[arg(long = "n", alias = "periods")]
    pub periods: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub property_spread: Option<f64>,
    #[arg(long)]
    pub target_spread: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Number of schedules; each yields one image per component tank.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    /// Diffusion steps of the training schedule.
    #[arg(long = "T", alias = "steps")]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long = "T", alias = "steps")]
    pub steps: Option<usize>,
    #[arg(long)]
    pub scale_s: Option<f64>,
    #[arg(long)]
    pub pop: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub weight_low: Option<f64>,
    #[arg(long)]
    pub weight_high: Option<f64>,
    /// Unmodified guidance: raw weights, gradient at the noisy state, no rescaling.
    #[arg(long)]
    pub plain: bool,
    /// Also write the per-step trace and snapshot charts.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Nsga2,
    Random,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    pub method: Method,
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Denoiser checkpoint (random only).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub pop: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub crossover_rate: Option<f64>,
    #[arg(long)]
    pub mutation_rate: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Diffusion steps (random only).
    #[arg(long = "T", alias = "steps")]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Front CSV files; give two or more for set coverage.
    #[arg(long = "front")]
    pub fronts: Vec<PathBuf>,
    /// Instance whose size fixes the reference point.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Explicit reference point `r1,r2`.
    #[arg(long, value_delimiter = ',')]
    pub reference: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Schedule JSON files, one Gantt chart each.
    #[arg(long = "schedule")]
    pub schedules: Vec<PathBuf>,
    /// Front CSV files drawn together in one scatter plot.
    #[arg(long = "front")]
    pub fronts: Vec<PathBuf>,
    /// Instance whose reference point bounds the scatter axes.
    #[arg(long)]
    pub instance: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let file = match &cli.config {
        Some(p) => config::ConfigFile::load(p)?,
        None => config::ConfigFile::default(),
    };
    let ctx = commands::Context::new(cli.out_dir)?;
    match cli.command {
        Command::GenInstance(a) => commands::gen_instance(&ctx, file.gen_instance.unwrap_or_default(), a),
        Command::GenData(a) => commands::gen_data(&ctx, file.gen_data.unwrap_or_default(), a),
        Command::Train(a) => commands::train(&ctx, file.train.unwrap_or_default(), a),
        Command::Optimize(a) => commands::optimize(&ctx, file.optimize.unwrap_or_default(), a),
        Command::Baseline(a) => commands::baseline(&ctx, file.baseline.unwrap_or_default(), a),
        Command::Evaluate(a) => commands::evaluate(&ctx, file.evaluate.unwrap_or_default(), a),
        Command::Render(a) => commands::render(&ctx, file.render.unwrap_or_default(), a),
    }
}
