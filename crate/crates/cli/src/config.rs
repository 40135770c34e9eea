//! Config-file schema.
//!
//! A config file is TOML (or JSON, chosen by extension) with one optional
//! table per command. Keys are the long flag names with dashes replaced by
//! underscores. Every key is optional; flags given on the command line win.
//!
//! ```toml
//! [gen_instance]
//! n_ct = 5
//! n_pt = 3
//! periods = 20
//! seed = 0
//!
//! [train]
//! data = "out/dataset.bin"
//! channels = 8
//! epochs = 100
//!
//! [optimize]
//! instance = "out/instance.json"
//! model = "out/model.ckpt"
//! steps = 200
//! scale_s = 0.05
//! evaluate_at = "denoised_active"   # or "current"
//! reference_scaling = true
//! normalize_gradient = true
//! ```
//!
//! Run manifests use the same layout, so a manifest can be passed back as a
//! config file to repeat the run.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use blendopt::datagen::InstanceRanges;
use blendopt::sampler::{GuidanceConfig, GuidancePoint};
use serde::{Deserialize, Serialize};

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigFile {
    pub gen_instance: Option<GenInstanceSettings>,
    pub gen_data: Option<GenDataSettings>,
    pub train: Option<TrainSettings>,
    pub optimize: Option<OptimizeSettings>,
    pub baseline: Option<BaselineSettings>,
    pub evaluate: Option<EvaluateSettings>,
    pub render: Option<RenderSettings>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())),
            Some("toml") | None => toml::from_str(&text).with_context(|| format!("parsing {}", path.display())),
            Some(other) => bail!("config file must be .toml or .json, got .{other}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenInstanceSettings {
    pub n_ct: usize,
    pub n_pt: usize,
    pub periods: usize,
    pub seed: u64,
    pub ranges: InstanceRanges,
}

impl Default for GenInstanceSettings {
    fn default() -> Self {
        Self { n_ct: 5, n_pt: 3, periods: 20, seed: 0, ranges: InstanceRanges::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenDataSettings {
    pub instance: Option<PathBuf>,
    pub count: usize,
    pub seed: u64,
}

impl Default for GenDataSettings {
    fn default() -> Self {
        Self { instance: None, count: 2000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub data: Option<PathBuf>,
    pub channels: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            data: None,
            channels: 8,
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-3,
            warmup_steps: 20,
            steps: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeSettings {
    pub instance: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub steps: usize,
    pub scale_s: f64,
    pub pop: usize,
    pub seed: u64,
    pub weight_low: f64,
    pub weight_high: f64,
    pub evaluate_at: GuidancePoint,
    pub reference_scaling: bool,
    pub normalize_gradient: bool,
    pub trace: bool,
}

impl Default for OptimizeSettings {
    fn default() -> Self {
        let g = GuidanceConfig::default();
        Self {
            instance: None,
            model: None,
            steps: g.steps,
            scale_s: g.gradient_scale,
            pop: g.population,
            seed: g.seed,
            weight_low: g.weight_low,
            weight_high: g.weight_high,
            evaluate_at: g.evaluate_at,
            reference_scaling: g.reference_scaling,
            normalize_gradient: g.normalize_gradient,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineSettings {
    pub instance: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub pop: usize,
    pub seed: u64,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: Option<f64>,
    pub eta: f64,
    pub steps: usize,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        let n = blendopt::baselines::Nsga2Config::default();
        Self {
            instance: None,
            model: None,
            pop: n.population,
            seed: n.seed,
            generations: n.generations,
            crossover_rate: n.crossover_rate,
            mutation_rate: n.mutation_rate,
            eta: n.eta,
            steps: GuidanceConfig::default().steps,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateSettings {
    pub fronts: Vec<PathBuf>,
    pub instance: Option<PathBuf>,
    pub reference: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    pub schedules: Vec<PathBuf>,
    pub fronts: Vec<PathBuf>,
    pub instance: Option<PathBuf>,
}
