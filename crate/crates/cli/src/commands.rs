use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context as _, Result};
use blendopt::baselines::{nsga2_optimize, random_generate, Nsga2Config};
use blendopt::datagen::{gen_instance_with, gen_training_set, read_dataset, write_dataset};
use blendopt::diffusion::{build_cosine_schedule, train_with_progress, TrainConfig};
use blendopt::io::{front_from_csv, front_to_csv, schedule_from_json, schedule_to_json};
use blendopt::metrics::{hypervolume, reference_point, set_coverage, ReferencePoint};
use blendopt::nn::{load_checkpoint_expecting, save_checkpoint, CheckpointMeta, Unet, UnetConfig};
use blendopt::problem::Instance;
use blendopt::render::{front_svg, gantt_svg, Series};
use blendopt::sampler::{sample_front, trace_run, FrontResult, GuidanceConfig, GuidancePoint};
use serde::Serialize;
use serde_json::json;

use crate::config::*;
use crate::{BaselineArgs, EvaluateArgs, GenDataArgs, GenInstanceArgs, Method, OptimizeArgs, RenderArgs, TrainArgs};

/// Offset of the cosine schedule used for training and sampling.
const SCHEDULE_OFFSET: f64 = 0.008;

pub struct Context {
    out_dir: PathBuf,
    started: Instant,
}

impl Context {
    pub fn new(out_dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&out_dir).with_context(|| format!("creating output directory {}", out_dir.display()))?;
        Ok(Self { out_dir, started: Instant::now() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    /// Writes `<command>.manifest.json`: the resolved settings under the
    /// command's config-file key, plus run metadata.
    fn manifest<S: Serialize>(&self, key: &str, settings: &S, seed: Option<u64>, outputs: &[PathBuf]) -> Result<()> {
        self.named_manifest(&key.replace('_', "-"), key, settings, seed, outputs)
    }

    fn named_manifest<S: Serialize>(
        &self,
        name: &str,
        key: &str,
        settings: &S,
        seed: Option<u64>,
        outputs: &[PathBuf],
    ) -> Result<()> {
        let doc = json!({
            key: settings,
            "run": {
                "command": name,
                "seed": seed,
                "blendopt_version": env!("CARGO_PKG_VERSION"),
                "wall_time_s": self.started.elapsed().as_secs_f64(),
                "outputs": outputs,
            }
        });
        self.write(&format!("{name}.manifest.json"), serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }
}

macro_rules! overlay {
    ($s:ident, $a:ident; $($f:ident),* $(,)?) => {
        $( if let Some(v) = $a.$f { $s.$f = v; } )*
    };
}

fn require(p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    p.clone().ok_or_else(|| anyhow!("missing --{what} (flag or config key)"))
}

fn read_instance(path: &Path) -> Result<Instance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading instance {}", path.display()))?;
    let inst = Instance::from_json(&text).with_context(|| format!("parsing instance {}", path.display()))?;
    inst.validate().with_context(|| format!("instance {}", path.display()))?;
    Ok(inst)
}

fn load_model(path: &Path, inst: &Instance) -> Result<(Unet<f32>, CheckpointMeta)> {
    load_checkpoint_expecting(path, inst.n_pt).with_context(|| format!("loading model {}", path.display()))
}

pub fn gen_instance(ctx: &Context, mut s: GenInstanceSettings, a: GenInstanceArgs) -> Result<()> {
    overlay!(s, a; n_ct, n_pt, periods, seed);
    if let Some(v) = a.property_spread {
        s.ranges.property_spread = v;
    }
    if let Some(v) = a.target_spread {
        s.ranges.target_spread = v;
    }
    let inst = gen_instance_with(s.n_ct, s.n_pt, s.periods, s.seed, &s.ranges)?;
    let out = ctx.write("instance.json", inst.to_json())?;
    let r = reference_point(&inst);
    println!("instance ({}, {}, {}) written to {}", s.n_ct, s.n_pt, s.periods, out.display());
    println!("decision variables: {}", inst.decision_dimension());
    println!("reference point: ({}, {})", r.r1, r.r2);
    ctx.manifest("gen_instance", &s, Some(s.seed), &[out])
}

pub fn gen_data(ctx: &Context, mut s: GenDataSettings, a: GenDataArgs) -> Result<()> {
    overlay!(s, a; count, seed);
    if a.instance.is_some() {
        s.instance = a.instance;
    }
    let inst = read_instance(&require(&s.instance, "instance")?)?;
    let set = gen_training_set(&inst, s.count, s.seed);
    let out = ctx.path("dataset.bin");
    write_dataset(&set, &out)?;
    println!("{} images of shape ({}, {}) written to {}", set.count(), set.n_pt, set.n_periods, out.display());
    ctx.manifest("gen_data", &s, Some(s.seed), &[out])
}

pub fn train(ctx: &Context, mut s: TrainSettings, a: TrainArgs) -> Result<()> {
    overlay!(s, a; channels, epochs, batch_size, learning_rate, warmup_steps, steps, seed);
    if a.data.is_some() {
        s.data = a.data;
    }
    let data_path = require(&s.data, "data")?;
    let data = read_dataset(&data_path).with_context(|| format!("reading dataset {}", data_path.display()))?;
    let sched = build_cosine_schedule(s.steps, SCHEDULE_OFFSET)?;
    let mut model = Unet::<f32>::new(UnetConfig::new(data.n_pt, s.channels), s.seed);
    let cfg = TrainConfig {
        batch_size: s.batch_size,
        learning_rate: s.learning_rate,
        epochs: s.epochs,
        warmup_steps: s.warmup_steps,
        seed: s.seed,
        ..Default::default()
    };
    let report = train_with_progress(&mut model, &data, &sched, &cfg, |e, l| {
        eprintln!("epoch {:>4}/{}  loss {l:.6}", e + 1, cfg.epochs);
    })?;
    let ckpt = ctx.path("model.ckpt");
    save_checkpoint(&model, CheckpointMeta { diffusion_steps: s.steps, schedule_offset: SCHEDULE_OFFSET }, &ckpt)?;
    let loss = ctx.write("loss.csv", report.to_csv())?;
    println!("model written to {} after {} optimizer steps", ckpt.display(), report.optimizer_steps);
    ctx.manifest("train", &s, Some(s.seed), &[ckpt, loss])
}

/// Writes the front, the whole repaired population and one schedule file per
/// front point.
fn write_result(ctx: &Context, inst: &Instance, r: &FrontResult) -> Result<Vec<PathBuf>> {
    let mut outputs = vec![
        ctx.write("front.csv", front_to_csv(&r.front))?,
        ctx.write("population.csv", front_to_csv(&r.population))?,
    ];
    for (k, p) in r.front.iter().enumerate() {
        outputs.push(ctx.write(&format!("schedules/front_{k:04}.json"), schedule_to_json(&p.schedule))?);
    }
    let points: Vec<[f64; 2]> = r.front.iter().map(|p| p.objectives.point()).collect();
    println!(
        "front: {} points; population: {} feasible, {} infeasible; HV {:.6}",
        r.front.len(),
        r.feasible_count(),
        r.infeasible_count(),
        hypervolume(&points, reference_point(inst))
    );
    Ok(outputs)
}

pub fn optimize(ctx: &Context, mut s: OptimizeSettings, a: OptimizeArgs) -> Result<()> {
    overlay!(s, a; steps, scale_s, pop, seed, weight_low, weight_high);
    if a.plain {
        s.evaluate_at = GuidancePoint::Current;
        s.reference_scaling = false;
        s.normalize_gradient = false;
    }
    if a.instance.is_some() {
        s.instance = a.instance;
    }
    if a.model.is_some() {
        s.model = a.model;
    }
    s.trace |= a.trace;
    let inst = read_instance(&require(&s.instance, "instance")?)?;
    let (model, meta) = load_model(&require(&s.model, "model")?, &inst)?;
    let sched = build_cosine_schedule(s.steps, meta.schedule_offset)?;
    let cfg = GuidanceConfig {
        gradient_scale: s.scale_s,
        population: s.pop,
        steps: s.steps,
        weight_low: s.weight_low,
        weight_high: s.weight_high,
        seed: s.seed,
        evaluate_at: s.evaluate_at,
        reference_scaling: s.reference_scaling,
        normalize_gradient: s.normalize_gradient,
    };
    let outputs = if s.trace {
        let tr = trace_run(&model, &inst, &sched, &cfg)?;
        let mut outputs = write_result(ctx, &inst, &tr.result)?;
        outputs.push(ctx.write("trace.csv", tr.to_csv())?);
        for (t, x) in &tr.snapshots {
            outputs.push(ctx.write(&format!("snapshots/t{t:04}.svg"), gantt_svg(x))?);
        }
        outputs
    } else {
        write_result(ctx, &inst, &sample_front(&model, &inst, &sched, &cfg)?)?
    };
    ctx.manifest("optimize", &s, Some(s.seed), &outputs)
}

pub fn baseline(ctx: &Context, mut s: BaselineSettings, a: BaselineArgs) -> Result<()> {
    overlay!(s, a; pop, seed, generations, crossover_rate, eta, steps);
    if a.mutation_rate.is_some() {
        s.mutation_rate = a.mutation_rate;
    }
    if a.instance.is_some() {
        s.instance = a.instance;
    }
    if a.model.is_some() {
        s.model = a.model;
    }
    let inst = read_instance(&require(&s.instance, "instance")?)?;
    let result = match a.method {
        Method::Nsga2 => {
            let cfg = Nsga2Config {
                population: s.pop,
                generations: s.generations,
                crossover_rate: s.crossover_rate,
                mutation_rate: s.mutation_rate,
                eta: s.eta,
                seed: s.seed,
            };
            nsga2_optimize(&inst, &cfg)?
        }
        Method::Random => {
            let (model, meta) = load_model(&require(&s.model, "model")?, &inst)?;
            let sched = build_cosine_schedule(s.steps, meta.schedule_offset)?;
            let cfg = GuidanceConfig { population: s.pop, steps: s.steps, seed: s.seed, ..Default::default() };
            random_generate(&model, &inst, &sched, &cfg)?
        }
    };
    let outputs = write_result(ctx, &inst, &result)?;
    let name = match a.method {
        Method::Nsga2 => "baseline-nsga2",
        Method::Random => "baseline-random",
    };
    ctx.named_manifest(name, "baseline", &s, Some(s.seed), &outputs)
}

fn read_front(path: &Path) -> Result<Vec<[f64; 2]>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading front {}", path.display()))?;
    let rows = front_from_csv(&text).with_context(|| format!("parsing front {}", path.display()))?;
    Ok(rows.iter().filter(|r| r.feasible).map(|r| r.point()).collect())
}

pub fn evaluate(ctx: &Context, mut s: EvaluateSettings, a: EvaluateArgs) -> Result<()> {
    if !a.fronts.is_empty() {
        s.fronts = a.fronts;
    }
    if a.instance.is_some() {
        s.instance = a.instance;
    }
    if let Some(r) = a.reference {
        let [r1, r2] = r[..] else { bail!("--reference takes two values, r1,r2") };
        s.reference = Some([r1, r2]);
    }
    if s.fronts.is_empty() {
        bail!("no front files given (--front)");
    }
    let r = match (&s.reference, &s.instance) {
        (Some([r1, r2]), _) => ReferencePoint::new(*r1, *r2)?,
        (None, Some(p)) => reference_point(&read_instance(p)?),
        (None, None) => bail!("need --instance or --reference to fix the reference point"),
    };
    let fronts = s.fronts.iter().map(|p| read_front(p)).collect::<Result<Vec<_>>>()?;
    let mut hv = Vec::new();
    for (p, f) in s.fronts.iter().zip(&fronts) {
        let v = hypervolume(f, r);
        println!("HV {v:.6}  {}", p.display());
        hv.push(json!({ "front": p, "hv": v, "feasible_points": f.len() }));
    }
    let mut coverage = Vec::new();
    for (i, a_front) in fronts.iter().enumerate() {
        for (j, b_front) in fronts.iter().enumerate() {
            if i == j || b_front.is_empty() {
                continue;
            }
            let c = set_coverage(a_front, b_front)?;
            println!("C({}, {}) = {c:.6}", s.fronts[i].display(), s.fronts[j].display());
            coverage.push(json!({ "a": s.fronts[i], "b": s.fronts[j], "c": c }));
        }
    }
    let doc = json!({ "reference": [r.r1, r.r2], "hypervolume": hv, "coverage": coverage });
    let out = ctx.write("evaluation.json", serde_json::to_string_pretty(&doc)?)?;
    ctx.manifest("evaluate", &s, None, &[out])
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "front".into())
}

pub fn render(ctx: &Context, mut s: RenderSettings, a: RenderArgs) -> Result<()> {
    if !a.schedules.is_empty() {
        s.schedules = a.schedules;
    }
    if !a.fronts.is_empty() {
        s.fronts = a.fronts;
    }
    if a.instance.is_some() {
        s.instance = a.instance;
    }
    if s.schedules.is_empty() && s.fronts.is_empty() {
        bail!("nothing to render: give --schedule and/or --front");
    }
    let mut outputs = Vec::new();
    for p in &s.schedules {
        let text = fs::read_to_string(p).with_context(|| format!("reading schedule {}", p.display()))?;
        let x = schedule_from_json(&text).with_context(|| format!("parsing schedule {}", p.display()))?;
        outputs.push(ctx.write(&format!("{}.svg", stem(p)), gantt_svg(&x))?);
    }
    if !s.fronts.is_empty() {
        let names: Vec<String> = s.fronts.iter().map(|p| stem(p)).collect();
        let points = s.fronts.iter().map(|p| read_front(p)).collect::<Result<Vec<_>>>()?;
        let series: Vec<Series> = names.iter().zip(&points).map(|(n, p)| Series { name: n, points: p }).collect();
        let r = s.instance.as_deref().map(read_instance).transpose()?.map(|i| reference_point(&i));
        outputs.push(ctx.write("front.svg", front_svg(&series, r))?);
    }
    for o in &outputs {
        println!("wrote {}", o.display());
    }
    ctx.manifest("render", &s, None, &outputs)
}
