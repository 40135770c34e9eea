//! Population-level guided reverse diffusion.
//!
//! Every population member is a stack of `n_ct` component-tank images. At each
//! reverse step the denoiser proposes a posterior mean per image, and the
//! member's relaxed objective gradient, taken on the whole stack in `[0, 1]`
//! schedule space, shifts that mean downhill before the Gaussian noise is
//! added:
//!
//! ```text
//! y_{t-1} = mu(y_t) - s * g + sigma_t * z
//! g       = d/dy [ c_blend * E_blend + c_yield * E_yield + E_const ]
//! ```
//!
//! All terms are the relaxed ones. With the default [`GuidanceConfig`]:
//!
//! * the gradient is taken at the denoised estimate of the clean schedule,
//!   with cells below the activation threshold zeroed ([`GuidancePoint`]);
//! * `c = (w_blend / r1, w_yield / r2)`, the member's weights divided by the
//!   reference point, so both objectives are measured in the units of the
//!   hypervolume box;
//! * `g` is divided by its largest absolute entry, so no cell moves by more
//!   than `s` in one step.
//!
//! Turning all three off gives the plain form, `c = w` and `g` taken at `y_t`.
//! After the last guided step each member is standardized and evaluated
//! exactly; the feasible nondominated members form the front.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{posterior_mean, DiffusionError, NoiseSchedule};
use crate::metrics::{nondominated_indices, reference_point};
use crate::nn::{NetError, Unet};
use crate::problem::{
    eval_objectives, relaxed_terms, relaxed_terms_and_scaled_gradient, standardize, Instance, ObjectiveValue,
    ProblemError, RelaxedTerms, ScheduleTensor, Weights, THETA_W,
};

/// Images per denoiser call; keeps the convolution buffers cache-resident.
const INFERENCE_CHUNK: usize = 64;

/// Bound on the denoised estimate in model units before it is mapped to
/// schedule space; early estimates can be far outside `[-1, 1]`.
const DENOISED_BOUND: f64 = 1.5;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid guidance configuration: {0}")]
    BadConfig(String),
    #[error("model expects {model} product tanks, instance has {instance}")]
    ShapeMismatch { model: usize, instance: usize },
    #[error("schedule has {schedule} steps, configuration asks for {config}")]
    StepMismatch { schedule: usize, config: usize },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Where the guidance gradient is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidancePoint {
    /// The noisy state `y_t` itself.
    Current,
    /// The denoised estimate `(y_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)`,
    /// clipped, with sub-threshold cells set to zero as repair would.
    DenoisedActive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub gradient_scale: f64,
    pub population: usize,
    pub steps: usize,
    pub weight_low: f64,
    pub weight_high: f64,
    pub seed: u64,
    pub evaluate_at: GuidancePoint,
    /// Divide the objective weights by the reference point.
    pub reference_scaling: bool,
    /// Rescale each member's gradient to unit max-norm.
    pub normalize_gradient: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            gradient_scale: 0.05,
            population: 1024,
            steps: 1000,
            weight_low: 0.3,
            weight_high: 0.7,
            seed: 0,
            evaluate_at: GuidancePoint::DenoisedActive,
            reference_scaling: true,
            normalize_gradient: true,
        }
    }
}

impl GuidanceConfig {
    /// The unmodified update: raw weights, gradient at `y_t`, no rescaling.
    pub fn plain(self) -> Self {
        Self { evaluate_at: GuidancePoint::Current, reference_scaling: false, normalize_gradient: false, ..self }
    }

    /// Checks the ranges. A zero scale is allowed and gives the unguided sampler.
    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: &str| Err(SamplerError::BadConfig(m.to_string()));
        if !(self.gradient_scale >= 0.0) || !self.gradient_scale.is_finite() {
            return bad("gradient_scale must be finite and nonnegative");
        }
        if self.population < 2 {
            return bad("population must be at least 2");
        }
        if self.steps < 2 {
            return bad("steps must be at least 2");
        }
        if !(0.0 < self.weight_low && self.weight_low < self.weight_high && self.weight_high < 1.0) {
            return bad("weights need 0 < weight_low < weight_high < 1");
        }
        Ok(())
    }
}

/// One evaluated, repaired solution.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontPoint {
    pub schedule: ScheduleTensor,
    pub objectives: ObjectiveValue,
    pub weight: Option<Weights>,
}

/// Result of one sampling run.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontResult {
    /// Feasible, mutually nondominated solutions.
    pub front: Vec<FrontPoint>,
    /// Every repaired population member, in population order.
    pub population: Vec<FrontPoint>,
}

impl FrontResult {
    pub fn feasible_count(&self) -> usize {
        self.population.iter().filter(|p| p.objectives.feasible).count()
    }

    pub fn infeasible_count(&self) -> usize {
        self.population.len() - self.feasible_count()
    }
}

/// Per-member weights: the two endpoint pairs first, then uniform draws of
/// `w_blend` in `[weight_low, weight_high]`.
pub fn assign_weights(cfg: &GuidanceConfig) -> Vec<Weights> {
    let mut rng = weight_rng(cfg.seed);
    let mut out = Vec::with_capacity(cfg.population);
    out.push(Weights { w_blend: cfg.weight_low, w_yield: 1.0 - cfg.weight_low });
    out.push(Weights { w_blend: cfg.weight_high, w_yield: 1.0 - cfg.weight_high });
    while out.len() < cfg.population {
        let w1 = rng.gen_range(cfg.weight_low..=cfg.weight_high);
        out.push(Weights { w_blend: w1, w_yield: 1.0 - w1 });
    }
    out.truncate(cfg.population);
    out
}

fn weight_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

/// Noise stream of population member `m`.
fn member_rng(seed: u64, m: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(m as u64 + 1);
    rng
}

/// Population means of the relaxed quantities of the states `X_t` at one
/// reverse step, taken before the step's update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub mean_e_blend: f64,
    pub mean_e_yield: f64,
    /// Mean of each member's own `w . (E_blend, E_yield)`.
    pub mean_objective: f64,
    pub mean_penalty: f64,
}

impl TraceRecord {
    fn from_terms(t: usize, terms: &[RelaxedTerms], weights: &[Weights]) -> Self {
        let n = terms.len() as f64;
        let mut r = TraceRecord { t, mean_e_blend: 0.0, mean_e_yield: 0.0, mean_objective: 0.0, mean_penalty: 0.0 };
        for (tm, w) in terms.iter().zip(weights) {
            r.mean_e_blend += tm.e_blend / n;
            r.mean_e_yield += tm.e_yield / n;
            r.mean_objective += (w.w_blend * tm.e_blend + w.w_yield * tm.e_yield) / n;
            r.mean_penalty += tm.penalty / n;
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceResult {
    /// One record per guided step, `t = T` down to `t = 2`.
    pub records: Vec<TraceRecord>,
    /// The state handed to standardization (`t = 1`).
    pub final_record: TraceRecord,
    /// Member 0 in schedule space at `t` in `{T, 3T/4, T/2, T/4, 1}`.
    pub snapshots: Vec<(usize, ScheduleTensor)>,
    pub result: FrontResult,
}

impl TraceResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,mean_e_blend,mean_e_yield,mean_objective,mean_penalty\n");
        for r in self.records.iter().chain(std::iter::once(&self.final_record)) {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.t, r.mean_e_blend, r.mean_e_yield, r.mean_objective, r.mean_penalty
            ));
        }
        s
    }
}

/// Steps at which [`trace_run`] keeps a snapshot.
pub fn snapshot_steps(steps: usize) -> Vec<usize> {
    let mut v = vec![steps, 3 * steps / 4, steps / 2, steps / 4, 1];
    v.retain(|&t| t >= 1);
    v.dedup();
    v
}

fn to_schedule(inst: &Instance, y: &[f64]) -> ScheduleTensor {
    ScheduleTensor {
        n_ct: inst.n_ct,
        n_pt: inst.n_pt,
        n_periods: inst.n_periods,
        data: y.iter().map(|&v| 0.5 * (v + 1.0)).collect(),
    }
}

fn check_inputs(
    model: &Unet<f32>,
    inst: &Instance,
    sched: &NoiseSchedule,
    cfg: &GuidanceConfig,
) -> Result<(), SamplerError> {
    cfg.validate()?;
    inst.validate()?;
    if model.config.n_pt != inst.n_pt {
        return Err(SamplerError::ShapeMismatch { model: model.config.n_pt, instance: inst.n_pt });
    }
    if sched.steps != cfg.steps {
        return Err(SamplerError::StepMismatch { schedule: sched.steps, config: cfg.steps });
    }
    if inst.n_periods % 2 != 0 {
        return Err(NetError::OddWidth(inst.n_periods).into());
    }
    Ok(())
}

/// Point in `[0, 1]` schedule space at which member `m`'s guidance gradient
/// is taken.
fn guidance_point(
    inst: &Instance,
    sched: &NoiseSchedule,
    at: GuidancePoint,
    y: &[f64],
    eps: &[f64],
    t: usize,
) -> ScheduleTensor {
    match at {
        GuidancePoint::Current => to_schedule(inst, y),
        GuidancePoint::DenoisedActive => {
            let ab = sched.alpha_bar[t];
            let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
            let x0: Vec<f64> = y
                .iter()
                .zip(eps)
                .map(|(&v, &e)| ((v - b * e) / a).clamp(-DENOISED_BOUND, DENOISED_BOUND))
                .collect();
            let mut x = to_schedule(inst, &x0);
            for v in x.data.iter_mut() {
                if *v < THETA_W {
                    *v = 0.0;
                }
            }
            x
        }
    }
}

/// Runs the reverse chain from `t = T` to `t = 1` and returns the raw final
/// states in schedule space. `observe(t, terms, first)` receives the relaxed
/// terms of every member's `X_t` and member 0's `X_t` at each guided step.
fn reverse_chain(
    model: &Unet<f32>,
    inst: &Instance,
    sched: &NoiseSchedule,
    cfg: &GuidanceConfig,
    weights: &[Weights],
    mut observe: Option<&mut dyn FnMut(usize, &[RelaxedTerms], &[f64])>,
) -> Result<Vec<ScheduleTensor>, SamplerError> {
    let pop = cfg.population;
    let dim = inst.n_ct * inst.n_pt * inst.n_periods;
    let mut rngs: Vec<ChaCha8Rng> = (0..pop).map(|m| member_rng(cfg.seed, m)).collect();
    let mut y: Vec<f64> = Vec::with_capacity(pop * dim);
    for rng in rngs.iter_mut() {
        y.extend((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
    }
    let r = reference_point(inst);
    let coeffs: Vec<(f64, f64)> = weights
        .iter()
        .map(|w| match cfg.reference_scaling {
            true => (w.w_blend / r.r1, w.w_yield / r.r2),
            false => (w.w_blend, w.w_yield),
        })
        .collect();

    let img = inst.n_pt * inst.n_periods;
    let n_images = pop * inst.n_ct;
    let mut eps = vec![0.0f64; pop * dim];
    let mut terms = vec![RelaxedTerms::default(); pop];
    for t in (2..=cfg.steps).rev() {
        let tau = sched.time_fraction(t);
        for start in (0..n_images).step_by(INFERENCE_CHUNK) {
            let end = (start + INFERENCE_CHUNK).min(n_images);
            let xs: Vec<f32> = y[start * img..end * img].iter().map(|&v| v as f32).collect();
            let out = model.predict(&xs, &vec![tau; end - start], inst.n_periods)?;
            for (e, o) in eps[start * img..end * img].iter_mut().zip(out) {
                *e = o as f64;
            }
        }
        let sd = sched.posterior_variance(t).sqrt();
        let first = if observe.is_some() { y[..dim].to_vec() } else { Vec::new() };
        for m in 0..pop {
            let ym = &y[m * dim..(m + 1) * dim];
            let em = &eps[m * dim..(m + 1) * dim];
            if observe.is_some() {
                terms[m] = relaxed_terms(inst, &to_schedule(inst, ym))?;
            }
            let mut next = posterior_mean(sched, ym, em, t)?;
            if cfg.gradient_scale > 0.0 {
                let at = guidance_point(inst, sched, cfg.evaluate_at, ym, em, t);
                let (c_blend, c_yield) = coeffs[m];
                let (_, grad) = relaxed_terms_and_scaled_gradient(inst, &at, c_blend, c_yield)?;
                // chain rule through x = (y + 1) / 2
                let mut step = cfg.gradient_scale * 0.5;
                if cfg.normalize_gradient {
                    let peak = grad.data.iter().fold(0.0f64, |a, g| a.max(g.abs()));
                    step = if peak > 0.0 { cfg.gradient_scale / peak } else { 0.0 };
                }
                for (v, g) in next.iter_mut().zip(&grad.data) {
                    *v -= step * g;
                }
            }
            for v in next.iter_mut() {
                *v += sd * rngs[m].sample::<f64, _>(StandardNormal);
            }
            y[m * dim..(m + 1) * dim].copy_from_slice(&next);
        }
        if let Some(f) = observe.as_deref_mut() {
            f(t, &terms, &first);
        }
    }
    Ok(y.chunks(dim).map(|c| to_schedule(inst, c)).collect())
}

fn finish(inst: &Instance, raw: &[ScheduleTensor], weights: &[Weights]) -> Result<FrontResult, SamplerError> {
    let mut population = Vec::with_capacity(raw.len());
    for (x, &w) in raw.iter().zip(weights) {
        let schedule = standardize(inst, x)?;
        let objectives = eval_objectives(inst, &schedule)?;
        population.push(FrontPoint { schedule, objectives, weight: Some(w) });
    }
    let front = feasible_front(&population);
    Ok(FrontResult { front, population })
}

/// Feasible, mutually nondominated members of `points`, in input order.
pub fn feasible_front(points: &[FrontPoint]) -> Vec<FrontPoint> {
    let feasible: Vec<&FrontPoint> = points.iter().filter(|p| p.objectives.feasible).collect();
    let objs: Vec<[f64; 2]> = feasible.iter().map(|p| p.objectives.point()).collect();
    nondominated_indices(&objs).into_iter().map(|k| feasible[k].clone()).collect()
}

/// Raw final states of the guided chain, before repair, in schedule space.
pub fn sample_population(
    model: &Unet<f32>,
    inst: &Instance,
    sched: &NoiseSchedule,
    cfg: &GuidanceConfig,
) -> Result<Vec<ScheduleTensor>, SamplerError> {
    check_inputs(model, inst, sched, cfg)?;
    reverse_chain(model, inst, sched, cfg, &assign_weights(cfg), None)
}

/// Guided sampling followed by repair, exact evaluation and front extraction.
pub fn sample_front(
    model: &Unet<f32>,
    inst: &Instance,
    sched: &NoiseSchedule,
    cfg: &GuidanceConfig,
) -> Result<FrontResult, SamplerError> {
    check_inputs(model, inst, sched, cfg)?;
    let weights = assign_weights(cfg);
    let raw = reverse_chain(model, inst, sched, cfg, &weights, None)?;
    finish(inst, &raw, &weights)
}

/// [`sample_front`] that also records population means of the relaxed terms
/// at every step and snapshots of member 0.
pub fn trace_run(
    model: &Unet<f32>,
    inst: &Instance,
    sched: &NoiseSchedule,
    cfg: &GuidanceConfig,
) -> Result<TraceResult, SamplerError> {
    check_inputs(model, inst, sched, cfg)?;
    let weights = assign_weights(cfg);
    let keep = snapshot_steps(cfg.steps);
    let mut records = Vec::with_capacity(cfg.steps - 1);
    let mut snapshots = Vec::new();
    let raw = {
        let mut observe = |t: usize, terms: &[RelaxedTerms], first: &[f64]| {
            records.push(TraceRecord::from_terms(t, terms, &weights));
            if keep.contains(&t) {
                snapshots.push((t, to_schedule(inst, first)));
            }
        };
        reverse_chain(model, inst, sched, cfg, &weights, Some(&mut observe))?
    };
    let mut final_terms = Vec::with_capacity(raw.len());
    for x in &raw {
        final_terms.push(relaxed_terms(inst, x)?);
    }
    let final_record = TraceRecord::from_terms(1, &final_terms, &weights);
    snapshots.push((1, raw[0].clone()));
    let result = finish(inst, &raw, &weights)?;
    Ok(TraceResult { records, final_record, snapshots, result })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::build_cosine_schedule;
    use crate::metrics::dominates;
    use crate::nn::UnetConfig;
    use crate::problem::test_support::small_instance;

    fn cfg(pop: usize, steps: usize, s: f64) -> GuidanceConfig {
        GuidanceConfig { gradient_scale: s, population: pop, steps, seed: 5, ..Default::default() }
    }

    #[test]
    fn two_members_get_the_endpoints() {
        let w = assign_weights(&cfg(2, 10, 0.05));
        assert_eq!(w, vec![Weights { w_blend: 0.3, w_yield: 0.7 }, Weights { w_blend: 0.7, w_yield: 1.0 - 0.7 }]);
    }

    #[test]
    fn weights_sum_to_one_and_are_reproducible() {
        let c = cfg(300, 10, 0.05);
        let w = assign_weights(&c);
        assert_eq!(w.len(), 300);
        assert!(w.iter().all(|p| (p.w_blend + p.w_yield - 1.0).abs() < 1e-12));
        assert!(w.iter().all(|p| (0.3..=0.7).contains(&p.w_blend)));
        assert_eq!(w, assign_weights(&c));
    }

    #[test]
    fn config_validation() {
        assert!(cfg(1, 10, 0.05).validate().is_err());
        assert!(cfg(4, 10, -1.0).validate().is_err());
        assert!(GuidanceConfig { weight_low: 0.7, weight_high: 0.3, ..cfg(4, 10, 0.05) }.validate().is_err());
        assert!(cfg(4, 10, 0.0).validate().is_ok());
    }

    #[test]
    fn rejects_model_instance_mismatch() {
        let inst = small_instance(2, 3, 8);
        let model = Unet::<f32>::new(UnetConfig::new(4, 2), 0);
        let sched = build_cosine_schedule(10, 0.008).unwrap();
        let err = sample_front(&model, &inst, &sched, &cfg(4, 10, 0.05)).unwrap_err();
        assert!(matches!(err, SamplerError::ShapeMismatch { .. }));
    }

    #[test]
    fn front_is_feasible_nondominated_and_deterministic() {
        let inst = small_instance(2, 3, 8);
        let model = Unet::<f32>::new(UnetConfig::new(3, 2), 0);
        let sched = build_cosine_schedule(10, 0.008).unwrap();
        let c = cfg(16, 10, 0.05);
        let a = sample_front(&model, &inst, &sched, &c).unwrap();
        assert_eq!(a, sample_front(&model, &inst, &sched, &c).unwrap());
        assert_eq!(a.population.len(), 16);
        for p in &a.front {
            assert!(p.objectives.feasible);
            for q in &a.front {
                assert!(!dominates(&p.objectives.point(), &q.objectives.point()));
            }
        }
    }

    #[test]
    fn plain_switches_off_the_three_options_only() {
        let p = cfg(8, 10, 0.2).plain();
        assert_eq!(p.evaluate_at, GuidancePoint::Current);
        assert!(!p.reference_scaling && !p.normalize_gradient);
        assert_eq!((p.gradient_scale, p.population, p.steps, p.seed), (0.2, 8, 10, 5));
    }

    /// Guided minus unguided final states of a two-step chain, where both
    /// share the starting noise and the single guided step's noise.
    fn one_step_shift(c: GuidanceConfig) -> (Instance, Vec<ScheduleTensor>, Vec<ScheduleTensor>) {
        let inst = small_instance(2, 3, 8);
        let model = Unet::<f32>::new(UnetConfig::new(3, 2), 0);
        let sched = build_cosine_schedule(2, 0.008).unwrap();
        let guided = sample_population(&model, &inst, &sched, &c).unwrap();
        let free = sample_population(&model, &inst, &sched, &GuidanceConfig { gradient_scale: 0.0, ..c }).unwrap();
        (inst, guided, free)
    }

    #[test]
    fn normalized_guidance_moves_no_cell_by_more_than_the_scale() {
        let s = 0.3;
        let (_, guided, free) = one_step_shift(cfg(6, 2, s));
        let mut largest: f64 = 0.0;
        for (g, f) in guided.iter().zip(&free) {
            // schedule space is half of model space
            let shift = g.data.iter().zip(&f.data).fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
            assert!(shift <= 0.5 * s + 1e-12, "{shift}");
            largest = largest.max(shift);
        }
        assert!((largest - 0.5 * s).abs() < 1e-9, "{largest}");
    }

    #[test]
    fn plain_shift_is_the_weighted_gradient_at_the_noisy_state() {
        for scaling in [false, true] {
            let s = 0.01;
            let c = GuidanceConfig { reference_scaling: scaling, ..cfg(3, 2, s).plain() };
            let (inst, guided, free) = one_step_shift(c);
            let r = reference_point(&inst);
            let dim = inst.n_ct * inst.n_pt * inst.n_periods;
            for (m, w) in assign_weights(&c).into_iter().enumerate() {
                let mut rng = member_rng(c.seed, m);
                let y: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let (c1, c2) = if scaling { (w.w_blend / r.r1, w.w_yield / r.r2) } else { (w.w_blend, w.w_yield) };
                let (_, g) = relaxed_terms_and_scaled_gradient(&inst, &to_schedule(&inst, &y), c1, c2).unwrap();
                for k in 0..dim {
                    // model-space step s/2 * g, halved again into schedule space
                    let want = -0.25 * s * g.data[k];
                    let got = guided[m].data[k] - free[m].data[k];
                    assert!((got - want).abs() <= 1e-9 * (1.0 + want.abs()), "member {m} cell {k}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn trace_has_one_record_per_guided_step() {
        let inst = small_instance(2, 3, 8);
        let model = Unet::<f32>::new(UnetConfig::new(3, 2), 0);
        let sched = build_cosine_schedule(12, 0.008).unwrap();
        let tr = trace_run(&model, &inst, &sched, &cfg(4, 12, 0.05)).unwrap();
        assert_eq!(tr.records.len(), 11);
        assert_eq!(tr.records[0].t, 12);
        assert_eq!(tr.final_record.t, 1);
        let ts: Vec<usize> = tr.snapshots.iter().map(|s| s.0).collect();
        assert_eq!(ts, vec![12, 9, 6, 3, 1]);
        assert_eq!(tr.to_csv().lines().count(), 13);
        assert_eq!(tr.result, sample_front(&model, &inst, &sched, &cfg(4, 12, 0.05)).unwrap());
    }
}
