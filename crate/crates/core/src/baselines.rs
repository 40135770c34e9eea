//! Reference optimizers: NSGA-II over schedule tensors and the unguided
//! diffusion generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::heuristic_schedule;
use crate::diffusion::NoiseSchedule;
use crate::metrics::{crowding_distance, nondominated_sort};
use crate::nn::Unet;
use crate::problem::{clamp_and_trim_switches, eval_objectives, Instance, ObjectiveValue, ProblemError, ScheduleTensor};
use crate::sampler::{feasible_front, sample_front, FrontPoint, FrontResult, GuidanceConfig, SamplerError};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid NSGA-II configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nsga2Config {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-gene mutation probability; `None` means one over the tensor length.
    pub mutation_rate: Option<f64>,
    /// Distribution index of polynomial mutation.
    pub eta: f64,
    pub seed: u64,
}

impl Default for Nsga2Config {
    fn default() -> Self {
        Self { population: 1024, generations: 500, crossover_rate: 0.9, mutation_rate: None, eta: 20.0, seed: 0 }
    }
}

impl Nsga2Config {
    pub fn validate(&self) -> Result<(), BaselineError> {
        let bad = |m: &str| Err(BaselineError::BadConfig(m.to_string()));
        if self.population < 2 {
            return bad("population must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return bad("crossover_rate must lie in [0, 1]");
        }
        if let Some(r) = self.mutation_rate {
            if !(0.0..=1.0).contains(&r) {
                return bad("mutation_rate must lie in [0, 1]");
            }
        }
        if !(self.eta > 0.0) {
            return bad("eta must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Individual {
    x: ScheduleTensor,
    obj: ObjectiveValue,
}

impl Individual {
    fn evaluate(inst: &Instance, x: ScheduleTensor) -> Result<Self, BaselineError> {
        let x = clamp_and_trim_switches(inst, &x)?;
        let obj = eval_objectives(inst, &x)?;
        Ok(Self { x, obj })
    }

    /// Squared violation magnitude; zero exactly when feasible.
    fn violation(&self) -> f64 {
        self.obj.e_const
    }
}

/// Ranks under constraint domination: feasible members are sorted into
/// nondominated fronts; each infeasible member follows in its own front,
/// ordered by increasing violation (equal violations share a front).
fn constrained_fronts(pop: &[Individual]) -> Vec<Vec<usize>> {
    let feasible: Vec<usize> = (0..pop.len()).filter(|&k| pop[k].obj.feasible).collect();
    let points: Vec<[f64; 2]> = feasible.iter().map(|&k| pop[k].obj.point()).collect();
    let mut fronts: Vec<Vec<usize>> = nondominated_sort(&points)
        .into_iter()
        .map(|f| f.into_iter().map(|k| feasible[k]).collect())
        .collect();
    let mut infeasible: Vec<usize> = (0..pop.len()).filter(|&k| !pop[k].obj.feasible).collect();
    infeasible.sort_by(|&a, &b| pop[a].violation().total_cmp(&pop[b].violation()).then(a.cmp(&b)));
    for k in infeasible {
        match fronts.last_mut() {
            Some(last) if !pop[last[0]].obj.feasible && pop[last[0]].violation() == pop[k].violation() => last.push(k),
            _ => fronts.push(vec![k]),
        }
    }
    fronts
}

/// Rank and crowding distance of every member.
fn rank_and_crowd(pop: &[Individual]) -> (Vec<usize>, Vec<f64>) {
    let points: Vec<[f64; 2]> = pop.iter().map(|p| p.obj.point()).collect();
    let mut rank = vec![0; pop.len()];
    let mut crowd = vec![0.0; pop.len()];
    for (r, front) in constrained_fronts(pop).iter().enumerate() {
        for (&k, d) in front.iter().zip(crowding_distance(&points, front)) {
            rank[k] = r;
            crowd[k] = d;
        }
    }
    (rank, crowd)
}

fn tournament<R: Rng>(rng: &mut R, rank: &[usize], crowd: &[f64]) -> usize {
    let a = rng.gen_range(0..rank.len());
    let b = rng.gen_range(0..rank.len());
    if rank[a] != rank[b] {
        return if rank[a] < rank[b] { a } else { b };
    }
    if crowd[a] >= crowd[b] {
        a
    } else {
        b
    }
}

/// Swaps the periods `start..start + len` between two parents.
///
/// Every per-period constraint (single destination, occupancy, flow bounds)
/// is inherited from whichever parent owns the period, so it survives the
/// swap; cumulative inventory and the switch count may not.
pub fn time_slice_crossover(
    a: &ScheduleTensor,
    b: &ScheduleTensor,
    start: usize,
    len: usize,
) -> (ScheduleTensor, ScheduleTensor) {
    let (mut c, mut d) = (a.clone(), b.clone());
    let n = a.n_periods;
    for i in 0..a.n_ct {
        for j in 0..a.n_pt {
            for t in start..(start + len).min(n) {
                let k = a.index(i, j, t);
                c.data[k] = b.data[k];
                d.data[k] = a.data[k];
            }
        }
    }
    (c, d)
}

/// Polynomial mutation of one gene in `[0, 1]`.
fn polynomial_mutation<R: Rng>(rng: &mut R, x: f64, eta: f64) -> f64 {
    let u: f64 = rng.gen();
    let p = 1.0 / (eta + 1.0);
    let delta = if u < 0.5 {
        let xy = 1.0 - x;
        let v = 2.0 * u + (1.0 - 2.0 * u) * xy.powf(eta + 1.0);
        v.powf(p) - 1.0
    } else {
        let xy = x;
        let v = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * xy.powf(eta + 1.0);
        1.0 - v.powf(p)
    };
    (x + delta).clamp(0.0, 1.0)
}

/// NSGA-II with time-slice recombination, seeded from heuristic schedules.
pub fn nsga2_optimize(inst: &Instance, cfg: &Nsga2Config) -> Result<FrontResult, BaselineError> {
    cfg.validate()?;
    inst.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = inst.n_periods;
    let dim = inst.n_ct * inst.n_pt * inst.n_periods;
    let p_mut = cfg.mutation_rate.unwrap_or(1.0 / dim as f64);

    let mut pop = Vec::with_capacity(cfg.population);
    for _ in 0..cfg.population {
        pop.push(Individual::evaluate(inst, heuristic_schedule(inst, &mut rng))?);
    }

    for _ in 0..cfg.generations {
        let (rank, crowd) = rank_and_crowd(&pop);
        let mut children = Vec::with_capacity(cfg.population);
        while children.len() < cfg.population {
            let pa = &pop[tournament(&mut rng, &rank, &crowd)].x;
            let pb = &pop[tournament(&mut rng, &rank, &crowd)].x;
            let (mut c, mut d) = if rng.gen_bool(cfg.crossover_rate) {
                let len = rng.gen_range(1..=(n / 2).max(1));
                let start = rng.gen_range(0..=n - len);
                time_slice_crossover(pa, pb, start, len)
            } else {
                (pa.clone(), pb.clone())
            };
            for child in [&mut c, &mut d] {
                for v in child.data.iter_mut() {
                    if rng.gen_bool(p_mut) {
                        *v = polynomial_mutation(&mut rng, *v, cfg.eta);
                    }
                }
            }
            children.push(Individual::evaluate(inst, c)?);
            if children.len() < cfg.population {
                children.push(Individual::evaluate(inst, d)?);
            }
        }

        pop.extend(children);
        let points: Vec<[f64; 2]> = pop.iter().map(|p| p.obj.point()).collect();
        let mut keep = Vec::with_capacity(cfg.population);
        for front in constrained_fronts(&pop) {
            if keep.len() + front.len() <= cfg.population {
                keep.extend(front);
                continue;
            }
            let dist = crowding_distance(&points, &front);
            let mut order: Vec<usize> = (0..front.len()).collect();
            order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(front[a].cmp(&front[b])));
            keep.extend(order.into_iter().take(cfg.population - keep.len()).map(|k| front[k]));
            break;
        }
        keep.sort_unstable();
        let mut taken: Vec<Option<Individual>> = pop.into_iter().map(Some).collect();
        pop = keep.into_iter().map(|k| taken[k].take().unwrap()).collect();
    }

    let population: Vec<FrontPoint> =
        pop.into_iter().map(|p| FrontPoint { schedule: p.x, objectives: p.obj, weight: None }).collect();
    Ok(FrontResult { front: feasible_front(&population), population })
}

/// The diffusion sampler without objective guidance.
pub fn random_generate(
    model: &Unet<f32>,
    inst: &Instance,
    sched: &NoiseSchedule,
    cfg: &GuidanceConfig,
) -> Result<FrontResult, SamplerError> {
    sample_front(model, inst, sched, &GuidanceConfig { gradient_scale: 0.0, ..*cfg })
}
