//! Synthetic instances and "historical" schedules for training the denoiser.
//!
//! Real refinery records are not available, so both come from seeded
//! generators. Instances use normalized volume units (`flow_max` is fixed per
//! instance); historical schedules come from a constructive heuristic that
//! places contiguous runs of at least two periods and never breaks a hard
//! constraint.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::{
    check_constraints, default_max_switches, Instance, ScheduleTensor, THETA_W,
};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("no usable instance after {0} draws; try another seed")]
    RejectedSeed(usize),
    #[error("horizon must be even and at least 2, got {0}")]
    BadHorizon(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a dataset file (bad magic)")]
    BadMagic,
    #[error("unsupported dataset version {0}")]
    BadVersion(u32),
    #[error("truncated dataset: need {needed} bytes, file has {available}")]
    Truncated { needed: usize, available: usize },
}

/// Tunable ranges of the instance generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceRanges {
    pub flow_max: f64,
    /// Half-width of component property offsets.
    pub property_spread: f64,
    /// Half-width of product property targets.
    pub target_spread: f64,
    /// Withdrawable inventory (`init - cap_min`) as a fraction of `n * flow_max`.
    pub budget_fraction: (f64, f64),
    /// Demand per product as a fraction of `n_ct * n * flow_max / n_pt`.
    pub demand_fraction: (f64, f64),
    /// Probability that a tank gets one occupied window.
    pub occupancy_probability: f64,
    pub n_props: usize,
}

impl Default for InstanceRanges {
    fn default() -> Self {
        Self {
            flow_max: 0.5,
            property_spread: 0.1,
            target_spread: 0.03,
            budget_fraction: (0.25, 0.6),
            demand_fraction: (0.15, 0.35),
            occupancy_probability: 0.3,
            n_props: 3,
        }
    }
}

/// The three benchmark scales `(n_ct, n_pt)`.
pub const SCALES: [(usize, usize); 3] = [(5, 3), (8, 5), (12, 7)];
/// The three benchmark horizons.
pub const HORIZONS: [usize; 3] = [20, 100, 300];

/// Upper end of the intensity range of historical runs.
pub const HISTORICAL_MAX_INTENSITY: f64 = 0.8;

fn occupancy_mask(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<bool> {
    let mut mask = vec![false; n];
    if rng.gen_bool(p) {
        let len = rng.gen_range(1..=(n / 10).max(1));
        let start = rng.gen_range(0..=n - len);
        mask[start..start + len].iter_mut().for_each(|m| *m = true);
    }
    mask
}

fn draw_instance(rng: &mut ChaCha8Rng, n_ct: usize, n_pt: usize, n: usize, r: &InstanceRanges) -> Instance {
    let f = r.flow_max;
    let mut cap_min = Vec::with_capacity(n_ct);
    let mut cap_max = Vec::with_capacity(n_ct);
    let mut init = Vec::with_capacity(n_ct);
    for _ in 0..n_ct {
        let lo = rng.gen_range(0.5..2.0) * f * n as f64 * 0.1;
        let budget = rng.gen_range(r.budget_fraction.0..r.budget_fraction.1) * n as f64 * f;
        let headroom = rng.gen_range(0.0..0.5) * budget;
        cap_min.push(lo);
        init.push(lo + budget);
        cap_max.push(lo + budget + headroom);
    }
    let props: Vec<Vec<f64>> = (0..n_ct)
        .map(|_| (0..r.n_props).map(|_| rng.gen_range(-r.property_spread..r.property_spread)).collect())
        .collect();
    let targets: Vec<Vec<f64>> = (0..n_pt)
        .map(|_| (0..r.n_props).map(|_| rng.gen_range(-r.target_spread..r.target_spread)).collect())
        .collect();
    let prop_delta = (0..n_ct)
        .map(|i| (0..n_pt).map(|j| (0..r.n_props).map(|k| props[i][k] - targets[j][k]).collect()).collect())
        .collect();
    let per_product = n_ct as f64 * n as f64 * f / n_pt as f64;
    let demand = (0..n_pt)
        .map(|_| rng.gen_range(r.demand_fraction.0..r.demand_fraction.1) * per_product)
        .collect();
    Instance {
        n_ct,
        n_pt,
        n_periods: n,
        n_props: r.n_props,
        init_inventory: init,
        cap_min,
        cap_max,
        flow_min: THETA_W * f,
        flow_max: f,
        comp_occupied: (0..n_ct).map(|_| occupancy_mask(rng, n, r.occupancy_probability)).collect(),
        prod_occupied: (0..n_pt).map(|_| occupancy_mask(rng, n, r.occupancy_probability)).collect(),
        demand,
        prop_delta,
        n_max_switches: default_max_switches(n_ct, n),
    }
}

/// Draws an instance with the default ranges.
pub fn gen_instance(n_ct: usize, n_pt: usize, n: usize, seed: u64) -> Result<Instance, DatagenError> {
    gen_instance_with(n_ct, n_pt, n, seed, &InstanceRanges::default())
}

/// Draws an instance whose heuristic produces a nonempty feasible schedule.
pub fn gen_instance_with(
    n_ct: usize,
    n_pt: usize,
    n: usize,
    seed: u64,
    ranges: &InstanceRanges,
) -> Result<Instance, DatagenError> {
    if n < 2 || n % 2 != 0 {
        return Err(DatagenError::BadHorizon(n));
    }
    const RETRIES: usize = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RETRIES {
        let inst = draw_instance(&mut rng, n_ct, n_pt, n, ranges);
        if inst.validate().is_err() {
            continue;
        }
        let s = heuristic_schedule(&inst, &mut rng);
        let active = s.data.iter().any(|&x| x >= THETA_W);
        if active && check_constraints(&inst, &s).map(|r| r.feasible).unwrap_or(false) {
            return Ok(inst);
        }
    }
    Err(DatagenError::RejectedSeed(RETRIES))
}

/// Constructive feasible schedule: per component tank, alternating idle gaps
/// and runs of two or more periods to one free product tank, with a constant
/// intensity in `[THETA_W, HISTORICAL_MAX_INTENSITY]` per run.
pub fn heuristic_schedule<R: Rng>(inst: &Instance, rng: &mut R) -> ScheduleTensor {
    let n = inst.n_periods;
    let mut s = ScheduleTensor::zeros_like(inst);
    let per_tank_switches = inst.n_max_switches / inst.n_ct.max(1);
    let max_run = (n / 5).max(2);
    let max_gap = (n / 5).max(1);
    for i in 0..inst.n_ct {
        let mut budget = inst.init_inventory[i] - inst.cap_min[i];
        let mut switches = 0;
        let mut t = rng.gen_range(0..=max_gap);
        while t + 2 <= n {
            let len = rng.gen_range(2..=max_run).min(n - t);
            let cost = (t > 0) as usize + (t + len < n) as usize;
            if switches + cost > per_tank_switches {
                break;
            }
            let free: Vec<usize> = (0..inst.n_pt)
                .filter(|&j| (t..t + len).all(|u| !inst.prod_occupied[j][u] && !inst.comp_occupied[i][u]))
                .collect();
            if !free.is_empty() {
                let j = free[rng.gen_range(0..free.len())];
                let x = rng.gen_range(THETA_W..HISTORICAL_MAX_INTENSITY);
                let volume = inst.decode_flow(x) * len as f64;
                if volume <= budget {
                    for u in t..t + len {
                        s.set(i, j, u, x);
                    }
                    budget -= volume;
                    switches += cost;
                    t += len;
                }
            }
            t += 1 + rng.gen_range(0..=max_gap);
        }
    }
    s
}

/// Single-channel training images of shape `(n_pt, n_periods)`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub n_pt: usize,
    pub n_periods: usize,
    pub seed: u64,
    pub data: Vec<f32>,
}

impl ImageSet {
    pub fn image_len(&self) -> usize {
        self.n_pt * self.n_periods
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.image_len().max(1)
    }

    pub fn image(&self, k: usize) -> &[f32] {
        let d = self.image_len();
        &self.data[k * d..(k + 1) * d]
    }
}

/// Heuristic schedules sliced into per-component-tank images.
///
/// Schedule `k` uses its own ChaCha stream of `seed`, so samples are
/// independent of generation order.
pub fn gen_training_set(inst: &Instance, count: usize, seed: u64) -> ImageSet {
    let mut data = Vec::with_capacity(count * inst.n_ct * inst.n_pt * inst.n_periods);
    for k in 0..count {
        let s = training_schedule(inst, seed, k);
        data.extend(s.data.iter().map(|&v| v as f32));
    }
    ImageSet { n_pt: inst.n_pt, n_periods: inst.n_periods, seed, data }
}

/// Schedule number `k` of the training set drawn with `seed`.
pub fn training_schedule(inst: &Instance, seed: u64, k: usize) -> ScheduleTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    heuristic_schedule(inst, &mut rng)
}

const DATA_MAGIC: &[u8; 8] = b"BLDMDATA";
const DATA_VERSION: u32 = 1;
const DATA_HEADER: usize = 8 + 4 + 4 + 4 + 8 + 8;

/// Writes the dataset: magic `BLDMDATA`, version (u32), n_pt (u32),
/// n_periods (u32), image count (u64), seed (u64), then f32 pixels, all
/// little-endian.
pub fn write_dataset(set: &ImageSet, path: impl AsRef<Path>) -> Result<(), DatagenError> {
    let mut bytes = Vec::with_capacity(DATA_HEADER + 4 * set.data.len());
    bytes.extend_from_slice(DATA_MAGIC);
    bytes.extend_from_slice(&DATA_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(set.n_pt as u32).to_le_bytes());
    bytes.extend_from_slice(&(set.n_periods as u32).to_le_bytes());
    bytes.extend_from_slice(&(set.count() as u64).to_le_bytes());
    bytes.extend_from_slice(&set.seed.to_le_bytes());
    for v in &set.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<ImageSet, DatagenError> {
    let bytes = fs::read(path)?;
    if bytes.len() < DATA_HEADER {
        return Err(DatagenError::Truncated { needed: DATA_HEADER, available: bytes.len() });
    }
    if &bytes[..8] != DATA_MAGIC {
        return Err(DatagenError::BadMagic);
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != DATA_VERSION {
        return Err(DatagenError::BadVersion(version));
    }
    let (n_pt, n_periods) = (u32_at(12) as usize, u32_at(16) as usize);
    let (count, seed) = (u64_at(20) as usize, u64_at(28));
    let needed = DATA_HEADER + 4 * count * n_pt * n_periods;
    if bytes.len() < needed {
        return Err(DatagenError::Truncated { needed, available: bytes.len() });
    }
    let data = bytes[DATA_HEADER..needed]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ImageSet { n_pt, n_periods, seed, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::switch_count;

    #[test]
    fn decision_dimensions() {
        assert_eq!(gen_instance(12, 7, 300, 1).unwrap().decision_dimension(), 50_400);
        assert_eq!(gen_instance(5, 3, 20, 1).unwrap().decision_dimension(), 600);
    }

    #[test]
    fn instances_validate_and_are_seed_deterministic() {
        for &(c, p) in &SCALES {
            for &n in &HORIZONS {
                let a = gen_instance(c, p, n, 7).unwrap();
                a.validate().unwrap();
                assert_eq!(a, gen_instance(c, p, n, 7).unwrap());
            }
        }
        assert!(gen_instance(5, 3, 21, 0).is_err());
    }

    #[test]
    fn heuristic_runs_are_long_and_within_budget() {
        let inst = gen_instance(5, 3, 20, 3).unwrap();
        for k in 0..500 {
            let s = training_schedule(&inst, 11, k);
            let r = check_constraints(&inst, &s).unwrap();
            assert!(r.feasible, "schedule {k}: {r:?}");
            assert!(switch_count(&s) <= inst.n_max_switches);
            for i in 0..inst.n_ct {
                for j in 0..inst.n_pt {
                    let mut t = 0;
                    while t < inst.n_periods {
                        if s.is_active(i, j, t) {
                            let start = t;
                            while t < inst.n_periods && s.is_active(i, j, t) {
                                t += 1;
                            }
                            assert!(t - start >= 2);
                        } else {
                            t += 1;
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn dataset_file_round_trip_and_truncation() {
        let inst = gen_instance(5, 3, 20, 3).unwrap();
        let set = gen_training_set(&inst, 4, 9);
        assert_eq!(set.count(), 20);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.bin");
        write_dataset(&set, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), set);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_dataset(&path), Err(DatagenError::Truncated { .. })));
    }
}
