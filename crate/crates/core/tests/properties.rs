use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use blendopt::baselines::{nsga2_optimize, Nsga2Config};
use blendopt::datagen::{gen_instance, gen_training_set, training_schedule};
use blendopt::diffusion::{build_cosine_schedule, q_sample, recover_noise};
use blendopt::metrics::{crowding_distance, dominates, hypervolume, nondominated_indices, set_coverage, ReferencePoint};
use blendopt::problem::{
    check_constraints, default_max_switches, eval_objectives, inventory_trajectory, soft_penalty, standardize,
    Instance, ScheduleTensor,
};
use blendopt::sampler::{assign_weights, GuidanceConfig};

const UNIT: ReferencePoint = ReferencePoint { r1: 1.0, r2: 1.0 };

fn points(max: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((0.0..1.2f64, 0.0..1.2f64).prop_map(|(a, b)| [a, b]), 0..max)
}

/// Random tensor with a mix of idle, in-range and out-of-range cells.
fn noisy_tensor(inst: &Instance, seed: u64) -> ScheduleTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let density: f64 = rng.gen_range(0.0..1.0);
    let mut x = ScheduleTensor::zeros_like(inst);
    for v in x.data.iter_mut() {
        if rng.gen_bool(density) {
            *v = rng.gen_range(-0.5..1.5);
        }
    }
    x
}

fn small_shape() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (1..5usize, 1..4usize, 1..8usize, any::<u64>()).prop_map(|(c, p, h, s)| (c, p, 2 * h, s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_instances_satisfy_their_invariants((c, p, n, seed) in small_shape()) {
        let inst = gen_instance(c, p, n, seed).unwrap();
        prop_assert!(inst.validate().is_ok());
        prop_assert_eq!(inst.n_max_switches, default_max_switches(c, n));
        prop_assert_eq!(&inst, &gen_instance(c, p, n, seed).unwrap());
    }

    #[test]
    fn standardize_is_idempotent_and_lands_in_the_unit_box((c, p, n, seed) in small_shape(), x_seed: u64) {
        let inst = gen_instance(c, p, n, seed).unwrap();
        let s = standardize(&inst, &noisy_tensor(&inst, x_seed)).unwrap();
        prop_assert_eq!(s.shape(), inst.shape());
        prop_assert!(s.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        prop_assert_eq!(&standardize(&inst, &s).unwrap(), &s);
    }

    #[test]
    fn zero_penalty_implies_feasible((c, p, n, seed) in small_shape(), k in 0..64usize, drop_seed: u64) {
        let inst = gen_instance(c, p, n, seed).unwrap();
        // heuristic schedules with random cells switched off or pushed around
        let mut x = training_schedule(&inst, seed, k);
        let mut rng = ChaCha8Rng::seed_from_u64(drop_seed);
        for v in x.data.iter_mut() {
            match rng.gen_range(0..10) {
                0 => *v = 0.0,
                1 => *v = rng.gen_range(0.0..1.1),
                _ => {}
            }
        }
        if soft_penalty(&inst, &x).unwrap() == 0.0 {
            prop_assert!(check_constraints(&inst, &x).unwrap().feasible);
        }
    }

    #[test]
    fn objective_values_are_consistent((c, p, n, seed) in small_shape(), x_seed: u64) {
        let inst = gen_instance(c, p, n, seed).unwrap();
        let x = noisy_tensor(&inst, x_seed);
        for s in [x.clone(), standardize(&inst, &x).unwrap()] {
            let o = eval_objectives(&inst, &s).unwrap();
            prop_assert!(o.e_blend >= 0.0 && o.e_yield >= 0.0 && o.e_const >= 0.0);
            prop_assert_eq!(o.feasible, o.e_const == 0.0);
        }
    }

    #[test]
    fn objectives_follow_a_relabeling_of_product_tanks((c, p, n, seed) in small_shape(), x_seed: u64, perm_seed: u64) {
        let inst = gen_instance(c, p, n, seed).unwrap();
        let x = noisy_tensor(&inst, x_seed);
        let mut perm: Vec<usize> = (0..p).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        for a in (1..p).rev() {
            perm.swap(a, rng.gen_range(0..=a));
        }
        // product tank j of the new labeling is tank perm[j] of the old one
        let mut relabeled = inst.clone();
        let mut y = x.clone();
        for j in 0..p {
            relabeled.demand[j] = inst.demand[perm[j]];
            relabeled.prod_occupied[j] = inst.prod_occupied[perm[j]].clone();
            for i in 0..c {
                relabeled.prop_delta[i][j] = inst.prop_delta[i][perm[j]].clone();
                for t in 0..n {
                    y.set(i, j, t, x.get(i, perm[j], t));
                }
            }
        }
        let a = eval_objectives(&inst, &x).unwrap();
        let b = eval_objectives(&relabeled, &y).unwrap();
        prop_assert!((a.e_blend - b.e_blend).abs() <= 1e-9 * (1.0 + a.e_blend));
        prop_assert!((a.e_yield - b.e_yield).abs() <= 1e-9 * (1.0 + a.e_yield));
        prop_assert_eq!(a.feasible, b.feasible);
    }

    #[test]
    fn inventory_never_increases((c, p, n, seed) in small_shape(), x_seed: u64) {
        let inst = gen_instance(c, p, n, seed).unwrap();
        let traj = inventory_trajectory(&inst, &noisy_tensor(&inst, x_seed)).unwrap();
        for row in traj {
            prop_assert!(row.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn training_images_decode_to_valid_flows((c, p, n, seed) in small_shape(), data_seed: u64) {
        let inst = gen_instance(c, p, n, seed).unwrap();
        let set = gen_training_set(&inst, 4, data_seed);
        prop_assert_eq!(&set, &gen_training_set(&inst, 4, data_seed));
        for &v in &set.data {
            let q = inst.decode_flow(v as f64);
            prop_assert!(q == 0.0 || (inst.flow_min..=inst.flow_max).contains(&q), "flow {}", q);
        }
    }

    #[test]
    fn noise_is_recovered_from_the_forward_sample(t in 1..200usize, x0 in prop::collection::vec(-1.0..1.0f64, 1..16), seed: u64) {
        let sched = build_cosine_schedule(200, 0.008).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps: Vec<f64> = x0.iter().map(|_| rng.gen_range(-3.0..3.0)).collect();
        let xt = q_sample(&sched, &x0, t, &eps);
        for (a, b) in recover_noise(&sched, &xt, &x0, t).iter().zip(&eps) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn population_weights_sum_to_one(pop in 2..300usize, lo in 0.01..0.5f64, width in 0.01..0.49f64, seed: u64) {
        let cfg = GuidanceConfig { population: pop, weight_low: lo, weight_high: lo + width, seed, ..Default::default() };
        let w = assign_weights(&cfg);
        prop_assert_eq!(w.len(), pop);
        for p in &w {
            prop_assert!((p.w_blend + p.w_yield - 1.0).abs() < 1e-12);
            prop_assert!(p.w_blend >= lo && p.w_blend <= lo + width);
        }
    }

    #[test]
    fn adding_a_point_never_lowers_hypervolume(front in points(30), q in (0.0..1.2f64, 0.0..1.2f64)) {
        let before = hypervolume(&front, UNIT);
        let mut more = front.clone();
        more.push([q.0, q.1]);
        prop_assert!(hypervolume(&more, UNIT) >= before - 1e-15);
    }

    #[test]
    fn dominated_points_do_not_count(front in points(30)) {
        let nd: Vec<[f64; 2]> = nondominated_indices(&front).into_iter().map(|k| front[k]).collect();
        prop_assert!((hypervolume(&front, UNIT) - hypervolume(&nd, UNIT)).abs() < 1e-12);
    }

    #[test]
    fn nondominated_filter_matches_brute_force(front in points(40)) {
        let mut got = nondominated_indices(&front);
        got.sort_unstable();
        let want: Vec<usize> =
            (0..front.len()).filter(|&i| !front.iter().any(|q| dominates(q, &front[i]))).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn strict_domination_gives_full_coverage(raw in points(20).prop_filter("nonempty", |v| !v.is_empty()), gap in 0.001..0.5f64) {
        // a shifted copy of a mutually nondominated set covers none of the originals
        let a: Vec<[f64; 2]> = nondominated_indices(&raw).into_iter().map(|k| raw[k]).collect();
        let b: Vec<[f64; 2]> = a.iter().map(|p| [p[0] + gap, p[1] + gap]).collect();
        prop_assert_eq!(set_coverage(&a, &b).unwrap(), 1.0);
        prop_assert_eq!(set_coverage(&b, &a).unwrap(), 0.0);
    }

    #[test]
    fn crowding_matches_brute_force(front in points(20)) {
        // ties are ordered arbitrarily by the sort, so compare on distinct values only
        for obj in 0..2 {
            let mut v: Vec<f64> = front.iter().map(|p| p[obj]).collect();
            v.sort_by(f64::total_cmp);
            prop_assume!(v.windows(2).all(|w| w[0] < w[1]));
        }
        let idx: Vec<usize> = (0..front.len()).collect();
        let got = crowding_distance(&front, &idx);
        for k in 0..front.len() {
            let mut want = 0.0;
            for obj in 0..2 {
                let v = front[k][obj];
                let vals = || front.iter().map(|p| p[obj]);
                let (lo, hi) = (vals().fold(f64::INFINITY, f64::min), vals().fold(f64::NEG_INFINITY, f64::max));
                let below = vals().filter(|&u| u < v).fold(f64::NEG_INFINITY, f64::max);
                let above = vals().filter(|&u| u > v).fold(f64::INFINITY, f64::min);
                want += if v == lo || v == hi { f64::INFINITY } else { (above - below) / (hi - lo) };
            }
            if front.len() <= 2 {
                want = f64::INFINITY;
            }
            prop_assert!(got[k] == want || (got[k] - want).abs() < 1e-12, "{} vs {}", got[k], want);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn nsga2_is_seed_deterministic_and_feasible(seed: u64) {
        let inst = gen_instance(3, 2, 8, seed).unwrap();
        let cfg = Nsga2Config { population: 12, generations: 5, seed, ..Default::default() };
        let a = nsga2_optimize(&inst, &cfg).unwrap();
        prop_assert_eq!(&a, &nsga2_optimize(&inst, &cfg).unwrap());
        for p in &a.front {
            prop_assert!(check_constraints(&inst, &p.schedule).unwrap().feasible);
        }
    }
}
