//! Projection of a raw tensor onto the feasible schedule set.
//!
//! Applied in a fixed order: clamp, exclusivity, product occupancy, capacity,
//! switch budget. Each step only lowers intensities, so it never re-breaks a
//! constraint restored by an earlier step.

use super::{check_constraints, ConstraintReport, Instance, Result, ScheduleTensor, THETA_W};

/// Repairs `x` into a schedule satisfying every hard constraint.
///
/// Total over finite input; non-finite entries are treated as idle (NaN) or
/// clamped (infinities).
pub fn standardize(inst: &Instance, x: &ScheduleTensor) -> Result<ScheduleTensor> {
    x.ensure_shape(inst)?;
    let mut s = x.clone();
    clamp_unit(&mut s);
    keep_single_destination(inst, &mut s);
    clear_occupied_products(inst, &mut s);
    for i in 0..inst.n_ct {
        restore_inventory(inst, &mut s, i);
    }
    trim_switches(inst, &mut s);
    Ok(s)
}

/// Light repair used by evolutionary search: clamp to `[0, 1]` and trim the
/// switch budget, leaving every other violation in place.
pub fn clamp_and_trim_switches(inst: &Instance, x: &ScheduleTensor) -> Result<ScheduleTensor> {
    x.ensure_shape(inst)?;
    let mut s = x.clone();
    clamp_unit(&mut s);
    trim_switches(inst, &mut s);
    Ok(s)
}

/// [`standardize`] plus the checker's verdict on the result.
pub fn standardize_report(inst: &Instance, x: &ScheduleTensor) -> Result<(ScheduleTensor, ConstraintReport)> {
    let s = standardize(inst, x)?;
    let report = check_constraints(inst, &s)?;
    Ok((s, report))
}

fn clamp_unit(s: &mut ScheduleTensor) {
    for v in &mut s.data {
        *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    }
}

fn keep_single_destination(inst: &Instance, s: &mut ScheduleTensor) {
    for i in 0..inst.n_ct {
        for t in 0..inst.n_periods {
            if inst.comp_occupied[i][t] {
                for j in 0..inst.n_pt {
                    s.set(i, j, t, 0.0);
                }
                continue;
            }
            let mut best = 0;
            for j in 1..inst.n_pt {
                if s.get(i, j, t) > s.get(i, best, t) {
                    best = j;
                }
            }
            for j in (0..inst.n_pt).filter(|&j| j != best) {
                s.set(i, j, t, 0.0);
            }
        }
    }
}

fn clear_occupied_products(inst: &Instance, s: &mut ScheduleTensor) {
    for j in 0..inst.n_pt {
        for t in (0..inst.n_periods).filter(|&t| inst.prod_occupied[j][t]) {
            for i in 0..inst.n_ct {
                s.set(i, j, t, 0.0);
            }
        }
    }
}

fn withdrawal(inst: &Instance, cells: &[f64], scale: f64) -> f64 {
    cells.iter().map(|&x| inst.decode_flow(scale * x)).sum()
}

/// Scales tank `i` by the largest factor keeping its final inventory above `cap_min`.
///
/// Inventory only decreases over time, so the final level is the binding one.
/// Withdrawal is nondecreasing (but discontinuous) in the factor; bisection
/// keeps the lower end feasible.
fn restore_inventory(inst: &Instance, s: &mut ScheduleTensor, i: usize) {
    let budget = inst.init_inventory[i] - inst.cap_min[i];
    let cells = s.tank_image(i).to_vec();
    if withdrawal(inst, &cells, 1.0) <= budget {
        return;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if withdrawal(inst, &cells, mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let len = inst.n_pt * inst.n_periods;
    for v in &mut s.data[i * len..(i + 1) * len] {
        *v *= lo;
    }
}

#[derive(Debug, Clone, Copy)]
struct Run {
    len: usize,
    start: usize,
    i: usize,
    j: usize,
    switches: usize,
}

/// Deletes shortest active runs (ties: earliest start) until the switch budget holds.
fn trim_switches(inst: &Instance, s: &mut ScheduleTensor) {
    let n = inst.n_periods;
    let mut runs = Vec::new();
    let mut total = 0;
    for i in 0..inst.n_ct {
        for j in 0..inst.n_pt {
            let mut t = 0;
            while t < n {
                if s.get(i, j, t) >= THETA_W {
                    let start = t;
                    while t < n && s.get(i, j, t) >= THETA_W {
                        t += 1;
                    }
                    let switches = (start > 0) as usize + (t < n) as usize;
                    total += switches;
                    if switches > 0 {
                        runs.push(Run { len: t - start, start, i, j, switches });
                    }
                } else {
                    t += 1;
                }
            }
        }
    }
    if total <= inst.n_max_switches {
        return;
    }
    runs.sort_by_key(|r| (r.len, r.start, r.i, r.j));
    for r in runs {
        if total <= inst.n_max_switches {
            break;
        }
        for t in r.start..r.start + r.len {
            s.set(r.i, r.j, t, 0.0);
        }
        total -= r.switches;
    }
}
