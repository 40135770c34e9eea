use super::{Instance, Result, ScheduleTensor, BOUND_TOL};

/// Outcome of one constraint family.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Violation {
    pub satisfied: bool,
    /// Sum of absolute violation amounts (0 when satisfied).
    pub magnitude: f64,
    /// Number of offending cells, tank-periods or events.
    pub count: usize,
}

impl Violation {
    fn from_parts(magnitude: f64, count: usize) -> Self {
        Self { satisfied: count == 0, magnitude, count }
    }
}

/// Per-family verdicts of the hard constraint checker.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    /// Component tanks serving several product tanks or busy while sending,
    /// and occupied product tanks receiving.
    pub exclusivity: Violation,
    /// Component inventory leaving `[cap_min, cap_max]`.
    pub capacity: Violation,
    /// Active flows outside `[flow_min, flow_max]`.
    pub flow: Violation,
    /// Switch events beyond `n_max_switches`.
    pub switches: Violation,
    pub switch_count: usize,
    pub feasible: bool,
}

impl ConstraintReport {
    pub fn total_violation(&self) -> f64 {
        self.exclusivity.magnitude + self.capacity.magnitude + self.flow.magnitude + self.switches.magnitude
    }

    /// Sum of squared per-family magnitudes; zero iff feasible.
    pub fn squared_violation(&self) -> f64 {
        [self.exclusivity, self.capacity, self.flow, self.switches]
            .iter()
            .map(|v| v.magnitude * v.magnitude)
            .sum()
    }
}

/// Inventory of every component tank at the end of every period.
pub fn inventory_trajectory(inst: &Instance, s: &ScheduleTensor) -> Result<Vec<Vec<f64>>> {
    s.ensure_shape(inst)?;
    let mut out = Vec::with_capacity(inst.n_ct);
    for i in 0..inst.n_ct {
        let mut level = inst.init_inventory[i];
        let mut row = Vec::with_capacity(inst.n_periods);
        for t in 0..inst.n_periods {
            let withdrawn: f64 = (0..inst.n_pt).map(|j| inst.decode_flow(s.get(i, j, t))).sum();
            level -= withdrawn;
            row.push(level);
        }
        out.push(row);
    }
    Ok(out)
}

/// Number of assignment toggles between consecutive periods, summed over all pipes.
pub fn switch_count(s: &ScheduleTensor) -> usize {
    let mut count = 0;
    for i in 0..s.n_ct {
        for j in 0..s.n_pt {
            for t in 0..s.n_periods.saturating_sub(1) {
                if s.is_active(i, j, t) != s.is_active(i, j, t + 1) {
                    count += 1;
                }
            }
        }
    }
    count
}

pub fn check_constraints(inst: &Instance, s: &ScheduleTensor) -> Result<ConstraintReport> {
    s.ensure_shape(inst)?;

    let (mut ex_mag, mut ex_cnt) = (0.0, 0usize);
    for i in 0..inst.n_ct {
        for t in 0..inst.n_periods {
            let busy = inst.comp_occupied[i][t] as usize;
            let sending = (0..inst.n_pt).filter(|&j| s.is_active(i, j, t)).count();
            if busy + sending > 1 {
                ex_mag += (busy + sending - 1) as f64;
                ex_cnt += 1;
            }
        }
    }
    for j in 0..inst.n_pt {
        for t in 0..inst.n_periods {
            if inst.prod_occupied[j][t] {
                let receiving = (0..inst.n_ct).filter(|&i| s.is_active(i, j, t)).count();
                if receiving > 0 {
                    ex_mag += receiving as f64;
                    ex_cnt += 1;
                }
            }
        }
    }

    let (mut cap_mag, mut cap_cnt) = (0.0, 0usize);
    for (i, row) in inventory_trajectory(inst, s)?.iter().enumerate() {
        for &v in row {
            let under = inst.cap_min[i] - v;
            let over = v - inst.cap_max[i];
            if under > BOUND_TOL {
                cap_mag += under;
                cap_cnt += 1;
            } else if over > BOUND_TOL {
                cap_mag += over;
                cap_cnt += 1;
            }
        }
    }

    let (mut fl_mag, mut fl_cnt) = (0.0, 0usize);
    for &x in &s.data {
        if x >= super::THETA_W {
            let q = inst.decode_flow(x);
            let excess = (inst.flow_min - q).max(q - inst.flow_max);
            if excess > BOUND_TOL || !q.is_finite() {
                fl_mag += if q.is_finite() { excess } else { f64::MAX };
                fl_cnt += 1;
            }
        }
    }

    let switches = switch_count(s);
    let over = switches.saturating_sub(inst.n_max_switches);

    let exclusivity = Violation::from_parts(ex_mag, ex_cnt);
    let capacity = Violation::from_parts(cap_mag, cap_cnt);
    let flow = Violation::from_parts(fl_mag, fl_cnt);
    let switches_v = Violation::from_parts(over as f64, over);
    let feasible = exclusivity.satisfied && capacity.satisfied && flow.satisfied && switches_v.satisfied;
    Ok(ConstraintReport {
        exclusivity,
        capacity,
        flow,
        switches: switches_v,
        switch_count: switches,
        feasible,
    })
}
