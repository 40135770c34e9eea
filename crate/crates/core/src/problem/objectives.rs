use super::{check_constraints, Instance, Result, ScheduleTensor};

/// Objective vector of a discrete (thresholded) schedule.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObjectiveValue {
    /// Squared property deviation summed over periods, products and properties.
    pub e_blend: f64,
    /// Squared deviation of delivered volume from demand, summed over products.
    pub e_yield: f64,
    /// Constraint-violation measure of the hard checker; zero iff feasible.
    pub e_const: f64,
    pub feasible: bool,
}

impl ObjectiveValue {
    pub fn point(&self) -> [f64; 2] {
        [self.e_blend, self.e_yield]
    }
}

/// Evaluates both objectives on the decoded flows of `s`.
pub fn eval_objectives(inst: &Instance, s: &ScheduleTensor) -> Result<ObjectiveValue> {
    let report = check_constraints(inst, s)?;
    let (n_ct, n_pt, n) = inst.shape();

    let mut delivered = vec![0.0; n_pt];
    let mut e_blend = 0.0;
    let mut flows = vec![0.0; n_ct];
    for j in 0..n_pt {
        for t in 0..n {
            for (i, q) in flows.iter_mut().enumerate() {
                *q = inst.decode_flow(s.get(i, j, t));
            }
            delivered[j] += flows.iter().sum::<f64>();
            for k in 0..inst.n_props {
                let dev: f64 = (0..n_ct).map(|i| flows[i] * inst.prop_delta[i][j][k]).sum();
                e_blend += dev * dev;
            }
        }
    }
    let e_yield = delivered
        .iter()
        .zip(&inst.demand)
        .map(|(d, v)| (d - v) * (d - v))
        .sum();

    Ok(ObjectiveValue {
        e_blend,
        e_yield,
        e_const: report.squared_violation(),
        feasible: report.feasible,
    })
}
