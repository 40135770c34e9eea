//! Smooth surrogate of the objectives and constraints, used to steer sampling.
//!
//! Flows are relaxed to `clamp(x, 0, 1) * flow_max` with no activation gate,
//! so gradients exist everywhere, including far outside the feasible region.
//! Constraints enter as squared hinges on a smoothstep gate of width
//! [`GATE_WIDTH`] starting at [`THETA_W`].

use super::{Instance, ProblemError, Result, ScheduleTensor, GATE_WIDTH, THETA_W};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Weights {
    pub w_blend: f64,
    pub w_yield: f64,
}

impl Weights {
    pub fn new(w_blend: f64, w_yield: f64) -> Result<Self> {
        let w = Self { w_blend, w_yield };
        w.validate()?;
        Ok(w)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.w_blend >= 0.0
            && self.w_yield >= 0.0
            && (self.w_blend + self.w_yield - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(ProblemError::InvalidWeights(self.w_blend, self.w_yield))
        }
    }
}

/// Values of the relaxed objectives and of the soft penalty.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelaxedTerms {
    pub e_blend: f64,
    pub e_yield: f64,
    pub penalty: f64,
}

impl RelaxedTerms {
    pub fn weighted(&self, w: Weights) -> f64 {
        w.w_blend * self.e_blend + w.w_yield * self.e_yield + self.penalty
    }
}

#[inline]
fn gate(x: f64) -> (f64, f64) {
    let u = (x - THETA_W) / GATE_WIDTH;
    if u <= 0.0 {
        (0.0, 0.0)
    } else if u >= 1.0 {
        (1.0, 0.0)
    } else {
        (u * u * (3.0 - 2.0 * u), 6.0 * u * (1.0 - u) / GATE_WIDTH)
    }
}

#[inline]
fn relu(v: f64) -> f64 {
    v.max(0.0)
}

#[inline]
fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Shared evaluation; when `grad` is given it receives `d/dx` of
/// `w_blend * e_blend + w_yield * e_yield + penalty`.
fn evaluate(inst: &Instance, x: &ScheduleTensor, w: Weights, mut grad: Option<&mut [f64]>) -> RelaxedTerms {
    let (n_ct, n_pt, n) = inst.shape();
    let fmax = inst.flow_max;
    let len = x.data.len();

    // relaxed flows and gates
    let mut q = vec![0.0; len];
    let mut dq = vec![0.0; len];
    let mut a = vec![0.0; len];
    let mut da = vec![0.0; len];
    for (k, &v) in x.data.iter().enumerate() {
        if v > 0.0 && v < 1.0 {
            q[k] = v * fmax;
            dq[k] = fmax;
        } else if v >= 1.0 {
            q[k] = fmax;
        }
        let (g, dg) = gate(v);
        a[k] = g;
        da[k] = dg;
    }

    // gradients w.r.t. relaxed flow and gate, accumulated separately
    let want_grad = grad.is_some();
    let mut g_q = if want_grad { vec![0.0; len] } else { Vec::new() };
    let mut g_a = if want_grad { vec![0.0; len] } else { Vec::new() };

    let mut terms = RelaxedTerms::default();

    // blending deviation per (t, j, k)
    for j in 0..n_pt {
        for t in 0..n {
            for k in 0..inst.n_props {
                let s: f64 = (0..n_ct).map(|i| q[x.index(i, j, t)] * inst.prop_delta[i][j][k]).sum();
                terms.e_blend += s * s;
                if want_grad && w.w_blend != 0.0 {
                    for i in 0..n_ct {
                        g_q[x.index(i, j, t)] += w.w_blend * 2.0 * s * inst.prop_delta[i][j][k];
                    }
                }
            }
        }
    }

    // yield deviation per product tank
    for j in 0..n_pt {
        let total: f64 = (0..n_ct)
            .flat_map(|i| (0..n).map(move |t| (i, t)))
            .map(|(i, t)| q[x.index(i, j, t)])
            .sum();
        let dev = total - inst.demand[j];
        terms.e_yield += dev * dev;
        if want_grad && w.w_yield != 0.0 {
            for i in 0..n_ct {
                for t in 0..n {
                    g_q[x.index(i, j, t)] += w.w_yield * 2.0 * dev;
                }
            }
        }
    }

    let mut penalty = 0.0;

    // one destination per component tank and period, none while busy
    for i in 0..n_ct {
        for t in 0..n {
            let busy = if inst.comp_occupied[i][t] { 1.0 } else { 0.0 };
            let e = busy + (0..n_pt).map(|j| a[x.index(i, j, t)]).sum::<f64>() - 1.0;
            let h = relu(e);
            penalty += h * h;
            if want_grad && h > 0.0 {
                for j in 0..n_pt {
                    g_a[x.index(i, j, t)] += 2.0 * h;
                }
            }
        }
    }

    // occupied product tanks receive nothing
    for j in 0..n_pt {
        for t in 0..n {
            if inst.prod_occupied[j][t] {
                let s: f64 = (0..n_ct).map(|i| a[x.index(i, j, t)]).sum();
                penalty += s * s;
                if want_grad && s != 0.0 {
                    for i in 0..n_ct {
                        g_a[x.index(i, j, t)] += 2.0 * s;
                    }
                }
            }
        }
    }

    // capacity on the relaxed inventory
    let mut dv = vec![0.0; n];
    for i in 0..n_ct {
        let mut level = inst.init_inventory[i];
        for t in 0..n {
            level -= (0..n_pt).map(|j| q[x.index(i, j, t)]).sum::<f64>();
            let under = relu(inst.cap_min[i] - level);
            let over = relu(level - inst.cap_max[i]);
            penalty += under * under + over * over;
            dv[t] = -2.0 * under + 2.0 * over;
        }
        if want_grad {
            // d level_t / d q_tau = -1 for tau <= t
            let mut suffix = 0.0;
            for t in (0..n).rev() {
                suffix += dv[t];
                if suffix != 0.0 {
                    for j in 0..n_pt {
                        g_q[x.index(i, j, t)] -= suffix;
                    }
                }
            }
        }
    }

    // switch budget on the gated assignments
    let mut toggles = 0.0;
    for i in 0..n_ct {
        for j in 0..n_pt {
            for t in 0..n.saturating_sub(1) {
                toggles += (a[x.index(i, j, t + 1)] - a[x.index(i, j, t)]).abs();
            }
        }
    }
    let excess = relu(toggles - inst.n_max_switches as f64);
    penalty += excess * excess;
    if want_grad && excess > 0.0 {
        for i in 0..n_ct {
            for j in 0..n_pt {
                for t in 0..n {
                    let k = x.index(i, j, t);
                    let mut d = 0.0;
                    if t > 0 {
                        d += signum0(a[k] - a[k - 1]);
                    }
                    if t + 1 < n {
                        d -= signum0(a[k + 1] - a[k]);
                    }
                    g_a[k] += 2.0 * excess * d;
                }
            }
        }
    }

    // box [0, 1]
    for &v in &x.data {
        let lo = relu(-v);
        let hi = relu(v - 1.0);
        penalty += lo * lo + hi * hi;
    }

    terms.penalty = penalty;

    if let Some(out) = grad.as_deref_mut() {
        for k in 0..len {
            let v = x.data[k];
            let box_grad = -2.0 * relu(-v) + 2.0 * relu(v - 1.0);
            out[k] = g_q[k] * dq[k] + g_a[k] * da[k] + box_grad;
        }
    }
    terms
}

fn ensure_finite(x: &ScheduleTensor) -> Result<()> {
    match x.data.iter().position(|v| !v.is_finite()) {
        Some(k) => Err(ProblemError::NonFinite(k)),
        None => Ok(()),
    }
}

/// Relaxed objectives and soft penalty, without gradient.
pub fn relaxed_terms(inst: &Instance, x: &ScheduleTensor) -> Result<RelaxedTerms> {
    x.ensure_shape(inst)?;
    ensure_finite(x)?;
    Ok(evaluate(inst, x, Weights { w_blend: 0.0, w_yield: 0.0 }, None))
}

/// Weighted relaxed objective `w . (E_blend, E_yield) + E_const` and its gradient.
pub fn relaxed_objective_and_gradient(
    inst: &Instance,
    x: &ScheduleTensor,
    w: Weights,
) -> Result<(f64, ScheduleTensor)> {
    let (terms, grad) = relaxed_terms_and_gradient(inst, x, w)?;
    Ok((terms.weighted(w), grad))
}

/// Unweighted relaxed terms together with the gradient of their weighted sum.
pub fn relaxed_terms_and_gradient(
    inst: &Instance,
    x: &ScheduleTensor,
    w: Weights,
) -> Result<(RelaxedTerms, ScheduleTensor)> {
    w.validate()?;
    relaxed_terms_and_scaled_gradient(inst, x, w.w_blend, w.w_yield)
}

/// Relaxed terms and the gradient of `c_blend * E_blend + c_yield * E_yield + E_const`
/// for arbitrary nonnegative coefficients.
pub fn relaxed_terms_and_scaled_gradient(
    inst: &Instance,
    x: &ScheduleTensor,
    c_blend: f64,
    c_yield: f64,
) -> Result<(RelaxedTerms, ScheduleTensor)> {
    x.ensure_shape(inst)?;
    ensure_finite(x)?;
    if !(c_blend >= 0.0 && c_yield >= 0.0 && c_blend.is_finite() && c_yield.is_finite()) {
        return Err(ProblemError::InvalidWeights(c_blend, c_yield));
    }
    let mut grad = ScheduleTensor::zeros_like(inst);
    let terms = evaluate(inst, x, Weights { w_blend: c_blend, w_yield: c_yield }, Some(&mut grad.data));
    Ok((terms, grad))
}

/// Squared-hinge constraint penalty; zero when the gated schedule is feasible.
pub fn soft_penalty(inst: &Instance, x: &ScheduleTensor) -> Result<f64> {
    x.ensure_shape(inst)?;
    Ok(evaluate(inst, x, Weights { w_blend: 0.0, w_yield: 0.0 }, None).penalty)
}
