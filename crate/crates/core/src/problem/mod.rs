//! Data model of the discrete-time blending scheduling problem.
//!
//! A schedule is stored as one real tensor `x[i][j][t]` over
//! (component tank, product tank, period). A cell is *active* (the binary
//! assignment `W` is 1) when `x >= THETA_W`; the flow `Q` of an active cell is
//! an affine map of the intensity onto `[flow_min, flow_max]`.

mod constraints;
mod objectives;
mod relax;
mod repair;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use constraints::{check_constraints, inventory_trajectory, switch_count, ConstraintReport, Violation};
pub use objectives::{eval_objectives, ObjectiveValue};
pub use relax::{
    relaxed_objective_and_gradient, relaxed_terms, relaxed_terms_and_gradient, relaxed_terms_and_scaled_gradient, soft_penalty, RelaxedTerms, Weights,
};
pub use repair::{clamp_and_trim_switches, standardize, standardize_report};

/// Activation threshold on the normalized intensity.
pub const THETA_W: f64 = 0.05;
/// Width of the smooth gate used by the soft penalty.
pub const GATE_WIDTH: f64 = 0.02;
/// Absolute slack used when comparing inventories and flows against their bounds.
pub const BOUND_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("non-finite entry at flat index {0}")]
    NonFinite(usize),
    #[error("invalid weight pair ({0}, {1}): weights must be nonnegative and sum to 1")]
    InvalidWeights(f64, f64),
}

pub type Result<T> = std::result::Result<T, ProblemError>;

/// Environment variables of one scheduling problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub n_ct: usize,
    pub n_pt: usize,
    pub n_periods: usize,
    pub n_props: usize,
    pub init_inventory: Vec<f64>,
    pub cap_min: Vec<f64>,
    pub cap_max: Vec<f64>,
    pub flow_min: f64,
    pub flow_max: f64,
    /// `comp_occupied[i][t]`: component tank busy with another operation.
    pub comp_occupied: Vec<Vec<bool>>,
    /// `prod_occupied[j][t]`: product tank unable to receive.
    pub prod_occupied: Vec<Vec<bool>>,
    pub demand: Vec<f64>,
    /// `prop_delta[i][j][k]`
    pub prop_delta: Vec<Vec<Vec<f64>>>,
    pub n_max_switches: usize,
}

/// Switch budget for a given scale: half of `n_ct * n_periods`, rounded.
pub fn default_max_switches(n_ct: usize, n_periods: usize) -> usize {
    (0.5 * (n_ct * n_periods) as f64).round() as usize
}

impl Instance {
    /// Checks every invariant of the instance.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ProblemError::InvalidInstance(m));
        if self.n_ct == 0 || self.n_pt == 0 || self.n_periods == 0 {
            return bad("all dimensions must be positive".into());
        }
        for (name, v) in [
            ("init_inventory", &self.init_inventory),
            ("cap_min", &self.cap_min),
            ("cap_max", &self.cap_max),
        ] {
            if v.len() != self.n_ct {
                return bad(format!("{name} has length {}, expected {}", v.len(), self.n_ct));
            }
        }
        for i in 0..self.n_ct {
            if !(self.cap_min[i] <= self.init_inventory[i] && self.init_inventory[i] <= self.cap_max[i]) {
                return bad(format!("tank {i}: initial inventory outside capacity limits"));
            }
        }
        if !(0.0 <= self.flow_min && self.flow_min < self.flow_max) || !self.flow_max.is_finite() {
            return bad("flow bounds must satisfy 0 <= flow_min < flow_max".into());
        }
        if self.comp_occupied.len() != self.n_ct
            || self.comp_occupied.iter().any(|r| r.len() != self.n_periods)
        {
            return bad("comp_occupied must be n_ct x n_periods".into());
        }
        if self.prod_occupied.len() != self.n_pt
            || self.prod_occupied.iter().any(|r| r.len() != self.n_periods)
        {
            return bad("prod_occupied must be n_pt x n_periods".into());
        }
        if self.demand.len() != self.n_pt {
            return bad("demand must have length n_pt".into());
        }
        if self.prop_delta.len() != self.n_ct
            || self.prop_delta.iter().any(|r| {
                r.len() != self.n_pt || r.iter().any(|k| k.len() != self.n_props)
            })
        {
            return bad("prop_delta must be n_ct x n_pt x n_props".into());
        }
        let expected = default_max_switches(self.n_ct, self.n_periods);
        if self.n_max_switches != expected {
            return bad(format!(
                "n_max_switches is {}, expected {expected}",
                self.n_max_switches
            ));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_ct, self.n_pt, self.n_periods)
    }

    /// Number of scalar decision variables, counting `W` and `Q` separately.
    pub fn decision_dimension(&self) -> usize {
        2 * self.n_ct * self.n_pt * self.n_periods
    }

    /// Flow of a cell with intensity `x`; zero when the cell is idle.
    #[inline]
    pub fn decode_flow(&self, x: f64) -> f64 {
        if x >= THETA_W {
            self.flow_min + (x - THETA_W) / (1.0 - THETA_W) * (self.flow_max - self.flow_min)
        } else {
            0.0
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Real tensor over (component tank, product tank, period), row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTensor {
    pub n_ct: usize,
    pub n_pt: usize,
    pub n_periods: usize,
    pub data: Vec<f64>,
}

impl ScheduleTensor {
    pub fn zeros(n_ct: usize, n_pt: usize, n_periods: usize) -> Self {
        Self { n_ct, n_pt, n_periods, data: vec![0.0; n_ct * n_pt * n_periods] }
    }

    pub fn zeros_like(inst: &Instance) -> Self {
        Self::zeros(inst.n_ct, inst.n_pt, inst.n_periods)
    }

    pub fn from_vec(shape: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let (n_ct, n_pt, n_periods) = shape;
        if data.len() != n_ct * n_pt * n_periods {
            return Err(ProblemError::ShapeMismatch {
                expected: shape,
                got: (data.len(), 1, 1),
            });
        }
        Ok(Self { n_ct, n_pt, n_periods, data })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_ct, self.n_pt, self.n_periods)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, t: usize) -> usize {
        (i * self.n_pt + j) * self.n_periods + t
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, t: usize) -> f64 {
        self.data[self.index(i, j, t)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, t: usize, v: f64) {
        let k = self.index(i, j, t);
        self.data[k] = v;
    }

    #[inline]
    pub fn is_active(&self, i: usize, j: usize, t: usize) -> bool {
        self.get(i, j, t) >= THETA_W
    }

    /// Fails unless the tensor matches the instance's extents.
    pub fn ensure_shape(&self, inst: &Instance) -> Result<()> {
        if self.shape() != inst.shape() || self.data.len() != inst.n_ct * inst.n_pt * inst.n_periods {
            return Err(ProblemError::ShapeMismatch { expected: inst.shape(), got: self.shape() });
        }
        Ok(())
    }

    /// The `(n_pt, n_periods)` image of one component tank.
    pub fn tank_image(&self, i: usize) -> &[f64] {
        let len = self.n_pt * self.n_periods;
        &self.data[i * len..(i + 1) * len]
    }
}
