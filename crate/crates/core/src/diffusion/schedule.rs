use std::f64::consts::FRAC_PI_2;

use super::DiffusionError;

/// Largest admissible per-step corruption ratio.
pub const MAX_BETA: f64 = 0.999;

/// Precomputed corruption ratios for steps `0..=T`.
///
/// Index 0 is the clean anchor (`alpha_bar[0] = 1`, `beta[0] = 0`).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub offset: f64,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

/// Unnormalized cosine profile `f(t)`.
pub fn cosine_profile(t: f64, steps: usize, offset: f64) -> f64 {
    let c = ((t / steps as f64 + offset) / (1.0 + offset) * FRAC_PI_2).cos();
    c * c
}

/// Cosine schedule: `alpha_bar[t] = f(t) / f(0)`, betas derived by ratio and
/// clipped to [`MAX_BETA`].
pub fn build_cosine_schedule(steps: usize, offset: f64) -> Result<NoiseSchedule, DiffusionError> {
    if steps < 2 {
        return Err(DiffusionError::TooFewSteps(steps));
    }
    if !(offset > 0.0) || !offset.is_finite() {
        return Err(DiffusionError::BadOffset(offset));
    }
    let f0 = cosine_profile(0.0, steps, offset);
    let direct: Vec<f64> = (0..=steps).map(|t| cosine_profile(t as f64, steps, offset) / f0).collect();

    let mut beta = vec![0.0; steps + 1];
    let mut alpha = vec![1.0; steps + 1];
    let mut alpha_bar = vec![1.0; steps + 1];
    for t in 1..=steps {
        beta[t] = (1.0 - direct[t] / direct[t - 1]).min(MAX_BETA);
        alpha[t] = 1.0 - beta[t];
        alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
    }
    Ok(NoiseSchedule { steps, offset, beta, alpha, alpha_bar })
}

impl NoiseSchedule {
    /// Variance of the reverse posterior at step `t >= 1`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t]) * self.beta[t]
    }

    /// Continuous time in `(0, 1]` fed to the denoiser.
    pub fn time_fraction(&self, t: usize) -> f64 {
        t as f64 / self.steps as f64
    }
}
