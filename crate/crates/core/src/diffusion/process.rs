use num_traits::Float;

use super::{DiffusionError, NoiseSchedule};

/// Forward corruption `sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`.
pub fn q_sample<F: Float>(sched: &NoiseSchedule, x0: &[F], t: usize, eps: &[F]) -> Vec<F> {
    assert_eq!(x0.len(), eps.len(), "q_sample: shape mismatch");
    assert!(t <= sched.steps, "q_sample: step {t} beyond {}", sched.steps);
    let ab = sched.alpha_bar[t];
    let a = F::from(ab.sqrt()).unwrap();
    let b = F::from((1.0 - ab).sqrt()).unwrap();
    x0.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect()
}

/// Noise implied by `x_t` and the clean `x0`; inverse of [`q_sample`] in `eps`.
pub fn recover_noise(sched: &NoiseSchedule, x_t: &[f64], x0: &[f64], t: usize) -> Vec<f64> {
    let ab = sched.alpha_bar[t];
    x_t.iter()
        .zip(x0)
        .map(|(&xt, &x)| (xt - ab.sqrt() * x) / (1.0 - ab).sqrt())
        .collect()
}

fn check_step(sched: &NoiseSchedule, t: usize) -> Result<(), DiffusionError> {
    if t == 0 || t > sched.steps {
        Err(DiffusionError::StepOutOfRange { t, steps: sched.steps })
    } else {
        Ok(())
    }
}

/// Mean of the reverse posterior given the predicted noise.
pub fn posterior_mean(
    sched: &NoiseSchedule,
    x_t: &[f64],
    eps_hat: &[f64],
    t: usize,
) -> Result<Vec<f64>, DiffusionError> {
    check_step(sched, t)?;
    let coef = (1.0 - sched.alpha[t]) / (1.0 - sched.alpha_bar[t]).sqrt();
    let inv = 1.0 / sched.alpha[t].sqrt();
    Ok(x_t.iter().zip(eps_hat).map(|(&x, &e)| (x - coef * e) * inv).collect())
}

/// One ancestral step `x_{t-1} = mean + sqrt(var) z`; step 1 returns the mean.
pub fn posterior_step(
    sched: &NoiseSchedule,
    x_t: &[f64],
    eps_hat: &[f64],
    t: usize,
    z: &[f64],
) -> Result<Vec<f64>, DiffusionError> {
    let mut mean = posterior_mean(sched, x_t, eps_hat, t)?;
    if t > 1 {
        let sd = sched.posterior_variance(t).sqrt();
        for (m, &zi) in mean.iter_mut().zip(z) {
            *m += sd * zi;
        }
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::build_cosine_schedule;

    #[test]
    fn endpoints_of_forward_process() {
        let s = build_cosine_schedule(100, 0.008).unwrap();
        let x0 = [0.3, -0.7];
        let eps = [1.5, 0.2];
        assert_eq!(q_sample(&s, &x0, 0, &eps), x0.to_vec());
        let last = q_sample(&s, &x0, 100, &eps);
        for (a, b) in last.iter().zip(eps) {
            assert!((a - b).abs() < 2e-2);
        }
    }

    #[test]
    fn noise_recovery_is_exact() {
        let s = build_cosine_schedule(200, 0.008).unwrap();
        let x0 = [0.1, -0.4, 0.9];
        let eps = [0.5, -1.2, 2.0];
        for t in [1, 50, 199] {
            let xt = q_sample(&s, &x0, t, &eps);
            let back = recover_noise(&s, &xt, &x0, t);
            for (a, b) in back.iter().zip(eps) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn true_noise_gives_algebraic_posterior_mean() {
        // substituting x_t = sqrt(ab) x0 + sqrt(1-ab) eps into the mean yields
        // (sqrt(ab) x0 + (sqrt(1-ab) - (1-a)/sqrt(1-ab)) eps) / sqrt(a)
        let s = build_cosine_schedule(50, 0.008).unwrap();
        let (x0, eps, t) = (0.42, -0.8, 17);
        let xt = q_sample(&s, &[x0], t, &[eps]);
        let got = posterior_step(&s, &xt, &[eps], t, &[0.0]).unwrap()[0];
        let (a, ab) = (s.alpha[t], s.alpha_bar[t]);
        let want = (ab.sqrt() * x0 + ((1.0 - ab).sqrt() - (1.0 - a) / (1.0 - ab).sqrt()) * eps) / a.sqrt();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn zero_beta_step_is_identity() {
        let mut s = build_cosine_schedule(10, 0.008).unwrap();
        s.beta[5] = 0.0;
        s.alpha[5] = 1.0;
        let x = [0.3, -2.0];
        let out = posterior_step(&s, &x, &[0.7, 0.1], 5, &[0.0, 0.0]).unwrap();
        assert_eq!(out, x.to_vec());
    }

    #[test]
    fn step_range_is_checked() {
        let s = build_cosine_schedule(10, 0.008).unwrap();
        assert!(posterior_step(&s, &[0.0], &[0.0], 0, &[0.0]).is_err());
        assert!(posterior_step(&s, &[0.0], &[0.0], 11, &[0.0]).is_err());
        // last step adds no noise
        let a = posterior_step(&s, &[0.5], &[0.1], 1, &[3.0]).unwrap();
        let b = posterior_step(&s, &[0.5], &[0.1], 1, &[0.0]).unwrap();
        assert_eq!(a, b);
    }
}
