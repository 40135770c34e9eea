use super::layers::ParamStore;
use super::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction over the trainable tensors of a store.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub config: AdamConfig,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    steps: u64,
}

impl<F: Real> Adam<F> {
    pub fn new(config: AdamConfig, store: &ParamStore<F>) -> Self {
        let zeros = || store.params.iter().map(|p| vec![F::zero(); p.value.len()]).collect();
        Self { config, m: zeros(), v: zeros(), steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update with learning rate `lr` using the accumulated gradients.
    pub fn step(&mut self, store: &mut ParamStore<F>, lr: f64) {
        self.steps += 1;
        let b1 = self.config.beta1;
        let b2 = self.config.beta2;
        let c1 = 1.0 - b1.powi(self.steps as i32);
        let c2 = 1.0 - b2.powi(self.steps as i32);
        let (b1f, b2f) = (F::lit(b1), F::lit(b2));
        let (one_b1, one_b2) = (F::lit(1.0 - b1), F::lit(1.0 - b2));
        let step = F::lit(lr / c1);
        let inv_c2 = F::lit(1.0 / c2);
        let eps = F::lit(self.config.eps);
        for (k, p) in store.params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for idx in 0..p.value.len() {
                let g = p.grad[idx];
                m[idx] = b1f * m[idx] + one_b1 * g;
                v[idx] = b2f * v[idx] + one_b2 * g * g;
                p.value[idx] -= step * m[idx] / ((v[idx] * inv_c2).sqrt() + eps);
            }
        }
    }
}
