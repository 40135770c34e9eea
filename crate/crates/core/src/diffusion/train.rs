use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{q_sample, DiffusionError, NoiseSchedule};
use crate::datagen::ImageSet;
use crate::nn::{Adam, AdamConfig, Unet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Steps of linear learning-rate ramp from `learning_rate / warmup_steps`.
    pub warmup_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4096,
            learning_rate: 1e-3,
            epochs: 1000,
            adam: AdamConfig::default(),
            warmup_steps: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn steps_per_epoch(&self, dataset_len: usize) -> usize {
        dataset_len.div_ceil(self.batch_size)
    }

    pub fn validate(&self, dataset_len: usize) -> Result<(), DiffusionError> {
        let bad = |m: &str| Err(DiffusionError::BadConfig(m.to_string()));
        if self.batch_size == 0 || self.epochs == 0 || self.warmup_steps == 0 {
            return bad("batch_size, epochs and warmup_steps must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        let total = self.epochs * self.steps_per_epoch(dataset_len);
        if self.warmup_steps >= total {
            return bad(&format!("warmup_steps ({}) must be below the {total} optimizer steps", self.warmup_steps));
        }
        Ok(())
    }
}

/// Learning rate of 1-based optimizer step `step` under linear warm-up.
pub fn lr_at_step(cfg: &TrainConfig, step: u64) -> f64 {
    cfg.learning_rate * (step as f64 / cfg.warmup_steps as f64).min(1.0)
}

/// Maps a `[0, 1]` schedule intensity into the network's `[-1, 1]` range.
#[inline]
pub fn to_model_range(x: f64) -> f64 {
    2.0 * x - 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean noise-prediction loss of every epoch.
    pub epoch_losses: Vec<f64>,
    pub optimizer_steps: u64,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss\n");
        for (e, l) in self.epoch_losses.iter().enumerate() {
            s.push_str(&format!("{},{}\n", e + 1, l));
        }
        s
    }
}

/// Fits `model` to predict the injected noise on corrupted training images.
///
/// Each step draws a shuffled minibatch, a uniform step `t` and unit Gaussian
/// noise per image, corrupts the images with [`q_sample`] and takes one Adam
/// step on the mean squared noise-prediction error. All randomness comes from
/// `cfg.seed`.
pub fn train(
    model: &mut Unet<f32>,
    data: &ImageSet,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainReport, DiffusionError> {
    train_with_progress(model, data, sched, cfg, |_, _| {})
}

/// [`train`] with a callback receiving `(epoch, mean_loss)` after every epoch.
pub fn train_with_progress(
    model: &mut Unet<f32>,
    data: &ImageSet,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainReport, DiffusionError> {
    if data.count() == 0 {
        return Err(DiffusionError::EmptyDataset);
    }
    if data.n_pt != model.config.n_pt {
        return Err(DiffusionError::BadImage {
            index: 0,
            expected: model.config.n_pt * data.n_periods,
            got: data.n_pt * data.n_periods,
        });
    }
    cfg.validate(data.count())?;

    let dim = data.image_len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.adam, &model.store);
    let mut order: Vec<usize> = (0..data.count()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut xt = Vec::with_capacity(b * dim);
            let mut noise = Vec::with_capacity(b * dim);
            let mut times = Vec::with_capacity(b);
            for &idx in chunk {
                let t = rng.gen_range(1..=sched.steps);
                let x0: Vec<f32> = data.image(idx).iter().map(|&v| to_model_range(v as f64) as f32).collect();
                let eps: Vec<f32> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect();
                xt.extend(q_sample(sched, &x0, t, &eps));
                noise.extend(eps);
                times.push(sched.time_fraction(t));
            }
            let (pred, trace) = model.forward_train(&xt, &times, data.n_periods)?;
            let n = pred.len() as f64;
            let mut sq = 0.0f64;
            let dout: Vec<f32> = pred
                .iter()
                .zip(&noise)
                .map(|(&p, &e)| {
                    let d = (p - e) as f64;
                    sq += d * d;
                    (2.0 * d / n) as f32
                })
                .collect();
            let loss = sq / n;
            if !loss.is_finite() {
                return Err(DiffusionError::NonFiniteLoss { epoch: epoch + 1, step: opt.steps() + 1 });
            }
            model.store.zero_grad();
            model.backward(&trace, &dout);
            let lr = lr_at_step(cfg, opt.steps() + 1);
            opt.step(&mut model.store, lr);
            loss_sum += loss * b as f64;
        }
        let mean = loss_sum / data.count() as f64;
        progress(epoch + 1, mean);
        epoch_losses.push(mean);
    }
    Ok(TrainReport { epoch_losses, optimizer_steps: opt.steps() })
}
