//! One-level U-Net noise predictor over single component-tank schedule images.
//!
//! Topology (all convolutions use a `(n_pt, kernel_width)` kernel so a single
//! unit sees every product tank):
//!
//! ```text
//! x ─ in ─(+time)─ e1 ─(+)─ e2 ─(+)─┬─ pool(1,2) ─(+time)─ b1 ─ b2 ─(+)─ up(1,2) ─┐
//!                                    └──────────────────── concat ──────────────┴─ d1 ─ d2 ─(+)─ out
//! ```
//!
//! Each block is convolution, batch normalization and ReLU; `(+)` marks an
//! additive skip around the block. The output projection starts at zero.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::layers::{
    maxpool_w2_backward, maxpool_w2_forward, relu_backward, relu_forward, Act, BatchNorm, BnCache, Conv2d,
    ConvCache, ConvTransposeW2, Linear, ParamStore,
};
use super::real::Real;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("image width {0} is odd; pad the horizon to an even number of periods")]
    OddWidth(usize),
    #[error("image height {got} does not match the network's {expected} product tanks")]
    HeightMismatch { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("input holds {got} values, expected {expected}")]
    BadLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnetConfig {
    /// Image height, also the kernel height.
    pub n_pt: usize,
    pub kernel_width: usize,
    pub base_channels: usize,
    /// Length of the sinusoidal time encoding (even).
    pub time_dim: usize,
    pub time_hidden: usize,
}

impl UnetConfig {
    pub fn new(n_pt: usize, base_channels: usize) -> Self {
        Self { n_pt, kernel_width: 5, base_channels, time_dim: 16, time_hidden: 32 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    conv: Conv2d,
    bn: BatchNorm,
}

struct BlockCache<F> {
    conv: ConvCache<F>,
    bn: BnCache<F>,
    out: Act<F>,
}

impl Block {
    fn new<F: Real>(store: &mut ParamStore<F>, rng: &mut ChaCha8Rng, name: &str, cin: usize, cout: usize, cfg: &UnetConfig) -> Self {
        let conv = Conv2d::new(store, rng, &format!("{name}.conv"), cin, cout, cfg.n_pt, cfg.kernel_width, false);
        let bn = BatchNorm::new(store, &format!("{name}.bn"), cout);
        Self { conv, bn }
    }

    fn forward<F: Real>(&self, store: &ParamStore<F>, x: &Act<F>, train: bool) -> (Act<F>, BlockCache<F>) {
        let (h, conv) = self.conv.forward(store, x);
        let (mut y, bn) = self.bn.forward(store, &h, train);
        relu_forward(&mut y);
        (y.clone(), BlockCache { conv, bn, out: y })
    }

    fn backward<F: Real>(&self, store: &mut ParamStore<F>, cache: &BlockCache<F>, dy: &Act<F>) -> Act<F> {
        let mut d = dy.clone();
        relu_backward(&cache.out, &mut d);
        let d = self.bn.backward(store, &cache.bn, &d);
        self.conv.backward(store, &cache.conv, &d)
    }
}

/// Sinusoidal encoding of continuous time `tau` in `[0, 1]`, row per sample.
pub fn time_encoding<F: Real>(times: &[f64], dim: usize) -> Vec<F> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(times.len() * dim);
    for &tau in times {
        let pos = 1000.0 * tau;
        for m in 0..half {
            let freq = (-(10000f64.ln()) * m as f64 / half as f64).exp();
            out.push(F::lit((pos * freq).sin()));
            out.push(F::lit((pos * freq).cos()));
        }
    }
    out
}

/// Convolutional noise predictor with explicit parameters and gradients.
#[derive(Debug, Clone)]
pub struct Unet<F> {
    pub config: UnetConfig,
    pub store: ParamStore<F>,
    time_hidden: Linear,
    time_in: Linear,
    time_mid: Linear,
    input: Block,
    enc1: Block,
    enc2: Block,
    mid1: Block,
    mid2: Block,
    up: ConvTransposeW2,
    dec1: Block,
    dec2: Block,
    output: Conv2d,
}

/// Everything the backward pass needs from one training-mode forward pass.
pub struct ForwardTrace<F> {
    batch: usize,
    temb: Vec<F>,
    th_pre: Vec<F>,
    th: Vec<F>,
    input: BlockCache<F>,
    enc1: BlockCache<F>,
    enc2: BlockCache<F>,
    pool_right: Vec<bool>,
    mid1: BlockCache<F>,
    mid2: BlockCache<F>,
    mid_out: Act<F>,
    dec1: BlockCache<F>,
    dec2: BlockCache<F>,
    out_conv: ConvCache<F>,
}

impl<F: Real> Unet<F> {
    pub fn new(config: UnetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let c = config.base_channels;
        let r = &mut rng;
        let time_hidden = Linear::new(&mut store, r, "time.hidden", config.time_dim, config.time_hidden);
        let time_in = Linear::new(&mut store, r, "time.proj_in", config.time_hidden, c);
        let time_mid = Linear::new(&mut store, r, "time.proj_mid", config.time_hidden, c);
        let input = Block::new(&mut store, r, "input", 1, c, &config);
        let enc1 = Block::new(&mut store, r, "enc1", c, c, &config);
        let enc2 = Block::new(&mut store, r, "enc2", c, c, &config);
        let mid1 = Block::new(&mut store, r, "mid1", c, 2 * c, &config);
        let mid2 = Block::new(&mut store, r, "mid2", 2 * c, 2 * c, &config);
        let up = ConvTransposeW2::new(&mut store, r, "up", 2 * c, c);
        let dec1 = Block::new(&mut store, r, "dec1", 2 * c, c, &config);
        let dec2 = Block::new(&mut store, r, "dec2", c, c, &config);
        let output = Conv2d::new(&mut store, r, "output", c, 1, config.n_pt, config.kernel_width, true);
        Self { config, store, time_hidden, time_in, time_mid, input, enc1, enc2, mid1, mid2, up, dec1, dec2, output }
    }

    pub fn parameter_count(&self) -> usize {
        self.store.trainable_count()
    }

    fn check_input(&self, x: &[F], batch: usize, width: usize) -> Result<(), NetError> {
        if batch == 0 {
            return Err(NetError::EmptyBatch);
        }
        if width % 2 != 0 {
            return Err(NetError::OddWidth(width));
        }
        let expected = batch * self.config.n_pt * width;
        if x.len() != expected {
            return Err(NetError::BadLength { expected, got: x.len() });
        }
        Ok(())
    }

    /// Predicts noise for `batch` images of shape `(n_pt, width)` stored
    /// back to back; `times[b]` is the continuous time of sample `b`.
    ///
    /// Inference mode: batch normalization uses running statistics, so each
    /// sample's output is independent of the rest of the batch.
    pub fn predict(&self, x: &[F], times: &[f64], width: usize) -> Result<Vec<F>, NetError> {
        self.check_input(x, times.len(), width)?;
        Ok(self.forward_impl(x, times, width, false).0)
    }

    /// Training-mode forward pass; updates batch-norm running statistics.
    pub fn forward_train(&mut self, x: &[F], times: &[f64], width: usize) -> Result<(Vec<F>, ForwardTrace<F>), NetError> {
        self.check_input(x, times.len(), width)?;
        let (out, trace) = self.forward_impl(x, times, width, true);
        for (block, cache) in [
            (&self.input, &trace.input),
            (&self.enc1, &trace.enc1),
            (&self.enc2, &trace.enc2),
            (&self.mid1, &trace.mid1),
            (&self.mid2, &trace.mid2),
            (&self.dec1, &trace.dec1),
            (&self.dec2, &trace.dec2),
        ] {
            block.bn.commit_running(&mut self.store, &cache.bn);
        }
        Ok((out, trace))
    }

    fn forward_impl(
        &self,
        x: &[F],
        times: &[f64],
        width: usize,
        train: bool,
    ) -> (Vec<F>, ForwardTrace<F>) {
        let store = &self.store;
        let batch = times.len();
        let h = self.config.n_pt;
        let temb = time_encoding::<F>(times, self.config.time_dim);
        let th_pre = self.time_hidden.forward(store, &temb, batch);
        let th: Vec<F> = th_pre.iter().map(|&v| v.max(F::zero())).collect();
        let p_in = self.time_in.forward(store, &th, batch);
        let p_mid = self.time_mid.forward(store, &th, batch);

        let x_act = Act { c: 1, b: batch, h, w: width, data: x.to_vec() };
        let (mut h0, input) = self.input.forward(store, &x_act, train);
        h0.add_per_sample_channel(&p_in);
        let (mut h1, enc1) = self.enc1.forward(store, &h0, train);
        h1.add_assign(&h0);
        let (mut h2, enc2) = self.enc2.forward(store, &h1, train);
        h2.add_assign(&h1);

        let (mut pooled, pool_right) = maxpool_w2_forward(&h2);
        pooled.add_per_sample_channel(&p_mid);
        let (m1, mid1) = self.mid1.forward(store, &pooled, train);
        let (mut m2, mid2) = self.mid2.forward(store, &m1, train);
        m2.add_assign(&m1);
        let u = self.up.forward(store, &m2);

        let cat = Act::concat(&u, &h2);
        let (d1, dec1) = self.dec1.forward(store, &cat, train);
        let (mut d2, dec2) = self.dec2.forward(store, &d1, train);
        d2.add_assign(&d1);
        let (out, out_conv) = self.output.forward(store, &d2);

        let trace = ForwardTrace {
            batch,
            temb,
            th_pre,
            th,
            input,
            enc1,
            enc2,
            pool_right,
            mid1,
            mid2,
            mid_out: m2,
            dec1,
            dec2,
            out_conv,
        };
        (out.data, trace)
    }

    /// Accumulates parameter gradients of `<dout, output>` into the store
    /// and returns the gradient with respect to the input images.
    pub fn backward(&mut self, trace: &ForwardTrace<F>, dout: &[F]) -> Vec<F> {
        let mut store = std::mem::take(&mut self.store);
        let dx = self.backward_impl(&mut store, trace, dout);
        self.store = store;
        dx
    }

    fn backward_impl(&self, store: &mut ParamStore<F>, tr: &ForwardTrace<F>, dout: &[F]) -> Vec<F> {
        let batch = tr.batch;
        let (h, w) = (self.config.n_pt, tr.out_conv_width());
        let dout = Act { c: 1, b: batch, h, w, data: dout.to_vec() };

        let dd2 = self.output.backward(store, &tr.out_conv, &dout);
        // d2 = dec2(d1) + d1
        let mut dd1 = self.dec2.backward(store, &tr.dec2, &dd2);
        dd1.add_assign(&dd2);
        let dcat = self.dec1.backward(store, &tr.dec1, &dd1);
        let c = self.config.base_channels;
        let (du, dh2_skip) = dcat.split(c);

        let dm2 = self.up.backward(store, &tr.mid_out, &du);
        // m2 = mid2(m1) + m1
        let mut dm1 = self.mid2.backward(store, &tr.mid2, &dm2);
        dm1.add_assign(&dm2);
        let dpooled = self.mid1.backward(store, &tr.mid1, &dm1);
        let dp_mid = dpooled.sum_per_sample_channel();
        let mut dh2 = maxpool_w2_backward(&tr.pool_right, &dpooled);
        dh2.add_assign(&dh2_skip);

        // h2 = enc2(h1) + h1, h1 = enc1(h0) + h0
        let mut dh1 = self.enc2.backward(store, &tr.enc2, &dh2);
        dh1.add_assign(&dh2);
        let mut dh0 = self.enc1.backward(store, &tr.enc1, &dh1);
        dh0.add_assign(&dh1);
        let dp_in = dh0.sum_per_sample_channel();
        let dx = self.input.backward(store, &tr.input, &dh0);

        let mut dth = self.time_in.backward(store, &tr.th, &dp_in, batch);
        for (a, b) in dth.iter_mut().zip(self.time_mid.backward(store, &tr.th, &dp_mid, batch)) {
            *a += b;
        }
        for (d, &pre) in dth.iter_mut().zip(&tr.th_pre) {
            if pre <= F::zero() {
                *d = F::zero();
            }
        }
        self.time_hidden.backward(store, &tr.temb, &dth, batch);
        dx.data
    }
}

impl<F> ForwardTrace<F> {
    fn out_conv_width(&self) -> usize {
        self.dec2.out.w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_input(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Randomizes every trainable parameter so no gradient path is trivially zero.
    fn perturbed(cfg: UnetConfig, seed: u64) -> Unet<f64> {
        let mut net = Unet::<f64>::new(cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        for p in net.store.params.iter_mut().filter(|p| p.trainable) {
            for v in &mut p.value {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        net
    }

    #[test]
    fn shape_contract_and_zero_output_at_init() {
        let net = Unet::<f32>::new(UnetConfig::new(3, 4), 0);
        let x = vec![0.3f32; 8 * 3 * 20];
        let out = net.predict(&x, &[0.5; 8], 20).unwrap();
        assert_eq!(out.len(), x.len());
        assert!(out.iter().all(|&v| v == 0.0));
        assert!(net.parameter_count() > 0);
    }

    #[test]
    fn rejects_odd_width_and_empty_batch() {
        let net = Unet::<f32>::new(UnetConfig::new(3, 4), 0);
        assert_eq!(net.predict(&[0.0; 21], &[0.1], 7), Err(NetError::OddWidth(7)));
        assert_eq!(net.predict(&[], &[], 20), Err(NetError::EmptyBatch));
        assert!(matches!(net.predict(&[0.0; 10], &[0.1], 20), Err(NetError::BadLength { .. })));
    }

    #[test]
    fn time_conditioning_is_live() {
        let net = perturbed(UnetConfig::new(3, 4), 3);
        let x = random_input(3 * 20, 4);
        let early = net.predict(&x, &[1.0 / 200.0], 20).unwrap();
        let late = net.predict(&x, &[1.0], 20).unwrap();
        let diff: f64 = early.iter().zip(&late).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-6, "{diff}");
    }

    #[test]
    fn inference_is_independent_of_batch_mates() {
        let net = perturbed(UnetConfig::new(3, 4), 5);
        let x = random_input(2 * 3 * 8, 6);
        let both = net.predict(&x, &[0.2, 0.7], 8).unwrap();
        let first = net.predict(&x[..24], &[0.2], 8).unwrap();
        for (a, b) in both[..24].iter().zip(&first) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn loss(net: &Unet<f64>, x: &[f64], times: &[f64], w: usize, r: &[f64]) -> f64 {
        let (out, _) = net.forward_impl(x, times, w, true);
        out.iter().zip(r).map(|(a, b)| a * b).sum()
    }

    fn rel_err(a: &[f64], f: &[f64]) -> f64 {
        let num = a.iter().zip(f).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let den = f.iter().map(|v| v.abs()).fold(0.0, f64::max);
        num / den.max(1e-12)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = UnetConfig::new(3, 2);
        let mut net = perturbed(cfg, 7);
        let (b, w) = (3, 8);
        let x = random_input(b * 3 * w, 8);
        let times = [0.1, 0.5, 0.9];
        let r = random_input(b * 3 * w, 9);
        let h = 1e-4;

        let (_, trace) = net.forward_impl(&x, &times, w, true);
        net.store.zero_grad();
        let dx = net.backward(&trace, &r);

        let fd_x: Vec<f64> = (0..x.len())
            .map(|k| {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[k] += h;
                xm[k] -= h;
                (loss(&net, &xp, &times, w, &r) - loss(&net, &xm, &times, w, &r)) / (2.0 * h)
            })
            .collect();
        assert!(rel_err(&dx, &fd_x) < 1e-3, "input {}", rel_err(&dx, &fd_x));

        for pi in 0..net.store.params.len() {
            if !net.store.params[pi].trainable {
                continue;
            }
            let analytic = net.store.params[pi].grad.clone();
            let mut fd = Vec::with_capacity(analytic.len());
            for k in 0..analytic.len() {
                let v = net.store.params[pi].value[k];
                net.store.params[pi].value[k] = v + h;
                let lp = loss(&net, &x, &times, w, &r);
                net.store.params[pi].value[k] = v - h;
                let lm = loss(&net, &x, &times, w, &r);
                net.store.params[pi].value[k] = v;
                fd.push((lp - lm) / (2.0 * h));
            }
            let name = &net.store.params[pi].name;
            let scale = fd.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if scale < 1e-9 {
                // Conv biases feeding batch norm cancel exactly.
                assert!(analytic.iter().all(|g| g.abs() < 1e-8), "{name}");
                continue;
            }
            assert!(rel_err(&analytic, &fd) < 1e-3, "{name}: {}", rel_err(&analytic, &fd));
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let mut net = perturbed(UnetConfig::new(3, 2), 11);
        let x = random_input(2 * 3 * 8, 12);
        let (_, trace) = net.forward_train(&x, &[0.3, 0.6], 8).unwrap();
        net.store.zero_grad();
        let dx = net.backward(&trace, &vec![0.0; x.len()]);
        assert!(dx.iter().all(|&v| v == 0.0));
        assert!(net.store.params.iter().all(|p| p.grad.iter().all(|&g| g == 0.0)));
    }
}
