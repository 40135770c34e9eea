//! Layers with explicit forward caches and hand-written backward passes.
//!
//! Activations use a channel-major batch layout `[c][b][h][w]`, so a
//! convolution over a whole batch is a single GEMM and batch-norm statistics
//! are contiguous per channel.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::real::{matmul, Op, Real};

/// A named tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<F>,
    pub grad: Vec<F>,
    /// Buffers such as running statistics are stored but never optimized.
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<F> {
    pub params: Vec<Param<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, value: Vec<F>, trainable: bool) -> usize {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        let len = value.len();
        self.params.push(Param { name: name.into(), shape, value, grad: vec![F::zero(); len], trainable });
        self.params.len() - 1
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = F::zero());
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param<F>> {
        self.params.iter().find(|p| p.name == name)
    }
}

fn kaiming<F: Real, R: Rng>(rng: &mut R, len: usize, fan_in: usize) -> Vec<F> {
    let sd = (2.0 / fan_in as f64).sqrt();
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            F::lit(z * sd)
        })
        .collect()
}

/// Activation tensor in `[c][b][h][w]` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Act<F> {
    pub c: usize,
    pub b: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<F>,
}

impl<F: Real> Act<F> {
    pub fn zeros(c: usize, b: usize, h: usize, w: usize) -> Self {
        Self { c, b, h, w, data: vec![F::zero(); c * b * h * w] }
    }

    /// Pixels per channel across the batch.
    pub fn plane(&self) -> usize {
        self.b * self.h * self.w
    }

    pub fn add_assign(&mut self, other: &Act<F>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Adds `v[b][c]` to every pixel of channel `c` in sample `b`.
    pub fn add_per_sample_channel(&mut self, v: &[F]) {
        let hw = self.h * self.w;
        for c in 0..self.c {
            for b in 0..self.b {
                let add = v[b * self.c + c];
                let off = (c * self.b + b) * hw;
                self.data[off..off + hw].iter_mut().for_each(|x| *x += add);
            }
        }
    }

    /// Gradient of [`Act::add_per_sample_channel`] with respect to `v`.
    pub fn sum_per_sample_channel(&self) -> Vec<F> {
        let hw = self.h * self.w;
        let mut out = vec![F::zero(); self.b * self.c];
        for c in 0..self.c {
            for b in 0..self.b {
                let off = (c * self.b + b) * hw;
                out[b * self.c + c] = self.data[off..off + hw].iter().copied().sum();
            }
        }
        out
    }

    /// Channel concatenation; in channel-major layout this is appending.
    pub fn concat(a: &Act<F>, b: &Act<F>) -> Act<F> {
        debug_assert_eq!((a.b, a.h, a.w), (b.b, b.h, b.w));
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Act { c: a.c + b.c, b: a.b, h: a.h, w: a.w, data }
    }

    pub fn split(self, c_first: usize) -> (Act<F>, Act<F>) {
        let cut = c_first * self.plane();
        let (b, h, w) = (self.b, self.h, self.w);
        let mut first = self.data;
        let second = first.split_off(cut);
        let c2 = second.len() / (b * h * w);
        (Act { c: c_first, b, h, w, data: first }, Act { c: c2, b, h, w, data: second })
    }
}

/// Stride-1 convolution with "same" padding.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
}

pub struct ConvCache<F> {
    col: Vec<F>,
    h: usize,
    w: usize,
    b: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real, R: Rng>(
        store: &mut ParamStore<F>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        kh: usize,
        kw: usize,
        zero_init: bool,
    ) -> Self {
        let k = cin * kh * kw;
        let w = if zero_init { vec![F::zero(); cout * k] } else { kaiming(rng, cout * k, k) };
        let weight = store.add(format!("{name}.weight"), vec![cout, cin, kh, kw], w, true);
        let bias = store.add(format!("{name}.bias"), vec![cout], vec![F::zero(); cout], true);
        Self { weight, bias, cin, cout, kh, kw }
    }

    fn pads(&self) -> (usize, usize) {
        ((self.kh - 1) / 2, (self.kw - 1) / 2)
    }

    fn im2col<F: Real>(&self, x: &Act<F>) -> Vec<F> {
        let (ph, pw) = self.pads();
        let (b, h, w) = (x.b, x.h, x.w);
        let p = x.plane();
        let mut col = vec![F::zero(); self.cin * self.kh * self.kw * p];
        for ci in 0..self.cin {
            for dy in 0..self.kh {
                for dx in 0..self.kw {
                    let row = (ci * self.kh + dy) * self.kw + dx;
                    let dst = &mut col[row * p..(row + 1) * p];
                    let x_lo = pw.saturating_sub(dx);
                    let x_hi = (w + pw).saturating_sub(dx).min(w);
                    if x_lo >= x_hi {
                        continue;
                    }
                    for bi in 0..b {
                        for y in 0..h {
                            let sy = y as isize + dy as isize - ph as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let src_off = ((ci * b + bi) * h + sy as usize) * w;
                            let dst_off = (bi * h + y) * w;
                            let sx_lo = x_lo + dx - pw;
                            let len = x_hi - x_lo;
                            dst[dst_off + x_lo..dst_off + x_hi]
                                .copy_from_slice(&x.data[src_off + sx_lo..src_off + sx_lo + len]);
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im<F: Real>(&self, col: &[F], b: usize, h: usize, w: usize) -> Act<F> {
        let (ph, pw) = self.pads();
        let p = b * h * w;
        let mut dx_act = Act::zeros(self.cin, b, h, w);
        for ci in 0..self.cin {
            for dy in 0..self.kh {
                for dx in 0..self.kw {
                    let row = (ci * self.kh + dy) * self.kw + dx;
                    let src = &col[row * p..(row + 1) * p];
                    let x_lo = pw.saturating_sub(dx);
                    let x_hi = (w + pw).saturating_sub(dx).min(w);
                    if x_lo >= x_hi {
                        continue;
                    }
                    for bi in 0..b {
                        for y in 0..h {
                            let sy = y as isize + dy as isize - ph as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let dst_off = ((ci * b + bi) * h + sy as usize) * w;
                            let src_off = (bi * h + y) * w;
                            let sx_lo = x_lo + dx - pw;
                            let len = x_hi - x_lo;
                            let dst = &mut dx_act.data[dst_off + sx_lo..dst_off + sx_lo + len];
                            for (d, &s) in dst.iter_mut().zip(&src[src_off + x_lo..src_off + x_hi]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
        dx_act
    }

    pub fn forward<F: Real>(&self, store: &ParamStore<F>, x: &Act<F>) -> (Act<F>, ConvCache<F>) {
        debug_assert_eq!(x.c, self.cin);
        let p = x.plane();
        let k = self.cin * self.kh * self.kw;
        let col = self.im2col(x);
        let mut out = Act::zeros(self.cout, x.b, x.h, x.w);
        let bias = &store.params[self.bias].value;
        for co in 0..self.cout {
            out.data[co * p..(co + 1) * p].iter_mut().for_each(|v| *v = bias[co]);
        }
        matmul(self.cout, k, p, &store.params[self.weight].value, Op::N, &col, Op::N, &mut out.data, true);
        (out, ConvCache { col, h: x.h, w: x.w, b: x.b })
    }

    pub fn backward<F: Real>(&self, store: &mut ParamStore<F>, cache: &ConvCache<F>, dy: &Act<F>) -> Act<F> {
        let p = dy.plane();
        let k = self.cin * self.kh * self.kw;
        {
            let bias = &mut store.params[self.bias];
            for co in 0..self.cout {
                let s: F = dy.data[co * p..(co + 1) * p].iter().copied().sum();
                bias.grad[co] += s;
            }
        }
        let wp = &mut store.params[self.weight];
        // dW[co][k] += dy[co][p] col[k][p]
        matmul(self.cout, p, k, &dy.data, Op::N, &cache.col, Op::T, &mut wp.grad, true);
        // dcol[k][p] = W^T[k][co] dy[co][p]
        let mut dcol = vec![F::zero(); k * p];
        matmul(k, self.cout, p, &wp.value, Op::T, &dy.data, Op::N, &mut dcol, false);
        self.col2im(&dcol, cache.b, cache.h, cache.w)
    }
}

/// Per-channel batch normalization with running statistics.
#[derive(Debug, Clone, Copy)]
pub struct BatchNorm {
    pub gamma: usize,
    pub beta: usize,
    pub running_mean: usize,
    pub running_var: usize,
    pub channels: usize,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

pub struct BnCache<F> {
    xhat: Vec<F>,
    inv_std: Vec<F>,
    train: bool,
    batch_mean: Vec<F>,
    batch_var_unbiased: Vec<F>,
}

impl BatchNorm {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), vec![channels], vec![F::one(); channels], true);
        let beta = store.add(format!("{name}.beta"), vec![channels], vec![F::zero(); channels], true);
        let running_mean =
            store.add(format!("{name}.running_mean"), vec![channels], vec![F::zero(); channels], false);
        let running_var = store.add(format!("{name}.running_var"), vec![channels], vec![F::one(); channels], false);
        Self { gamma, beta, running_mean, running_var, channels }
    }

    /// Training mode normalizes with batch statistics; the running ones are
    /// updated separately by [`BatchNorm::commit_running`].
    pub fn forward<F: Real>(&self, store: &ParamStore<F>, x: &Act<F>, train: bool) -> (Act<F>, BnCache<F>) {
        let p = x.plane();
        let mut out = x.clone();
        let mut xhat = vec![F::zero(); x.data.len()];
        let mut inv_std = vec![F::zero(); self.channels];
        let eps = F::lit(BN_EPS);
        let mut batch_mean = Vec::new();
        let mut batch_var_unbiased = Vec::new();
        for c in 0..self.channels {
            let seg = &x.data[c * p..(c + 1) * p];
            let (mean, var) = if train {
                let n = F::from_usize(p).unwrap();
                let mean = seg.iter().copied().sum::<F>() / n;
                let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
                batch_mean.push(mean);
                batch_var_unbiased.push(if p > 1 { var * n / (n - F::one()) } else { var });
                (mean, var)
            } else {
                (store.params[self.running_mean].value[c], store.params[self.running_var].value[c])
            };
            let is = F::one() / (var + eps).sqrt();
            inv_std[c] = is;
            let g = store.params[self.gamma].value[c];
            let b = store.params[self.beta].value[c];
            for (k, &v) in seg.iter().enumerate() {
                let xh = (v - mean) * is;
                xhat[c * p + k] = xh;
                out.data[c * p + k] = g * xh + b;
            }
        }
        (out, BnCache { xhat, inv_std, train, batch_mean, batch_var_unbiased })
    }

    /// Folds the batch statistics of a training-mode pass into the running ones.
    pub fn commit_running<F: Real>(&self, store: &mut ParamStore<F>, cache: &BnCache<F>) {
        if !cache.train {
            return;
        }
        let m = F::lit(BN_MOMENTUM);
        for c in 0..self.channels {
            let rm = &mut store.params[self.running_mean].value[c];
            *rm = (F::one() - m) * *rm + m * cache.batch_mean[c];
            let rv = &mut store.params[self.running_var].value[c];
            *rv = (F::one() - m) * *rv + m * cache.batch_var_unbiased[c];
        }
    }

    pub fn backward<F: Real>(&self, store: &mut ParamStore<F>, cache: &BnCache<F>, dy: &Act<F>) -> Act<F> {
        let p = dy.plane();
        let n = F::from_usize(p).unwrap();
        let mut dx = dy.clone();
        for c in 0..self.channels {
            let dys = &dy.data[c * p..(c + 1) * p];
            let xh = &cache.xhat[c * p..(c + 1) * p];
            let dbeta: F = dys.iter().copied().sum();
            let dgamma: F = dys.iter().zip(xh).map(|(&a, &b)| a * b).sum();
            store.params[self.gamma].grad[c] += dgamma;
            store.params[self.beta].grad[c] += dbeta;
            let g = store.params[self.gamma].value[c];
            let is = cache.inv_std[c];
            let out = &mut dx.data[c * p..(c + 1) * p];
            if cache.train {
                let scale = g * is / n;
                for k in 0..p {
                    out[k] = scale * (n * dys[k] - dbeta - xh[k] * dgamma);
                }
            } else {
                for k in 0..p {
                    out[k] = g * is * dys[k];
                }
            }
        }
        dx
    }
}

pub fn relu_forward<F: Real>(x: &mut Act<F>) {
    x.data.iter_mut().for_each(|v| {
        if *v < F::zero() {
            *v = F::zero()
        }
    });
}

/// Masks `dy` where the ReLU output was zero.
pub fn relu_backward<F: Real>(y: &Act<F>, dy: &mut Act<F>) {
    for (d, &v) in dy.data.iter_mut().zip(&y.data) {
        if v <= F::zero() {
            *d = F::zero();
        }
    }
}

/// Max pooling with kernel and stride `(1, 2)`; records the winning column.
pub fn maxpool_w2_forward<F: Real>(x: &Act<F>) -> (Act<F>, Vec<bool>) {
    assert!(x.w % 2 == 0, "pooling needs an even width");
    let wo = x.w / 2;
    let mut out = Act::zeros(x.c, x.b, x.h, wo);
    let mut right = vec![false; out.data.len()];
    for (k, o) in out.data.iter_mut().enumerate() {
        let (l, r) = (x.data[2 * k], x.data[2 * k + 1]);
        if r > l {
            *o = r;
            right[k] = true;
        } else {
            *o = l;
        }
    }
    (out, right)
}

pub fn maxpool_w2_backward<F: Real>(right: &[bool], dy: &Act<F>) -> Act<F> {
    let mut dx = Act::zeros(dy.c, dy.b, dy.h, dy.w * 2);
    for (k, &d) in dy.data.iter().enumerate() {
        dx.data[2 * k + right[k] as usize] = d;
    }
    dx
}

/// Transposed convolution with kernel and stride `(1, 2)`: doubles the width.
#[derive(Debug, Clone, Copy)]
pub struct ConvTransposeW2 {
    /// Stored as `[tap][cout][cin]`.
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
}

impl ConvTransposeW2 {
    pub fn new<F: Real, R: Rng>(store: &mut ParamStore<F>, rng: &mut R, name: &str, cin: usize, cout: usize) -> Self {
        let w = kaiming(rng, 2 * cout * cin, cin);
        let weight = store.add(format!("{name}.weight"), vec![2, cout, cin], w, true);
        let bias = store.add(format!("{name}.bias"), vec![cout], vec![F::zero(); cout], true);
        Self { weight, bias, cin, cout }
    }

    pub fn forward<F: Real>(&self, store: &ParamStore<F>, x: &Act<F>) -> Act<F> {
        let p = x.plane();
        let w = &store.params[self.weight].value;
        let bias = &store.params[self.bias].value;
        let mut out = Act::zeros(self.cout, x.b, x.h, x.w * 2);
        let mut tap_out = vec![F::zero(); self.cout * p];
        for tap in 0..2 {
            let wt = &w[tap * self.cout * self.cin..(tap + 1) * self.cout * self.cin];
            matmul(self.cout, self.cin, p, wt, Op::N, &x.data, Op::N, &mut tap_out, false);
            for co in 0..self.cout {
                for k in 0..p {
                    out.data[co * 2 * p + 2 * k + tap] = tap_out[co * p + k] + bias[co];
                }
            }
        }
        out
    }

    pub fn backward<F: Real>(&self, store: &mut ParamStore<F>, x: &Act<F>, dy: &Act<F>) -> Act<F> {
        let p = x.plane();
        let mut dx = Act::zeros(self.cin, x.b, x.h, x.w);
        let mut dtap = vec![F::zero(); self.cout * p];
        {
            let bias = &mut store.params[self.bias];
            for co in 0..self.cout {
                bias.grad[co] += dy.data[co * 2 * p..(co + 1) * 2 * p].iter().copied().sum();
            }
        }
        let wp = &mut store.params[self.weight];
        let block = self.cout * self.cin;
        for tap in 0..2 {
            for co in 0..self.cout {
                for k in 0..p {
                    dtap[co * p + k] = dy.data[co * 2 * p + 2 * k + tap];
                }
            }
            matmul(self.cout, p, self.cin, &dtap, Op::N, &x.data, Op::T, &mut wp.grad[tap * block..(tap + 1) * block], true);
            matmul(self.cin, self.cout, p, &wp.value[tap * block..(tap + 1) * block], Op::T, &dtap, Op::N, &mut dx.data, true);
        }
        dx
    }
}

/// Dense layer on row-major `[batch][features]` inputs.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<F: Real, R: Rng>(store: &mut ParamStore<F>, rng: &mut R, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = kaiming(rng, fan_out * fan_in, fan_in);
        let weight = store.add(format!("{name}.weight"), vec![fan_out, fan_in], w, true);
        let bias = store.add(format!("{name}.bias"), vec![fan_out], vec![F::zero(); fan_out], true);
        Self { weight, bias, fan_in, fan_out }
    }

    pub fn forward<F: Real>(&self, store: &ParamStore<F>, x: &[F], batch: usize) -> Vec<F> {
        let mut y: Vec<F> = (0..batch).flat_map(|_| store.params[self.bias].value.iter().copied()).collect();
        matmul(batch, self.fan_in, self.fan_out, x, Op::N, &store.params[self.weight].value, Op::T, &mut y, true);
        y
    }

    pub fn backward<F: Real>(&self, store: &mut ParamStore<F>, x: &[F], dy: &[F], batch: usize) -> Vec<F> {
        {
            let bias = &mut store.params[self.bias];
            for b in 0..batch {
                for o in 0..self.fan_out {
                    bias.grad[o] += dy[b * self.fan_out + o];
                }
            }
        }
        let wp = &mut store.params[self.weight];
        matmul(self.fan_out, batch, self.fan_in, dy, Op::T, x, Op::N, &mut wp.grad, true);
        let mut dx = vec![F::zero(); batch * self.fan_in];
        matmul(batch, self.fan_out, self.fan_in, dy, Op::N, &wp.value, Op::N, &mut dx, false);
        dx
    }
}
