//! Parameter-free layers: activations, pooling, upsampling, dropout, channel
//! softmax, and the instance-norm style-mixing transform.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

const NORM_EPS: f32 = 1e-5;

/// Rectified linear unit.
#[derive(Default)]
pub struct Relu {
    cache_y: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        for v in &mut y.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.cache_y = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let y = self.cache_y.as_ref().expect("forward before backward");
        let mut dx = dy.clone();
        for (g, v) in dx.data.iter_mut().zip(&y.data) {
            if *v <= 0.0 {
                *g = 0.0;
            }
        }
        dx
    }
}

/// 2x2 max pooling (requires even spatial dimensions).
#[derive(Default)]
pub struct MaxPool2 {
    cache_idx: Vec<usize>,
    in_shape: (usize, usize, usize),
}

impl MaxPool2 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        assert!(
            x.h % 2 == 0 && x.w % 2 == 0,
            "max pool needs even spatial dims, got {}x{}",
            x.h,
            x.w
        );
        let (oh, ow) = (x.h / 2, x.w / 2);
        let mut y = Tensor::zeros(x.c, oh, ow);
        self.cache_idx.clear();
        self.cache_idx.reserve(x.c * oh * ow);
        self.in_shape = x.shape();
        for c in 0..x.c {
            let plane = x.plane(c);
            for r in 0..oh {
                for q in 0..ow {
                    let base = 2 * r * x.w + 2 * q;
                    let idxs = [base, base + 1, base + x.w, base + x.w + 1];
                    let mut best = idxs[0];
                    for &i in &idxs[1..] {
                        if plane[i] > plane[best] {
                            best = i;
                        }
                    }
                    *y.at_mut(c, r, q) = plane[best];
                    self.cache_idx.push(c * x.h * x.w + best);
                }
            }
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (c, h, w) = self.in_shape;
        let mut dx = Tensor::zeros(c, h, w);
        for (g, &i) in dy.data.iter().zip(&self.cache_idx) {
            dx.data[i] += g;
        }
        dx
    }
}

/// 2x2 average pooling (requires even spatial dimensions).
#[derive(Default)]
pub struct AvgPool2 {
    in_shape: (usize, usize, usize),
}

impl AvgPool2 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        assert!(
            x.h % 2 == 0 && x.w % 2 == 0,
            "avg pool needs even spatial dims, got {}x{}",
            x.h,
            x.w
        );
        self.in_shape = x.shape();
        let (oh, ow) = (x.h / 2, x.w / 2);
        let mut y = Tensor::zeros(x.c, oh, ow);
        for c in 0..x.c {
            let plane = x.plane(c);
            for r in 0..oh {
                for q in 0..ow {
                    let base = 2 * r * x.w + 2 * q;
                    *y.at_mut(c, r, q) =
                        0.25 * (plane[base] + plane[base + 1] + plane[base + x.w] + plane[base + x.w + 1]);
                }
            }
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (c, h, w) = self.in_shape;
        let mut dx = Tensor::zeros(c, h, w);
        for ch in 0..c {
            for r in 0..h / 2 {
                for q in 0..w / 2 {
                    let g = 0.25 * dy.at(ch, r, q);
                    let base = 2 * r * w + 2 * q;
                    let plane = dx.plane_mut(ch);
                    plane[base] += g;
                    plane[base + 1] += g;
                    plane[base + w] += g;
                    plane[base + w + 1] += g;
                }
            }
        }
        dx
    }
}

/// Nearest-neighbour 2x upsampling.
#[derive(Default)]
pub struct Upsample2 {
    in_shape: (usize, usize, usize),
}

impl Upsample2 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.in_shape = x.shape();
        let mut y = Tensor::zeros(x.c, x.h * 2, x.w * 2);
        for c in 0..x.c {
            for r in 0..x.h {
                for q in 0..x.w {
                    let v = x.at(c, r, q);
                    *y.at_mut(c, 2 * r, 2 * q) = v;
                    *y.at_mut(c, 2 * r, 2 * q + 1) = v;
                    *y.at_mut(c, 2 * r + 1, 2 * q) = v;
                    *y.at_mut(c, 2 * r + 1, 2 * q + 1) = v;
                }
            }
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (c, h, w) = self.in_shape;
        let mut dx = Tensor::zeros(c, h, w);
        for ch in 0..c {
            for r in 0..h {
                for q in 0..w {
                    *dx.at_mut(ch, r, q) = dy.at(ch, 2 * r, 2 * q)
                        + dy.at(ch, 2 * r, 2 * q + 1)
                        + dy.at(ch, 2 * r + 1, 2 * q)
                        + dy.at(ch, 2 * r + 1, 2 * q + 1);
                }
            }
        }
        dx
    }
}

/// Inverted dropout; identity when inactive.
pub struct Dropout {
    pub p: f64,
    mask: Vec<f32>,
    active_last: bool,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout probability {p}");
        Self {
            p,
            mask: Vec::new(),
            active_last: false,
        }
    }

    pub fn forward(&mut self, x: &Tensor, active: bool, rng: &mut ChaCha8Rng) -> Tensor {
        self.active_last = active && self.p > 0.0;
        if !self.active_last {
            return x.clone();
        }
        let keep = 1.0 - self.p;
        let scale = (1.0 / keep) as f32;
        self.mask.clear();
        self.mask.reserve(x.data.len());
        let mut y = x.clone();
        for v in &mut y.data {
            let m = if rng.gen::<f64>() < keep { scale } else { 0.0 };
            self.mask.push(m);
            *v *= m;
        }
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        if !self.active_last {
            return dy.clone();
        }
        let mut dx = dy.clone();
        for (g, m) in dx.data.iter_mut().zip(&self.mask) {
            *g *= m;
        }
        dx
    }
}

/// Per-pixel softmax over the channel dimension.
#[derive(Default)]
pub struct SoftmaxChannels {
    cache_y: Option<Tensor>,
}

impl SoftmaxChannels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        let n = x.h * x.w;
        for i in 0..n {
            let mut maxv = f32::NEG_INFINITY;
            for c in 0..x.c {
                maxv = maxv.max(x.data[c * n + i]);
            }
            let mut sum = 0f32;
            for c in 0..x.c {
                let e = (x.data[c * n + i] - maxv).exp();
                y.data[c * n + i] = e;
                sum += e;
            }
            for c in 0..x.c {
                y.data[c * n + i] /= sum;
            }
        }
        self.cache_y = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let y = self.cache_y.as_ref().expect("forward before backward");
        let n = y.h * y.w;
        let mut dx = Tensor::zeros(y.c, y.h, y.w);
        for i in 0..n {
            let mut dot = 0f32;
            for c in 0..y.c {
                dot += dy.data[c * n + i] * y.data[c * n + i];
            }
            for c in 0..y.c {
                dx.data[c * n + i] = y.data[c * n + i] * (dy.data[c * n + i] - dot);
            }
        }
        dx
    }
}

/// Elementwise logistic activation.
#[derive(Default)]
pub struct Sigmoid {
    cache_y: Option<Tensor>,
}

impl Sigmoid {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        for v in &mut y.data {
            *v = 1.0 / (1.0 + (-*v).exp());
        }
        self.cache_y = Some(y.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let y = self.cache_y.as_ref().expect("forward before backward");
        let mut dx = dy.clone();
        for (g, v) in dx.data.iter_mut().zip(&y.data) {
            *g *= *v * (1.0 - *v);
        }
        dx
    }
}

/// Cache for [`mix_forward`], consumed by [`mix_backward`].
pub struct MixCache {
    normalized: Tensor,
    inv_std: Vec<f32>,
}

/// Style-mixing transform: per-channel instance normalization followed by a
/// `(1 + gamma)` scale and `beta` shift.
pub fn mix_forward(x: &Tensor, gamma: &[f32], beta: &[f32]) -> (Tensor, MixCache) {
    assert_eq!(gamma.len(), x.c, "gamma length mismatch");
    assert_eq!(beta.len(), x.c, "beta length mismatch");
    let n = (x.h * x.w) as f32;
    let mut normalized = Tensor::zeros(x.c, x.h, x.w);
    let mut inv_std = vec![0f32; x.c];
    let mut y = Tensor::zeros(x.c, x.h, x.w);
    for c in 0..x.c {
        let plane = x.plane(c);
        let mean = plane.iter().sum::<f32>() / n;
        let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
        let is = 1.0 / (var + NORM_EPS).sqrt();
        inv_std[c] = is;
        let norm_plane = normalized.plane_mut(c);
        for (o, v) in norm_plane.iter_mut().zip(plane) {
            *o = (*v - mean) * is;
        }
        let scale = 1.0 + gamma[c];
        for (o, v) in y.plane_mut(c).iter_mut().zip(normalized.plane(c)) {
            *o = scale * *v + beta[c];
        }
    }
    (y, MixCache { normalized, inv_std })
}

/// Backward pass of [`mix_forward`]; returns `(dx, dgamma, dbeta)`.
pub fn mix_backward(cache: &MixCache, gamma: &[f32], dy: &Tensor) -> (Tensor, Vec<f32>, Vec<f32>) {
    let x_hat = &cache.normalized;
    let n = (x_hat.h * x_hat.w) as f32;
    let mut dx = Tensor::zeros(x_hat.c, x_hat.h, x_hat.w);
    let mut dgamma = vec![0f32; x_hat.c];
    let mut dbeta = vec![0f32; x_hat.c];
    for c in 0..x_hat.c {
        let dy_plane = dy.plane(c);
        let hat_plane = x_hat.plane(c);
        dbeta[c] = dy_plane.iter().sum();
        dgamma[c] = dy_plane
            .iter()
            .zip(hat_plane)
            .map(|(g, h)| g * h)
            .sum();
        let scale = 1.0 + gamma[c];
        // d x_hat = dy * (1 + gamma); then the usual instance-norm backward.
        let sum_dh: f32 = dy_plane.iter().sum::<f32>() * scale;
        let sum_dh_hat: f32 = dgamma[c] * scale;
        let is = cache.inv_std[c];
        for ((o, g), h) in dx.plane_mut(c).iter_mut().zip(dy_plane).zip(hat_plane) {
            let dh = g * scale;
            *o = is * (dh - sum_dh / n - h * (sum_dh_hat / n));
        }
    }
    (dx, dgamma, dbeta)
}

/// Sample a boolean with probability `p` from the given stream.
pub fn bernoulli(rng: &mut ChaCha8Rng, p: f64) -> bool {
    rng.gen::<f64>() < p
}
