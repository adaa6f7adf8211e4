//! Direct 3x3 (zero-padded, stride 1) and 1x1 convolutions with explicit
//! backward passes. The inner loops run over contiguous rows so the compiler
//! can vectorize them; all accumulation orders are fixed, keeping results
//! bit-reproducible run to run.

use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use super::Parameterized;

/// `y_row += k0 * x[i-1] + k1 * x[i] + k2 * x[i+1]` with zero padding.
#[inline]
fn row_acc(y: &mut [f32], x: &[f32], k0: f32, k1: f32, k2: f32) {
    let w = y.len();
    debug_assert_eq!(x.len(), w);
    if w == 1 {
        y[0] += k1 * x[0];
        return;
    }
    y[0] += k1 * x[0] + k2 * x[1];
    let n = w - 2;
    {
        let (xm, xc, xp) = (&x[0..n], &x[1..n + 1], &x[2..n + 2]);
        for (((o, a), b), c) in y[1..w - 1]
            .iter_mut()
            .zip(xm.iter())
            .zip(xc.iter())
            .zip(xp.iter())
        {
            *o += k0 * *a + k1 * *b + k2 * *c;
        }
    }
    y[w - 1] += k0 * x[w - 2] + k1 * x[w - 1];
}

/// Accumulate a full 3x3 correlation of one input plane into one output
/// plane: `y[r][c] += sum_{dr,dc} k[(dr+1)*3 + dc+1] * x[r+dr][c+dc]`.
fn conv3x3_acc(y: &mut [f32], x: &[f32], h: usize, w: usize, k: &[f32]) {
    debug_assert_eq!(k.len(), 9);
    for r in 0..h {
        let y_row = &mut y[r * w..(r + 1) * w];
        for dr in -1i32..=1 {
            let sr = r as i32 + dr;
            if sr < 0 || sr >= h as i32 {
                continue;
            }
            let x_row = &x[sr as usize * w..(sr as usize + 1) * w];
            let kk = &k[((dr + 1) * 3) as usize..][..3];
            row_acc(y_row, x_row, kk[0], kk[1], kk[2]);
        }
    }
}

/// Dot product with a fixed 8-lane accumulation order.
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f32; 8];
    let mut chunks_a = a.chunks_exact(8);
    let mut chunks_b = b.chunks_exact(8);
    for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
        for i in 0..8 {
            acc[i] += ca[i] * cb[i];
        }
    }
    let mut tail = 0f32;
    for (x, y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        tail += x * y;
    }
    let mut sum = tail;
    for v in acc {
        sum += v;
    }
    sum
}

/// 3x3 convolutional layer, zero padding, stride 1.
pub struct Conv3x3 {
    pub in_c: usize,
    pub out_c: usize,
    w: Vec<f32>, // [out_c][in_c][9]
    b: Vec<f32>,
    gw: Vec<f32>,
    gb: Vec<f32>,
    cache_x: Option<Tensor>,
}

impl Conv3x3 {
    /// He-normal initialization from the given stream.
    pub fn new(in_c: usize, out_c: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / (in_c as f64 * 9.0)).sqrt();
        let w = (0..out_c * in_c * 9)
            .map(|_| (super::init::normal_sample(rng) * std) as f32)
            .collect();
        Self {
            in_c,
            out_c,
            w,
            b: vec![0.0; out_c],
            gw: vec![0.0; out_c * in_c * 9],
            gb: vec![0.0; out_c],
            cache_x: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.in_c, "conv3x3 channel mismatch");
        let (h, w) = (x.h, x.w);
        let mut y = Tensor::zeros(self.out_c, h, w);
        for co in 0..self.out_c {
            let bias = self.b[co];
            let y_plane = y.plane_mut(co);
            y_plane.fill(bias);
            for ci in 0..self.in_c {
                let k = &self.w[(co * self.in_c + ci) * 9..][..9];
                conv3x3_acc(y_plane, x.plane(ci), h, w, k);
            }
        }
        self.cache_x = Some(x.clone());
        y
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.cache_x.as_ref().expect("forward before backward");
        let (h, w) = (x.h, x.w);
        assert_eq!(dy.shape(), (self.out_c, h, w));

        for co in 0..self.out_c {
            let dy_plane = dy.plane(co);
            self.gb[co] += dy_plane.iter().sum::<f32>();
            for ci in 0..self.in_c {
                let x_plane = x.plane(ci);
                let gk = &mut self.gw[(co * self.in_c + ci) * 9..][..9];
                for dr in -1i32..=1 {
                    for dc in -1i32..=1 {
                        let mut acc = 0f32;
                        for r in 0..h as i32 {
                            let sr = r + dr;
                            if sr < 0 || sr >= h as i32 {
                                continue;
                            }
                            // columns c with 0 <= c + dc < w
                            let c_lo = (-dc).max(0) as usize;
                            let c_hi = (w as i32 - dc.max(0)) as usize;
                            let dy_row = &dy_plane[r as usize * w + c_lo..r as usize * w + c_hi];
                            let x_row = &x_plane[(sr as usize * w) + (c_lo as i32 + dc) as usize..]
                                [..c_hi - c_lo];
                            acc += dot(dy_row, x_row);
                        }
                        gk[((dr + 1) * 3 + dc + 1) as usize] += acc;
                    }
                }
            }
        }

        let mut dx = Tensor::zeros(self.in_c, h, w);
        let mut flipped = [0f32; 9];
        for ci in 0..self.in_c {
            let dx_plane = dx.plane_mut(ci);
            for co in 0..self.out_c {
                let k = &self.w[(co * self.in_c + ci) * 9..][..9];
                for i in 0..9 {
                    flipped[i] = k[8 - i];
                }
                conv3x3_acc(dx_plane, dy.plane(co), h, w, &flipped);
            }
        }
        dx
    }
}

impl Parameterized for Conv3x3 {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f32], &mut [f32])) {
        f(&mut self.w, &mut self.gw);
        f(&mut self.b, &mut self.gb);
    }
}

/// Pointwise (1x1) convolution.
pub struct Conv1x1 {
    pub in_c: usize,
    pub out_c: usize,
    w: Vec<f32>, // [out_c][in_c]
    b: Vec<f32>,
    gw: Vec<f32>,
    gb: Vec<f32>,
    cache_x: Option<Tensor>,
}

impl Conv1x1 {
    pub fn new(in_c: usize, out_c: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / in_c as f64).sqrt();
        let w = (0..out_c * in_c)
            .map(|_| (super::init::normal_sample(rng) * std) as f32)
            .collect();
        Self {
            in_c,
            out_c,
            w,
            b: vec![0.0; out_c],
            gw: vec![0.0; out_c * in_c],
            gb: vec![0.0; out_c],
            cache_x: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.in_c, "conv1x1 channel mismatch");
        let mut y = Tensor::zeros(self.out_c, x.h, x.w);
        for co in 0..self.out_c {
            let bias = self.b[co];
            let y_plane = y.plane_mut(co);
            y_plane.fill(bias);
            for ci in 0..self.in_c {
                let k = self.w[co * self.in_c + ci];
                for (o, v) in y_plane.iter_mut().zip(x.plane(ci)) {
                    *o += k * *v;
                }
            }
        }
        self.cache_x = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.cache_x.as_ref().expect("forward before backward");
        assert_eq!(dy.shape(), (self.out_c, x.h, x.w));
        for co in 0..self.out_c {
            let dy_plane = dy.plane(co);
            self.gb[co] += dy_plane.iter().sum::<f32>();
            for ci in 0..self.in_c {
                self.gw[co * self.in_c + ci] += dot(dy_plane, x.plane(ci));
            }
        }
        let mut dx = Tensor::zeros(self.in_c, x.h, x.w);
        for ci in 0..self.in_c {
            let dx_plane = dx.plane_mut(ci);
            for co in 0..self.out_c {
                let k = self.w[co * self.in_c + ci];
                for (o, v) in dx_plane.iter_mut().zip(dy.plane(co)) {
                    *o += k * *v;
                }
            }
        }
        dx
    }
}

impl Parameterized for Conv1x1 {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f32], &mut [f32])) {
        f(&mut self.w, &mut self.gw);
        f(&mut self.b, &mut self.gb);
    }
}
