//! Dense layers and activations over flat vectors (used by the noise
//! encoder).

use rand_chacha::ChaCha8Rng;

use super::Parameterized;

/// Fully-connected layer.
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    w: Vec<f32>, // [out][in]
    b: Vec<f32>,
    gw: Vec<f32>,
    gb: Vec<f32>,
    cache_x: Vec<f32>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / in_dim as f64).sqrt();
        let w = (0..out_dim * in_dim)
            .map(|_| (super::init::normal_sample(rng) * std) as f32)
            .collect();
        Self {
            in_dim,
            out_dim,
            w,
            b: vec![0.0; out_dim],
            gw: vec![0.0; out_dim * in_dim],
            gb: vec![0.0; out_dim],
            cache_x: Vec::new(),
        }
    }

    pub fn forward(&mut self, x: &[f32]) -> Vec<f32> {
        assert_eq!(x.len(), self.in_dim);
        self.cache_x = x.to_vec();
        (0..self.out_dim)
            .map(|o| {
                let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                self.b[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>()
            })
            .collect()
    }

    pub fn backward(&mut self, dy: &[f32]) -> Vec<f32> {
        assert_eq!(dy.len(), self.out_dim);
        let x = &self.cache_x;
        for o in 0..self.out_dim {
            self.gb[o] += dy[o];
            let grow = &mut self.gw[o * self.in_dim..(o + 1) * self.in_dim];
            for (g, v) in grow.iter_mut().zip(x) {
                *g += dy[o] * v;
            }
        }
        let mut dx = vec![0f32; self.in_dim];
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            for (d, w) in dx.iter_mut().zip(row) {
                *d += dy[o] * w;
            }
        }
        dx
    }
}

impl Parameterized for Linear {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f32], &mut [f32])) {
        f(&mut self.w, &mut self.gw);
        f(&mut self.b, &mut self.gb);
    }
}

/// ReLU over a flat vector.
#[derive(Default)]
pub struct VecRelu {
    cache_y: Vec<f32>,
}

impl VecRelu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &[f32]) -> Vec<f32> {
        let y: Vec<f32> = x.iter().map(|v| v.max(0.0)).collect();
        self.cache_y = y.clone();
        y
    }

    pub fn backward(&mut self, dy: &[f32]) -> Vec<f32> {
        dy.iter()
            .zip(&self.cache_y)
            .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
            .collect()
    }
}

/// Smooth bounding `y = s * tanh(x / s)`, keeping outputs within `[-s, s]`.
pub struct SoftClip {
    pub scale: f32,
    cache_y: Vec<f32>,
}

impl SoftClip {
    pub fn new(scale: f32) -> Self {
        assert!(scale > 0.0);
        Self {
            scale,
            cache_y: Vec::new(),
        }
    }

    pub fn forward(&mut self, x: &[f32]) -> Vec<f32> {
        let y: Vec<f32> = x.iter().map(|v| self.scale * (v / self.scale).tanh()).collect();
        self.cache_y = y.clone();
        y
    }

    pub fn backward(&mut self, dy: &[f32]) -> Vec<f32> {
        dy.iter()
            .zip(&self.cache_y)
            .map(|(g, y)| {
                let t = y / self.scale;
                g * (1.0 - t * t)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = crate::rng::stream(4, "linear-fd");
        let mut lin = Linear::new(3, 2, &mut rng);
        let x = vec![0.3f32, -0.7, 1.1];
        let target = [0.9f32, -0.4];

        let loss = |lin: &mut Linear, x: &[f32]| -> f64 {
            lin.forward(x)
                .iter()
                .zip(target.iter())
                .map(|(y, t)| (*y as f64) * (*t as f64))
                .sum()
        };

        let _ = lin.forward(&x);
        super::super::zero_grads(&mut lin);
        let dx = lin.backward(&target);

        let h = 1e-2f32;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&mut lin, &xp) - loss(&mut lin, &xm)) / (2.0 * h as f64);
            assert!(
                (fd - dx[i] as f64).abs() < 1e-3,
                "input grad {i}: fd {fd}, analytic {}",
                dx[i]
            );
        }

        // parameter gradients
        let mut grads = Vec::new();
        lin.visit_params(&mut |_, g| grads.push(g.to_vec()));
        let mut idx = 0;
        for tensor in 0..grads.len() {
            for j in 0..grads[tensor].len() {
                let nudge = |lin: &mut Linear, d: f32| {
                    let mut k = 0;
                    lin.visit_params(&mut |w, _| {
                        if k == tensor {
                            w[j] += d;
                        }
                        k += 1;
                    });
                };
                nudge(&mut lin, h);
                let lp = loss(&mut lin, &x);
                nudge(&mut lin, -2.0 * h);
                let lm = loss(&mut lin, &x);
                nudge(&mut lin, h);
                let fd = (lp - lm) / (2.0 * h as f64);
                assert!(
                    (fd - grads[tensor][j] as f64).abs() < 1e-3,
                    "param grad ({tensor},{j}): fd {fd}, analytic {}",
                    grads[tensor][j]
                );
                idx += 1;
            }
        }
        assert!(idx > 0);
    }

    #[test]
    fn soft_clip_bounds_and_grad() {
        let mut clip = SoftClip::new(2.0);
        let y = clip.forward(&[100.0, -100.0, 0.0]);
        assert!(y[0] <= 2.0 && y[0] > 1.99);
        assert!(y[1] >= -2.0 && y[1] < -1.99);
        assert_eq!(y[2], 0.0);
        let dx = clip.backward(&[1.0, 1.0, 1.0]);
        assert!(dx[0].abs() < 1e-3); // saturated
        assert!((dx[2] - 1.0).abs() < 1e-6); // slope 1 at the origin
    }
}
