//! Optimizers over [`Parameterized`] models. State buffers are allocated on
//! first use and keyed by the model's fixed parameter-visit order.

use super::Parameterized;

/// Stochastic gradient descent with classical momentum.
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr: lr as f32,
            momentum: momentum as f32,
            velocity: Vec::new(),
        }
    }

    /// Apply one update. `grad_scale` is multiplied into the raw gradient
    /// buffers (typically `1 / batch_size`, negative for ascent).
    pub fn step(&mut self, model: &mut dyn Parameterized, grad_scale: f32) {
        let first = self.velocity.is_empty();
        let mut idx = 0usize;
        let velocity = &mut self.velocity;
        let (lr, momentum) = (self.lr, self.momentum);
        model.visit_params(&mut |w, g| {
            if first {
                velocity.push(vec![0.0; w.len()]);
            }
            let v = &mut velocity[idx];
            assert_eq!(v.len(), w.len(), "parameter layout changed");
            for i in 0..w.len() {
                v[i] = momentum * v[i] + g[i] * grad_scale;
                w[i] -= lr * v[i];
            }
            idx += 1;
        });
    }
}

/// Adam with bias correction.
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr: lr as f32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, model: &mut dyn Parameterized, grad_scale: f32) {
        self.t += 1;
        let first = self.m.is_empty();
        let mut idx = 0usize;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (m_state, v_state) = (&mut self.m, &mut self.v);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        model.visit_params(&mut |w, g| {
            if first {
                m_state.push(vec![0.0; w.len()]);
                v_state.push(vec![0.0; w.len()]);
            }
            let m = &mut m_state[idx];
            let v = &mut v_state[idx];
            assert_eq!(m.len(), w.len(), "parameter layout changed");
            for i in 0..w.len() {
                let gi = g[i] * grad_scale;
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            idx += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quad {
        w: Vec<f32>,
        g: Vec<f32>,
    }

    impl Parameterized for Quad {
        fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f32], &mut [f32])) {
            f(&mut self.w, &mut self.g);
        }
    }

    // Minimize f(w) = 0.5 * |w|^2; gradient is w.
    fn fill_grad(q: &mut Quad) {
        let w = q.w.clone();
        q.g.copy_from_slice(&w);
    }

    #[test]
    fn sgd_descends_quadratic() {
        let mut q = Quad {
            w: vec![1.0, -2.0, 0.5],
            g: vec![0.0; 3],
        };
        let mut opt = Sgd::new(0.1, 0.9);
        for _ in 0..300 {
            fill_grad(&mut q);
            opt.step(&mut q, 1.0);
        }
        assert!(q.w.iter().all(|v| v.abs() < 1e-3), "{:?}", q.w);
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut q = Quad {
            w: vec![1.0, -2.0, 0.5],
            g: vec![0.0; 3],
        };
        let mut opt = Adam::new(0.05);
        for _ in 0..400 {
            fill_grad(&mut q);
            opt.step(&mut q, 1.0);
        }
        assert!(q.w.iter().all(|v| v.abs() < 1e-2), "{:?}", q.w);
    }

    #[test]
    fn negative_scale_ascends() {
        let mut q = Quad {
            w: vec![0.5],
            g: vec![0.0],
        };
        let mut opt = Sgd::new(0.1, 0.0);
        for _ in 0..10 {
            fill_grad(&mut q);
            opt.step(&mut q, -1.0);
        }
        assert!(q.w[0] > 0.5);
    }
}
