//! Finite-difference gradient checking shared by the layer tests.

use super::tensor::Tensor;
use super::{zero_grads, Parameterized};

fn target_weight(i: usize) -> f64 {
    (i as f64 * 0.7311 + 0.31).sin()
}

fn scalar_loss(y: &Tensor) -> f64 {
    y.data
        .iter()
        .enumerate()
        .map(|(i, v)| *v as f64 * target_weight(i))
        .sum()
}

fn loss_grad(y: &Tensor) -> Tensor {
    let mut g = y.clone();
    for (i, v) in g.data.iter_mut().enumerate() {
        *v = target_weight(i) as f32;
    }
    g
}

/// Check a layer's input and parameter gradients against central finite
/// differences of `loss(run(layer, x))` with `loss` a fixed linear probe.
pub(crate) fn fd_check<L: Parameterized>(
    layer: &mut L,
    x: &Tensor,
    run: &mut dyn FnMut(&mut L, &Tensor) -> Tensor,
    back: &mut dyn FnMut(&mut L, &Tensor) -> Tensor,
) {
    let h = 1e-2f32;
    let tol = |a: f64, b: f64| 1e-3 + 2e-2 * a.abs().max(b.abs());

    let y = run(layer, x);
    let dy = loss_grad(&y);
    zero_grads(layer);
    let dx = back(layer, &dy);

    // input gradient
    for i in 0..x.data.len() {
        let mut xp = x.clone();
        xp.data[i] += h;
        let mut xm = x.clone();
        xm.data[i] -= h;
        let fd = (scalar_loss(&run(layer, &xp)) - scalar_loss(&run(layer, &xm))) / (2.0 * h as f64);
        let a = dx.data[i] as f64;
        assert!(
            (fd - a).abs() < tol(fd, a),
            "input grad {i}: fd {fd}, analytic {a}"
        );
    }

    // parameter gradients
    let mut grads: Vec<Vec<f32>> = Vec::new();
    layer.visit_params(&mut |_, g| grads.push(g.to_vec()));
    for (tensor_idx, tensor_grads) in grads.iter().enumerate() {
        for j in 0..tensor_grads.len() {
            let nudge = |layer: &mut L, d: f32| {
                let mut k = 0usize;
                layer.visit_params(&mut |w, _| {
                    if k == tensor_idx {
                        w[j] += d;
                    }
                    k += 1;
                });
            };
            nudge(layer, h);
            let lp = scalar_loss(&run(layer, x));
            nudge(layer, -2.0 * h);
            let lm = scalar_loss(&run(layer, x));
            nudge(layer, h);
            let fd = (lp - lm) / (2.0 * h as f64);
            let a = tensor_grads[j] as f64;
            assert!(
                (fd - a).abs() < tol(fd, a),
                "param grad ({tensor_idx},{j}): fd {fd}, analytic {a}"
            );
        }
    }
}
