//! Finite-difference verification of the analytic loss gradients, the
//! closed-form 2x2 spectrum oracle, and the structural properties of the
//! spectrum-diversity loss.

use ndarray::Array3;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use stylelab_core::image::ImageTensor;
use stylelab_core::losses::{
    dice_loss, dice_loss_with_grad, fsd_loss, fsd_loss_with_grad, seg_loss, uiu_loss,
    uiu_loss_with_grad, FsdWeights, LabelMask, Prediction,
};
use stylelab_core::spectral::{fft2, ifft2, make_low_freq_mask, SpectralImage};
use stylelab_core::uncertainty::UncertaintyMap;

const FD_STEP: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ImageTensor {
    ImageTensor::new(Array3::from_shape_fn((h, w, c), |_| {
        0.05 + 0.9 * rng.gen::<f64>()
    }))
    .unwrap()
}

fn random_prediction(rng: &mut ChaCha8Rng, h: usize, w: usize, k: usize) -> Prediction {
    // softmax of random logits keeps pixels inside (0, 1) and exclusive
    let mut probs = Array3::zeros((h, w, k));
    for r in 0..h {
        for c in 0..w {
            let logits: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let maxv = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - maxv).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for i in 0..k {
                probs[[r, c, i]] = exps[i] / sum;
            }
        }
    }
    Prediction::new(probs).unwrap()
}

fn random_label(rng: &mut ChaCha8Rng, h: usize, w: usize, k: usize) -> LabelMask {
    let mut classes = ndarray::Array2::zeros((h, w));
    for v in classes.iter_mut() {
        *v = rng.gen_range(0..k);
    }
    LabelMask::from_classes(&classes, k).unwrap()
}

fn random_uncertainty(rng: &mut ChaCha8Rng, h: usize, w: usize) -> UncertaintyMap {
    UncertaintyMap::new(Array3::from_shape_fn((h, w, 1), |_| {
        0.5 + rng.gen::<f64>()
    }))
    .unwrap()
}

#[test]
fn fsd_gradient_matches_central_differences() {
    let mut rng = stylelab_core::rng::stream(100, "fsd-grad");
    let weights = FsdWeights::default();
    let mask = make_low_freq_mask(4, 4, 0.5).unwrap();
    for case in 0..20 {
        let x = random_image(&mut rng, 4, 4, 1);
        let x_hat = random_image(&mut rng, 4, 4, 1);
        let (_, grad) = fsd_loss_with_grad(&x, &x_hat, &weights, &mask).unwrap();
        for ((r, c, ch), g) in grad.indexed_iter() {
            let mut plus = x_hat.data().clone();
            plus[[r, c, ch]] += FD_STEP;
            let mut minus = x_hat.data().clone();
            minus[[r, c, ch]] -= FD_STEP;
            let lp = fsd_loss(&x, &ImageTensor::new(plus).unwrap(), &weights, &mask).unwrap();
            let lm = fsd_loss(&x, &ImageTensor::new(minus).unwrap(), &weights, &mask).unwrap();
            let fd = (lp - lm) / (2.0 * FD_STEP);
            assert!(
                rel_err(*g, fd) < 1e-4,
                "case {case} ({r},{c}): analytic {g}, fd {fd}"
            );
        }
    }
}

#[test]
fn uiu_gradient_matches_central_differences() {
    let mut rng = stylelab_core::rng::stream(101, "uiu-grad");
    for case in 0..20 {
        let pred = random_prediction(&mut rng, 4, 4, 2);
        let label = random_label(&mut rng, 4, 4, 2);
        let u = random_uncertainty(&mut rng, 4, 4);
        let (_, grad) = uiu_loss_with_grad(&pred, &label, &u).unwrap();
        for ((r, c, k), g) in grad.indexed_iter() {
            let mut plus = pred.probs().clone();
            plus[[r, c, k]] += FD_STEP;
            let mut minus = pred.probs().clone();
            minus[[r, c, k]] -= FD_STEP;
            let lp = uiu_loss(&Prediction::new(plus).unwrap(), &label, &u).unwrap();
            let lm = uiu_loss(&Prediction::new(minus).unwrap(), &label, &u).unwrap();
            let fd = (lp - lm) / (2.0 * FD_STEP);
            assert!(
                rel_err(*g, fd) < 1e-4,
                "case {case} ({r},{c},{k}): analytic {g}, fd {fd}"
            );
        }
    }
}

#[test]
fn dice_gradient_matches_central_differences() {
    let mut rng = stylelab_core::rng::stream(102, "dice-grad");
    for case in 0..20 {
        let pred = random_prediction(&mut rng, 4, 4, 2);
        let label = random_label(&mut rng, 4, 4, 2);
        let (_, grad) = dice_loss_with_grad(&pred, &label).unwrap();
        for ((r, c, k), g) in grad.indexed_iter() {
            let mut plus = pred.probs().clone();
            plus[[r, c, k]] += FD_STEP;
            let mut minus = pred.probs().clone();
            minus[[r, c, k]] -= FD_STEP;
            let lp = dice_loss(&Prediction::new(plus).unwrap(), &label).unwrap();
            let lm = dice_loss(&Prediction::new(minus).unwrap(), &label).unwrap();
            let fd = (lp - lm) / (2.0 * FD_STEP);
            assert!(
                rel_err(*g, fd) < 1e-4,
                "case {case} ({r},{c},{k}): analytic {g}, fd {fd}"
            );
        }
    }
}

#[test]
fn uiu_with_unit_weights_equals_binary_cross_entropy() {
    // Independent oracle: the textbook clamped BCE, mean over pixels and
    // classes.
    let bce = |pred: &Prediction, label: &LabelMask| -> f64 {
        let (h, w, k) = pred.dim();
        let mut total = 0.0;
        for r in 0..h {
            for c in 0..w {
                for i in 0..k {
                    let p = pred.probs()[[r, c, i]].clamp(1e-7, 1.0 - 1e-7);
                    let y = label.onehot()[[r, c, i]];
                    total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
                }
            }
        }
        total / (h * w * k) as f64
    };
    let mut rng = stylelab_core::rng::stream(103, "uiu-bce");
    for _ in 0..50 {
        let pred = random_prediction(&mut rng, 4, 4, 3);
        let label = random_label(&mut rng, 4, 4, 3);
        let u = UncertaintyMap::uniform(4, 4);
        let got = uiu_loss(&pred, &label, &u).unwrap();
        let want = bce(&pred, &label);
        assert!((got - want).abs() < 1e-10, "got {got}, want {want}");
    }
}

#[test]
fn fsd_2x2_matches_closed_form_scalar_computation() {
    // 2x2 single-channel DFT written out by hand:
    //   F(0,0) = a+b+c+d,  F(0,1) = a-b+c-d,
    //   F(1,0) = a+b-c-d,  F(1,1) = a-b-c+d
    // for pixels [[a, b], [c, d]]; all coefficients are real, so the phase
    // is 0 or pi. The centered layout puts F(0,0) at index (1,1).
    let x = [[0.8, 0.3], [0.5, 0.2]];
    let y = [[0.6, 0.4], [0.1, 0.9]];
    let coeffs = |m: [[f64; 2]; 2]| -> [f64; 4] {
        let (a, b, c, d) = (m[0][0], m[0][1], m[1][0], m[1][1]);
        [a + b + c + d, a - b + c - d, a + b - c - d, a - b - c + d]
    };
    let fx = coeffs(x);
    let fy = coeffs(y);
    let phase = |v: f64| if v >= 0.0 { 0.0 } else { std::f64::consts::PI };

    // mask ratio 0.5 -> side 1 -> only the DC bin (centered index (1,1))
    let weights = FsdWeights::default();
    let n = 4.0;
    let mut phase_mse = 0.0;
    let mut low_mse = 0.0;
    let mut high_mse = 0.0;
    for i in 0..4 {
        let dp = phase(fy[i]) - phase(fx[i]);
        phase_mse += dp * dp / n;
        let da = (fy[i].abs() - fx[i].abs()).powi(2);
        if i == 0 {
            low_mse += da / n;
        } else {
            high_mse += da / n;
        }
    }
    let mut pixel_mse = 0.0;
    for r in 0..2 {
        for c in 0..2 {
            pixel_mse += (y[r][c] - x[r][c]).powi(2) / n;
        }
    }
    let want = phase_mse
        + weights.lambda1 * pixel_mse
        + weights.lambda2 * high_mse
        + weights.lambda3 * low_mse;

    let img_x = ImageTensor::new(Array3::from_shape_fn((2, 2, 1), |(r, c, _)| x[r][c])).unwrap();
    let img_y = ImageTensor::new(Array3::from_shape_fn((2, 2, 1), |(r, c, _)| y[r][c])).unwrap();
    let mask = make_low_freq_mask(2, 2, 0.5).unwrap();
    assert_eq!(mask.count_ones(), 1);
    assert!(mask.is_low(1, 1));
    let got = fsd_loss(&img_x, &img_y, &weights, &mask).unwrap();
    assert!(
        (got - want).abs() < 1e-10,
        "got {got}, closed form {want}"
    );
}

#[test]
fn fsd_zero_iff_identical() {
    let mut rng = stylelab_core::rng::stream(104, "fsd-zero");
    let x = random_image(&mut rng, 8, 8, 1);
    let mask = make_low_freq_mask(8, 8, 0.5).unwrap();
    let w = FsdWeights::default();
    assert!(fsd_loss(&x, &x, &w, &mask).unwrap() < 1e-10);
    let y = random_image(&mut rng, 8, 8, 1);
    assert!(fsd_loss(&x, &y, &w, &mask).unwrap() > 1e-10);
}

/// Bump the amplitude of bin `(r, c)` and its negation mirror along their
/// existing phases, producing a real image perturbation of fixed spectral
/// energy.
fn amplitude_bump(x: &ImageTensor, r: usize, c: usize, eps: f64) -> ImageTensor {
    let spec = fft2(x);
    let (h, w, _) = x.dim();
    let (mut amp, phase) = spec.into_parts();
    let nr = (2 * (h / 2) + h - r) % h;
    let nc = (2 * (w / 2) + w - c) % w;
    assert!((r, c) != (nr, nc), "pick a non-self-conjugate bin");
    amp[[r, c, 0]] += eps;
    amp[[nr, nc, 0]] += eps;
    ifft2(&SpectralImage::new(amp, phase).unwrap()).unwrap()
}

#[test]
fn low_frequency_perturbations_cost_less_when_lambda2_exceeds_lambda3() {
    // Equal-energy amplitude bumps: one inside the mask, one outside. With
    // lambda2 > lambda3 the masked (low-frequency) bump must incur the
    // strictly smaller loss; with the weights swapped the order flips.
    let mut rng = stylelab_core::rng::stream(105, "fsd-argmin");
    let x = random_image(&mut rng, 8, 8, 1);
    let mask = make_low_freq_mask(8, 8, 0.5).unwrap();
    assert!(mask.is_low(3, 3) && mask.is_low(5, 5));
    assert!(!mask.is_low(0, 1) && !mask.is_low(0, 7));

    let eps = 0.5;
    let x_low = amplitude_bump(&x, 3, 3, eps);
    let x_high = amplitude_bump(&x, 0, 1, eps);

    let weights = FsdWeights::default();
    let l_low = fsd_loss(&x, &x_low, &weights, &mask).unwrap();
    let l_high = fsd_loss(&x, &x_high, &weights, &mask).unwrap();
    assert!(
        l_low < l_high,
        "low-band perturbation should be cheaper: {l_low} vs {l_high}"
    );

    let swapped = FsdWeights::new(weights.lambda1, weights.lambda3, weights.lambda2, 0.99).unwrap();
    let l_low_swapped = fsd_loss(&x, &x_low, &swapped, &mask).unwrap();
    let l_high_swapped = fsd_loss(&x, &x_high, &swapped, &mask).unwrap();
    assert!(l_high_swapped < l_low_swapped);
}

#[test]
fn seg_loss_matches_independently_recomputed_parts() {
    let mut rng = stylelab_core::rng::stream(106, "seg-sum");
    let pred = random_prediction(&mut rng, 4, 4, 3);
    let label = random_label(&mut rng, 4, 4, 3);
    let u = random_uncertainty(&mut rng, 4, 4);
    let total = seg_loss(&pred, &label, &u).unwrap();
    let parts = uiu_loss(&pred, &label, &u).unwrap() + dice_loss(&pred, &label).unwrap();
    assert!((total - parts).abs() < 1e-12);
}
