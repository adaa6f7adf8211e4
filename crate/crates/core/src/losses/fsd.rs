//! Spectrum-diversity reconstruction loss.
//!
//! Compares a reconstruction against its source image with four mean-squared
//! terms: phase spectra (unweighted), raw pixels, high-frequency amplitude,
//! and low-frequency amplitude. Keeping the low-frequency weight smallest
//! relaxes that band, letting reconstructions vary in style while the phase
//! term preserves structure.

use ndarray::Array3;
use num_complex::Complex64;

use crate::error::Result;
use crate::image::ImageTensor;
use crate::spectral::{fft2_complex, ifft2_complex, FrequencyMask};

use super::FsdWeights;

const AMP_EPS: f64 = 1e-12;

fn principal_phase(z: Complex64) -> f64 {
    let p = z.im.atan2(z.re);
    if p == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        p
    }
}

/// Value of the spectrum-diversity loss.
pub fn fsd_loss(
    x: &ImageTensor,
    x_hat: &ImageTensor,
    weights: &FsdWeights,
    mask: &FrequencyMask,
) -> Result<f64> {
    fsd_impl(x, x_hat, weights, mask, false).map(|(v, _)| v)
}

/// Value and gradient with respect to the reconstruction `x_hat`.
///
/// Phase differences are taken on principal values without angular wrapping,
/// so the loss has a sharp edge where a phase crosses the branch cut at
/// `+/- pi`. The gradient treats amplitude-zero bins as locally constant.
pub fn fsd_loss_with_grad(
    x: &ImageTensor,
    x_hat: &ImageTensor,
    weights: &FsdWeights,
    mask: &FrequencyMask,
) -> Result<(f64, Array3<f64>)> {
    let (v, g) = fsd_impl(x, x_hat, weights, mask, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn fsd_impl(
    x: &ImageTensor,
    x_hat: &ImageTensor,
    weights: &FsdWeights,
    mask: &FrequencyMask,
    want_grad: bool,
) -> Result<(f64, Option<Array3<f64>>)> {
    x.check_same_shape(x_hat, "fsd_loss")?;
    mask.check_matches(x.dim(), "fsd_loss mask")?;
    weights.validate()?;

    let (h, w, chans) = x.dim();
    let n = (h * w * chans) as f64;
    let spec_x = fft2_complex(x);
    let spec_hat = fft2_complex(x_hat);

    let mut phase_mse = 0.0;
    let mut pixel_mse = 0.0;
    let mut high_mse = 0.0;
    let mut low_mse = 0.0;
    // Complex-spectrum gradient: G = dL/dRe(F_hat) + j * dL/dIm(F_hat).
    let mut spectral_grad = want_grad.then(|| Array3::<Complex64>::zeros((h, w, chans)));

    for ((r, c, ch), &z_hat) in spec_hat.indexed_iter() {
        let z = spec_x[[r, c, ch]];
        let (a, p) = (z.norm(), principal_phase(z));
        let (a_hat, p_hat) = (z_hat.norm(), principal_phase(z_hat));

        let dp = p_hat - p;
        phase_mse += dp * dp;
        let da = a_hat - a;
        let amp_weight = if mask.is_low(r, c) {
            low_mse += da * da;
            weights.lambda3
        } else {
            high_mse += da * da;
            weights.lambda2
        };

        if let Some(g) = spectral_grad.as_mut() {
            if a_hat > AMP_EPS {
                let dl_da = 2.0 * amp_weight * da / n;
                let dl_dp = 2.0 * dp / n;
                let a_sq = a_hat * a_hat;
                let g_re = dl_da * z_hat.re / a_hat + dl_dp * (-z_hat.im / a_sq);
                let g_im = dl_da * z_hat.im / a_hat + dl_dp * (z_hat.re / a_sq);
                g[[r, c, ch]] = Complex64::new(g_re, g_im);
            }
        }
    }

    for (a, b) in x.data().iter().zip(x_hat.data().iter()) {
        let d = b - a;
        pixel_mse += d * d;
    }

    let loss = (phase_mse
        + weights.lambda1 * pixel_mse
        + weights.lambda2 * high_mse
        + weights.lambda3 * low_mse)
        / n;

    let grad = spectral_grad.map(|g| {
        // The forward transform is linear, so the spatial gradient is the
        // unnormalized inverse transform of the spectral gradient.
        let (mut spatial, _) = ifft2_complex(&g);
        spatial *= (h * w) as f64;
        ndarray::Zip::from(&mut spatial)
            .and(x.data())
            .and(x_hat.data())
            .for_each(|s, &xv, &xh| {
                *s += 2.0 * weights.lambda1 * (xh - xv) / n;
            });
        spatial
    });

    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::make_low_freq_mask;
    use ndarray::Array3;
    use rand::Rng;

    fn random_image(seed: u64, h: usize, w: usize) -> ImageTensor {
        let mut rng = crate::rng::stream(seed, "fsd-test");
        ImageTensor::new(Array3::from_shape_fn((h, w, 1), |_| {
            0.05 + 0.9 * rng.gen::<f64>()
        }))
        .unwrap()
    }

    #[test]
    fn identical_inputs_give_zero() {
        let x = random_image(1, 8, 8);
        let mask = make_low_freq_mask(8, 8, 0.5).unwrap();
        let loss = fsd_loss(&x, &x, &FsdWeights::default(), &mask).unwrap();
        assert!(loss.abs() < 1e-10, "loss {loss}");
    }

    #[test]
    fn loss_is_positive_for_distinct_inputs() {
        let x = random_image(2, 8, 8);
        let y = random_image(3, 8, 8);
        let mask = make_low_freq_mask(8, 8, 0.5).unwrap();
        assert!(fsd_loss(&x, &y, &FsdWeights::default(), &mask).unwrap() > 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let x = random_image(4, 8, 8);
        let y = random_image(5, 8, 6);
        let mask = make_low_freq_mask(8, 8, 0.5).unwrap();
        assert!(fsd_loss(&x, &y, &FsdWeights::default(), &mask).is_err());
    }
}
