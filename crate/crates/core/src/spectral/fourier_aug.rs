//! Amplitude-exchange augmentations: full low-frequency swaps and convex
//! mixing between two images' spectra, keeping the source phase.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::image::ImageTensor;

use super::{fft2, ifft2, make_low_freq_mask, SpectralImage};

fn recombine(
    source: &ImageTensor,
    target: &ImageTensor,
    ratio: f64,
    blend: impl Fn(f64, f64) -> f64,
) -> Result<ImageTensor> {
    source.check_same_shape(target, "amplitude exchange")?;
    let (h, w, _) = source.dim();
    let mask = make_low_freq_mask(h, w, ratio)?;
    let spec_s = fft2(source);
    let spec_t = fft2(target);
    let mut amplitude = Array3::zeros(source.dim());
    for ((r, c, ch), a) in amplitude.indexed_iter_mut() {
        let a_s = spec_s.amplitude()[[r, c, ch]];
        *a = if mask.is_low(r, c) {
            blend(a_s, spec_t.amplitude()[[r, c, ch]])
        } else {
            a_s
        };
    }
    let combined = SpectralImage::new(amplitude, spec_s.phase().clone())?;
    ifft2(&combined)
}

/// Replace the source's low-frequency amplitude with the target's and invert,
/// keeping the source phase everywhere.
///
/// The inverse transform projects onto a real image, so at masked frequencies
/// whose negated index falls outside the mask the transplant is averaged with
/// the source amplitude; everywhere the mask is symmetric under frequency
/// negation the target amplitude carries over exactly.
pub fn fda_swap(source: &ImageTensor, target: &ImageTensor, ratio: f64) -> Result<ImageTensor> {
    recombine(source, target, ratio, |_, a_t| a_t)
}

/// Convex mix of the two amplitudes inside the low-frequency mask:
/// `(1 - mix) * A_source + mix * A_target`. `mix = 0` reproduces the source,
/// `mix = 1` equals [`fda_swap`].
pub fn fact_mixup(
    source: &ImageTensor,
    target: &ImageTensor,
    ratio: f64,
    mix: f64,
) -> Result<ImageTensor> {
    if !mix.is_finite() || !(0.0..=1.0).contains(&mix) {
        return Err(Error::validation(format!(
            "mix coefficient must lie in [0, 1], got {mix}"
        )));
    }
    recombine(source, target, ratio, |a_s, a_t| {
        (1.0 - mix) * a_s + mix * a_t
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;

    fn random_image(seed: u64, h: usize, w: usize, c: usize) -> ImageTensor {
        let mut rng = crate::rng::stream(seed, "aug-test");
        ImageTensor::new(Array3::from_shape_fn((h, w, c), |_| rng.gen::<f64>())).unwrap()
    }

    #[test]
    fn self_swap_is_identity() {
        let img = random_image(1, 8, 8, 1);
        let out = fda_swap(&img, &img, 0.5).unwrap();
        assert!(img.max_abs_diff(&out) < 1e-6);
    }

    #[test]
    fn zero_ratio_swap_is_identity() {
        let a = random_image(2, 8, 8, 2);
        let b = random_image(3, 8, 8, 2);
        let out = fda_swap(&a, &b, 0.0).unwrap();
        assert!(a.max_abs_diff(&out) < 1e-6);
    }

    #[test]
    fn mix_endpoints() {
        let a = random_image(4, 8, 8, 1);
        let b = random_image(5, 8, 8, 1);
        let zero = fact_mixup(&a, &b, 0.25, 0.0).unwrap();
        assert!(a.max_abs_diff(&zero) < 1e-6);
        let one = fact_mixup(&a, &b, 0.25, 1.0).unwrap();
        let swapped = fda_swap(&a, &b, 0.25).unwrap();
        assert!(one.max_abs_diff(&swapped) < 1e-9);
    }

    #[test]
    fn mix_out_of_range_is_rejected() {
        let a = random_image(6, 8, 8, 1);
        let b = random_image(7, 8, 8, 1);
        assert!(fact_mixup(&a, &b, 0.25, -0.1).is_err());
        assert!(fact_mixup(&a, &b, 0.25, 1.1).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = random_image(8, 8, 8, 1);
        let b = random_image(9, 8, 6, 1);
        assert!(fda_swap(&a, &b, 0.25).is_err());
    }
}
