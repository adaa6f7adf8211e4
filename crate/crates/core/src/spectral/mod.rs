//! Fourier-domain primitives: 2-D transforms with a centered spectrum
//! layout, amplitude/phase decomposition, low/high-frequency masking, and the
//! classic amplitude-exchange augmentations built on top of them.
//!
//! All operations here are pure functions in `f64`; the spectrum layout is
//! always *centered*, i.e. the zero-frequency coefficient sits at index
//! `(H/2, W/2)` after the transform and masks are defined in that layout.

mod fourier_aug;

pub use fourier_aug::{fact_mixup, fda_swap};

use std::cell::RefCell;
use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{shape_err, Error, Result};
use crate::image::ImageTensor;

/// Amplitude and phase spectra of an image, in centered layout.
///
/// `amplitude` is elementwise non-negative, `phase` takes principal values in
/// `(-pi, pi]`. `amplitude * exp(j * phase)` inverse-transforms back to the
/// originating real image up to round-off.
#[derive(Debug, Clone)]
pub struct SpectralImage {
    amplitude: Array3<f64>,
    phase: Array3<f64>,
}

impl SpectralImage {
    /// Combine amplitude and phase arrays of identical `H x W x C` shape.
    pub fn new(amplitude: Array3<f64>, phase: Array3<f64>) -> Result<Self> {
        if amplitude.dim() != phase.dim() {
            return Err(shape_err("spectral image", amplitude.dim(), phase.dim()));
        }
        if !amplitude.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::validation(
                "amplitude must be finite and non-negative",
            ));
        }
        if !phase.iter().all(|v| v.is_finite() && v.abs() <= PI + 1e-9) {
            return Err(Error::validation("phase must lie in (-pi, pi]"));
        }
        Ok(Self { amplitude, phase })
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.amplitude.dim()
    }

    pub fn amplitude(&self) -> &Array3<f64> {
        &self.amplitude
    }

    pub fn phase(&self) -> &Array3<f64> {
        &self.phase
    }

    pub fn into_parts(self) -> (Array3<f64>, Array3<f64>) {
        (self.amplitude, self.phase)
    }

    /// Reassemble the complex spectrum `A * exp(j P)` (centered layout).
    pub fn to_complex(&self) -> Array3<Complex64> {
        let mut out = Array3::zeros(self.amplitude.dim());
        ndarray::Zip::from(&mut out)
            .and(&self.amplitude)
            .and(&self.phase)
            .for_each(|o, &a, &p| *o = Complex64::from_polar(a, p));
        out
    }
}

/// Binary mask selecting the centered low-frequency block of a spectrum.
#[derive(Debug, Clone)]
pub struct FrequencyMask {
    mask: Array2<bool>,
    ratio: f64,
}

impl FrequencyMask {
    pub fn dim(&self) -> (usize, usize) {
        self.mask.dim()
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn is_low(&self, row: usize, col: usize) -> bool {
        self.mask[[row, col]]
    }

    pub fn count_ones(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub(crate) fn check_matches(&self, dim: (usize, usize, usize), what: &str) -> Result<()> {
        if self.mask.dim() != (dim.0, dim.1) {
            return Err(shape_err(what, (dim.0, dim.1), self.mask.dim()));
        }
        Ok(())
    }
}

/// Build the centered low-frequency mask for an `H x W` spectrum.
///
/// The block of ones is a square of side `floor(ratio * min(H, W))`, centered
/// on the zero-frequency index `(H/2, W/2)`; for even sides the tie is broken
/// so that the block still contains that index. `ratio = 0` yields the empty
/// mask and `ratio = 1` the full mask.
pub fn make_low_freq_mask(h: usize, w: usize, ratio: f64) -> Result<FrequencyMask> {
    if h == 0 || w == 0 {
        return Err(Error::validation("mask dimensions must be positive"));
    }
    if !ratio.is_finite() || !(0.0..=1.0).contains(&ratio) {
        return Err(Error::validation(format!(
            "mask ratio must lie in [0, 1], got {ratio}"
        )));
    }
    let mut mask = Array2::from_elem((h, w), false);
    if ratio >= 1.0 {
        mask.fill(true);
    } else {
        let side = (ratio * h.min(w) as f64).floor() as usize;
        if side > 0 {
            let r_lo = h / 2 - side / 2;
            let c_lo = w / 2 - side / 2;
            for r in r_lo..r_lo + side {
                for c in c_lo..c_lo + side {
                    mask[[r, c]] = true;
                }
            }
        }
    }
    Ok(FrequencyMask { mask, ratio })
}

/// Split an amplitude spectrum into its masked (low) and unmasked (high)
/// parts. The two parts partition the input exactly: `low + high == A`
/// bitwise, with disjoint supports.
pub fn split_amplitude(
    amplitude: &Array3<f64>,
    mask: &FrequencyMask,
) -> Result<(Array3<f64>, Array3<f64>)> {
    mask.check_matches(amplitude.dim(), "split_amplitude")?;
    let mut low = Array3::zeros(amplitude.dim());
    let mut high = Array3::zeros(amplitude.dim());
    for ((r, c, ch), &a) in amplitude.indexed_iter() {
        if mask.is_low(r, c) {
            low[[r, c, ch]] = a;
        } else {
            high[[r, c, ch]] = a;
        }
    }
    Ok((low, high))
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_rows(buf: &mut [Complex64], h: usize, w: usize, forward: bool) {
    PLANNER.with(|planner| {
        let fft = {
            let mut planner = planner.borrow_mut();
            if forward {
                planner.plan_fft_forward(w)
            } else {
                planner.plan_fft_inverse(w)
            }
        };
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        for row in buf.chunks_exact_mut(w) {
            fft.process_with_scratch(row, &mut scratch);
        }
        debug_assert_eq!(buf.len(), h * w);
    });
}

fn transpose(buf: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); buf.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = buf[r * cols + c];
        }
    }
    out
}

/// In-place 2-D FFT of a row-major `h x w` buffer (unnormalized).
fn fft2_buffer(buf: &mut Vec<Complex64>, h: usize, w: usize, forward: bool) {
    fft_rows(buf, h, w, forward);
    let mut t = transpose(buf, h, w);
    fft_rows(&mut t, w, h, forward);
    *buf = transpose(&t, w, h);
}

fn shift_index(i: usize, n: usize) -> usize {
    (i + n / 2) % n
}

/// Move the zero-frequency coefficient to `(h/2, w/2)`.
fn fftshift2(buf: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); buf.len()];
    for r in 0..h {
        let sr = shift_index(r, h);
        for c in 0..w {
            out[sr * w + shift_index(c, w)] = buf[r * w + c];
        }
    }
    out
}

/// Inverse of [`fftshift2`].
fn ifftshift2(buf: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); buf.len()];
    for r in 0..h {
        let sr = shift_index(r, h);
        for c in 0..w {
            out[r * w + c] = buf[sr * w + shift_index(c, w)];
        }
    }
    out
}

/// Channel-wise 2-D DFT with the zero-frequency coefficient at the center,
/// returned as a complex spectrum. Building block for [`fft2`] and for the
/// spectral loss gradients.
pub fn fft2_complex(image: &ImageTensor) -> Array3<Complex64> {
    let (h, w, chans) = image.dim();
    let mut out = Array3::zeros((h, w, chans));
    for ch in 0..chans {
        let mut buf: Vec<Complex64> = (0..h * w)
            .map(|i| Complex64::new(image.data()[[i / w, i % w, ch]], 0.0))
            .collect();
        fft2_buffer(&mut buf, h, w, true);
        let shifted = fftshift2(&buf, h, w);
        for r in 0..h {
            for c in 0..w {
                out[[r, c, ch]] = shifted[r * w + c];
            }
        }
    }
    out
}

fn principal_phase(z: Complex64) -> f64 {
    let p = z.im.atan2(z.re);
    if p == -PI {
        PI
    } else {
        p
    }
}

/// Channel-wise 2-D Fourier transform split into amplitude and phase.
///
/// The transform is the unnormalized DFT; amplitude is the modulus and phase
/// the principal-value argument in `(-pi, pi]`.
pub fn fft2(image: &ImageTensor) -> SpectralImage {
    let spectrum = fft2_complex(image);
    let amplitude = spectrum.mapv(|z| z.norm());
    let phase = spectrum.mapv(principal_phase);
    SpectralImage { amplitude, phase }
}

/// Inverse transform of a centered complex spectrum; returns the real part
/// together with the largest absolute imaginary residue.
pub fn ifft2_complex(spectrum: &Array3<Complex64>) -> (Array3<f64>, f64) {
    let (h, w, chans) = spectrum.dim();
    let norm = 1.0 / (h * w) as f64;
    let mut out = Array3::zeros((h, w, chans));
    let mut residue = 0.0f64;
    for ch in 0..chans {
        let buf: Vec<Complex64> = (0..h * w).map(|i| spectrum[[i / w, i % w, ch]]).collect();
        let mut buf = ifftshift2(&buf, h, w);
        fft2_buffer(&mut buf, h, w, false);
        for r in 0..h {
            for c in 0..w {
                let z = buf[r * w + c] * norm;
                out[[r, c, ch]] = z.re;
                residue = residue.max(z.im.abs());
            }
        }
    }
    (out, residue)
}

/// Reconstruct the real image from an amplitude/phase pair.
///
/// The imaginary part of the inverse transform is discarded; for spectra that
/// came out of [`fft2`] unchanged it vanishes to round-off (the round-trip
/// tests pin `< 1e-5`), while recombined spectra (amplitude from one image,
/// phase from another) project onto the nearest real image.
pub fn ifft2(spectral: &SpectralImage) -> Result<ImageTensor> {
    let (real, _residue) = ifft2_complex(&spectral.to_complex());
    ImageTensor::new(real)
}

/// [`ifft2`] variant that also reports the discarded imaginary residue.
pub fn ifft2_with_residue(spectral: &SpectralImage) -> Result<(ImageTensor, f64)> {
    let (real, residue) = ifft2_complex(&spectral.to_complex());
    Ok((ImageTensor::new(real)?, residue))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn constant_image(h: usize, w: usize, value: f64) -> ImageTensor {
        ImageTensor::constant(h, w, 1, value).unwrap()
    }

    #[test]
    fn constant_image_has_dc_only_spectrum() {
        let img = constant_image(8, 8, 0.25);
        let spec = fft2(&img);
        for ((r, c, _), &a) in spec.amplitude().indexed_iter() {
            if (r, c) == (4, 4) {
                assert!((a - 64.0 * 0.25).abs() < 1e-9, "DC amplitude {a}");
                assert!(spec.phase()[[r, c, 0]].abs() < 1e-12);
            } else {
                assert!(a < 1e-9, "non-DC amplitude {a} at ({r},{c})");
            }
        }
    }

    #[test]
    fn dc_only_spectrum_inverts_to_constant() {
        let mut amp = Array3::zeros((8, 8, 1));
        amp[[4, 4, 0]] = 64.0 * 0.7;
        let spec = SpectralImage::new(amp, Array3::zeros((8, 8, 1))).unwrap();
        let img = ifft2(&spec).unwrap();
        for &v in img.data() {
            assert!((v - 0.7).abs() < 1e-9);
        }
    }

    #[test]
    fn round_trip_is_tight() {
        let mut rng = crate::rng::stream(3, "spectral-test");
        use rand::Rng;
        let data = Array3::from_shape_fn((6, 10, 2), |_| rng.gen::<f64>());
        let img = ImageTensor::new(data).unwrap();
        let (back, residue) = ifft2_with_residue(&fft2(&img)).unwrap();
        assert!(img.max_abs_diff(&back) < 1e-6);
        assert!(residue < 1e-5);
    }

    #[test]
    fn mask_degenerate_ratios() {
        let zero = make_low_freq_mask(8, 8, 0.0).unwrap();
        assert_eq!(zero.count_ones(), 0);
        let one = make_low_freq_mask(8, 8, 1.0).unwrap();
        assert_eq!(one.count_ones(), 64);
        let rect = make_low_freq_mask(4, 10, 1.0).unwrap();
        assert_eq!(rect.count_ones(), 40);
        assert!(make_low_freq_mask(8, 8, -0.1).is_err());
        assert!(make_low_freq_mask(8, 8, 1.1).is_err());
        assert!(make_low_freq_mask(8, 8, f64::NAN).is_err());
    }

    #[test]
    fn mask_half_ratio_is_centered_4x4_block() {
        let mask = make_low_freq_mask(8, 8, 0.5).unwrap();
        assert_eq!(mask.count_ones(), 16);
        for r in 0..8 {
            for c in 0..8 {
                let expect = (2..6).contains(&r) && (2..6).contains(&c);
                assert_eq!(mask.is_low(r, c), expect, "at ({r},{c})");
            }
        }
    }

    #[test]
    fn mask_contains_center_for_odd_sides() {
        // side floor(0.4 * 8) = 3, centered on (4, 4)
        let mask = make_low_freq_mask(8, 8, 0.4).unwrap();
        assert_eq!(mask.count_ones(), 9);
        for r in 0..8 {
            for c in 0..8 {
                let expect = (3..6).contains(&r) && (3..6).contains(&c);
                assert_eq!(mask.is_low(r, c), expect, "at ({r},{c})");
            }
        }
    }

    #[test]
    fn split_partitions_exactly() {
        let mut rng = crate::rng::stream(5, "split-test");
        use rand::Rng;
        let amp = Array3::from_shape_fn((8, 8, 2), |_| rng.gen::<f64>() * 10.0);
        let mask = make_low_freq_mask(8, 8, 0.5).unwrap();
        let (low, high) = split_amplitude(&amp, &mask).unwrap();
        for ((r, c, ch), &a) in amp.indexed_iter() {
            let (l, h) = (low[[r, c, ch]], high[[r, c, ch]]);
            assert_eq!(l + h, a);
            assert!(l == 0.0 || h == 0.0);
            assert_eq!(l != 0.0 || a == 0.0, mask.is_low(r, c) || a == 0.0);
        }

        let (low0, high0) = split_amplitude(&amp, &make_low_freq_mask(8, 8, 0.0).unwrap()).unwrap();
        assert!(low0.iter().all(|v| *v == 0.0));
        assert_eq!(high0, amp);
        let (low1, high1) = split_amplitude(&amp, &make_low_freq_mask(8, 8, 1.0).unwrap()).unwrap();
        assert_eq!(low1, amp);
        assert!(high1.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn split_rejects_shape_mismatch() {
        let amp = Array3::<f64>::zeros((8, 8, 1));
        let mask = make_low_freq_mask(4, 4, 0.5).unwrap();
        assert!(split_amplitude(&amp, &mask).is_err());
    }

    #[test]
    fn phase_stays_in_principal_range() {
        let mut rng = crate::rng::stream(11, "phase-test");
        use rand::Rng;
        let data = Array3::from_shape_fn((8, 8, 1), |_| rng.gen::<f64>());
        let spec = fft2(&ImageTensor::new(data).unwrap());
        for &p in spec.phase() {
            assert!(p > -PI && p <= PI, "phase {p} outside principal range");
        }
    }
}
