//! Deterministic multi-domain synthetic segmentation benchmark.
//!
//! Samples are nested ellipses (an inner disc strictly inside an outer one)
//! rendered with smooth intensity profiles over a textured background.
//! Domains share geometry when given the same geometry seed and differ by a
//! controlled style shift: per-radius gains on the low-frequency amplitude
//! plus brightness/contrast jitter. Labels are the exact rasterized masks
//! and never pass through the styling.

mod dataset;

pub use dataset::{
    load_dataset, save_dataset, DatasetManifest, DomainManifest, LoadedBenchmark, LoadedDomain,
    Sample, SampleEntry,
};

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::LabelMask;
use crate::rng::item_stream;
use crate::spectral::{fft2, ifft2, make_low_freq_mask, SpectralImage};

/// Class labels of the benchmark.
pub const CLASS_BACKGROUND: usize = 0;
pub const CLASS_OUTER: usize = 1;
pub const CLASS_INNER: usize = 2;
pub const NUM_CLASSES: usize = 3;

/// One benchmark domain: a named style applied over shared geometry.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DomainSpec {
    pub name: String,
    /// Seed of the geometry stream; domains sharing it get identical shapes
    /// and labels per sample id.
    pub geometry_seed: u64,
    /// Seed of the per-image style jitter stream.
    pub style_seed: u64,
    /// Per-radius gains applied to the masked low-frequency amplitude, from
    /// the spectrum center outward. All ones (or empty) is the identity.
    pub gain_profile: Vec<f64>,
    /// Fraction of the spectrum treated as the styled low-frequency band.
    pub band_ratio: f64,
    /// Additive brightness jitter range `[lo, hi]`.
    pub brightness: (f64, f64),
    /// Multiplicative contrast jitter range `[lo, hi]` about the image mean.
    pub contrast: (f64, f64),
    /// Std of the white texture noise in the base render.
    pub texture_level: f64,
}

impl DomainSpec {
    /// Identity-styled domain (used as the source domain).
    pub fn identity(name: &str, geometry_seed: u64, texture_level: f64) -> Self {
        Self {
            name: name.to_string(),
            geometry_seed,
            style_seed: 0,
            gain_profile: Vec::new(),
            band_ratio: 0.1,
            brightness: (0.0, 0.0),
            contrast: (1.0, 1.0),
            texture_level,
        }
    }

    pub fn is_identity_style(&self) -> bool {
        (self.gain_profile.is_empty() || self.gain_profile.iter().all(|g| *g == 1.0))
            && self.brightness == (0.0, 0.0)
            && self.contrast == (1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.band_ratio) {
            return Err(Error::validation("band_ratio must lie in [0, 1]"));
        }
        if self.gain_profile.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(Error::validation("gain profile must be non-negative"));
        }
        if self.brightness.0 > self.brightness.1 || self.contrast.0 > self.contrast.1 {
            return Err(Error::validation("jitter ranges must be ordered"));
        }
        if self.contrast.0 <= 0.0 {
            return Err(Error::validation("contrast must stay positive"));
        }
        if self.texture_level < 0.0 {
            return Err(Error::validation("texture level must be non-negative"));
        }
        Ok(())
    }
}

/// One generated sample.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub image: ImageTensor,
    pub label: LabelMask,
    pub domain: String,
    pub id: u64,
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    /// Normalized elliptical radius: 1 on the boundary, < 1 inside.
    fn norm(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.theta.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt()
    }

    fn boundary_point(&self, t: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let (u, v) = (self.a * t.cos(), self.b * t.sin());
        (self.cx + c * u - s * v, self.cy + s * u + c * v)
    }
}

fn contains(outer: &Ellipse, inner: &Ellipse, margin: f64) -> bool {
    (0..64).all(|k| {
        let t = k as f64 / 64.0 * std::f64::consts::TAU;
        let (x, y) = inner.boundary_point(t);
        outer.norm(x, y) < 1.0 - margin
    })
}

const CONTAINMENT_RETRIES: usize = 50;

fn sample_geometry(rng: &mut ChaCha8Rng, size: f64) -> Result<(Ellipse, Ellipse)> {
    for _ in 0..CONTAINMENT_RETRIES {
        let outer = Ellipse {
            cx: size * rng.gen_range(0.38..0.62),
            cy: size * rng.gen_range(0.38..0.62),
            a: size * rng.gen_range(0.16..0.27),
            b: size * rng.gen_range(0.16..0.27),
            theta: rng.gen_range(0.0..std::f64::consts::PI),
        };
        let scale = rng.gen_range(0.42..0.62);
        let max_shift = (outer.a.min(outer.b)) * (1.0 - scale) * 0.5;
        let inner = Ellipse {
            cx: outer.cx + rng.gen_range(-max_shift..=max_shift),
            cy: outer.cy + rng.gen_range(-max_shift..=max_shift),
            a: outer.a * scale,
            b: outer.b * scale,
            theta: rng.gen_range(0.0..std::f64::consts::PI),
        };
        if contains(&outer, &inner, 0.08) {
            return Ok((outer, inner));
        }
    }
    Err(Error::validation(
        "could not place the inner ellipse inside the outer one",
    ))
}

/// Soft coverage ramp around the boundary (`f = 1`); labels use the exact
/// `f <= 1` membership.
fn coverage(f: f64, width: f64) -> f64 {
    ((1.0 + width * 0.5 - f) / width).clamp(0.0, 1.0)
}

/// Render the unstyled base image and its exact label for `(spec, id)`.
/// Only the geometry seed and texture level enter here, so domains sharing
/// them produce identical base renders and labels.
fn render_base(spec: &DomainSpec, id: u64, size: usize) -> Result<(ImageTensor, LabelMask)> {
    let mut geom = item_stream(spec.geometry_seed, "geometry", id);
    let s = size as f64;
    let (outer, inner) = sample_geometry(&mut geom, s)?;

    // smooth illumination: a few random low-frequency cosine waves
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                geom.gen_range(0.5..2.0) / s, // cycles per pixel
                geom.gen_range(0.5..2.0) / s,
                geom.gen_range(0.0..std::f64::consts::TAU),
                geom.gen_range(0.015..0.04), // amplitude
            )
        })
        .collect();
    let base_bg = geom.gen_range(0.30..0.40);
    let ring_level = geom.gen_range(0.58..0.66);
    let core_level = geom.gen_range(0.80..0.88);

    let mut texture = item_stream(spec.geometry_seed, "texture", id);
    let edge = 1.8 / outer.a.min(outer.b); // ~1.8 px transition in f units

    let mut data = Array3::zeros((size, size, 1));
    let mut classes = Array2::zeros((size, size));
    for r in 0..size {
        for c in 0..size {
            let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
            let mut v = base_bg;
            for (fx, fy, ph, amp) in &waves {
                v += amp * (std::f64::consts::TAU * (fx * x + fy * y) + ph).cos();
            }
            let f_out = outer.norm(x, y);
            let f_in = inner.norm(x, y);
            let ring = ring_level + 0.04 * (1.0 - f_out);
            let core = core_level - 0.03 * f_in;
            v = v + (ring - v) * coverage(f_out, edge);
            v = v + (core - v) * coverage(f_in, edge * 2.0);
            v += spec.texture_level * crate::nn::init::normal_sample(&mut texture);
            data[[r, c, 0]] = v.clamp(0.02, 0.98);
            classes[[r, c]] = if f_in <= 1.0 {
                CLASS_INNER
            } else if f_out <= 1.0 {
                CLASS_OUTER
            } else {
                CLASS_BACKGROUND
            };
        }
    }
    Ok((
        ImageTensor::new(data)?,
        LabelMask::from_classes(&classes, NUM_CLASSES)?,
    ))
}

/// Scale the masked low-frequency amplitude by the spec's radial gain
/// profile, apply brightness/contrast jitter from `rng`, and clamp to
/// `[0, 1]`. The phase spectrum is untouched.
pub fn apply_style_shift(
    image: &ImageTensor,
    spec: &DomainSpec,
    rng: &mut ChaCha8Rng,
) -> Result<ImageTensor> {
    spec.validate()?;
    let (h, w, _) = image.dim();

    let spectral_identity = spec.gain_profile.is_empty() || spec.gain_profile.iter().all(|g| *g == 1.0);
    let mut shifted = if spectral_identity {
        image.clone()
    } else {
        let mask = make_low_freq_mask(h, w, spec.band_ratio)?;
        let spec_img = fft2(image);
        let (mut amp, phase) = spec_img.into_parts();
        let (ch, cw) = (h / 2, w / 2);
        let side = mask.count_ones() as f64; // square: side^2 ones
        let half_extent = (side.sqrt() / 2.0).max(1.0);
        let bins = spec.gain_profile.len();
        for ((r, c, _), a) in amp.indexed_iter_mut() {
            if !mask.is_low(r, c) {
                continue;
            }
            let dr = r as f64 - ch as f64;
            let dc = c as f64 - cw as f64;
            let radius = (dr * dr + dc * dc).sqrt() / half_extent;
            let bin = ((radius * bins as f64) as usize).min(bins - 1);
            *a *= spec.gain_profile[bin];
        }
        ifft2(&SpectralImage::new(amp, phase)?)?
    };

    let brightness = if spec.brightness.0 == spec.brightness.1 {
        spec.brightness.0
    } else {
        rng.gen_range(spec.brightness.0..=spec.brightness.1)
    };
    let contrast = if spec.contrast.0 == spec.contrast.1 {
        spec.contrast.0
    } else {
        rng.gen_range(spec.contrast.0..=spec.contrast.1)
    };
    if brightness != 0.0 || contrast != 1.0 {
        let mean = shifted.data().iter().sum::<f64>() / shifted.data().len() as f64;
        shifted = ImageTensor::new(
            shifted
                .data()
                .mapv(|v| contrast * (v - mean) + mean + brightness),
        )?;
    }
    Ok(shifted.clamped())
}

/// Generate `n` samples of a domain at the given image size.
pub fn generate_domain(spec: &DomainSpec, n: usize, image_size: usize) -> Result<Vec<SampleRecord>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::validation("need at least one sample"));
    }
    if image_size < 32 {
        return Err(Error::validation("image size must be at least 32"));
    }
    (0..n as u64)
        .map(|id| {
            let (base, label) = render_base(spec, id, image_size)?;
            let mut style_rng = item_stream(spec.style_seed, "style", id);
            let image = if spec.is_identity_style() {
                base
            } else {
                apply_style_shift(&base, spec, &mut style_rng)?
            };
            Ok(SampleRecord {
                image,
                label,
                domain: spec.name.clone(),
                id,
            })
        })
        .collect()
}

/// Benchmark-level generation parameters: one identity-styled source domain
/// plus several style-shifted target domains.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BenchmarkSpec {
    pub image_size: usize,
    pub source_train: usize,
    pub source_val: usize,
    pub target_domains: usize,
    pub target_samples: usize,
    pub geometry_seed: u64,
    pub style_seed: u64,
    /// Low-frequency band used both for the style shifts.
    pub band_ratio: f64,
    /// Domain-level radial gains are drawn log-uniformly from this range.
    pub gain_range: (f64, f64),
    pub radial_bins: usize,
    /// Domain-level brightness shift magnitude; per-image jitter is a tenth.
    pub brightness_shift: f64,
    pub contrast_jitter: f64,
    pub texture_level: f64,
    /// Fresh geometry for targets (unseen shapes); setting this false reuses
    /// the source geometry stream, giving style-only paired domains.
    pub fresh_target_geometry: bool,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            image_size: 128,
            source_train: 200,
            source_val: 50,
            target_domains: 3,
            target_samples: 50,
            geometry_seed: 11,
            style_seed: 23,
            band_ratio: 0.1,
            gain_range: (0.55, 1.8),
            radial_bins: 4,
            brightness_shift: 0.16,
            contrast_jitter: 0.015,
            texture_level: 0.03,
            fresh_target_geometry: true,
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 32 {
            return Err(Error::validation("image size must be at least 32"));
        }
        if self.source_train == 0 || self.source_val == 0 || self.target_samples == 0 {
            return Err(Error::validation("sample counts must be positive"));
        }
        if self.target_domains == 0 {
            return Err(Error::validation("need at least one target domain"));
        }
        if self.radial_bins == 0 {
            return Err(Error::validation("need at least one radial bin"));
        }
        if self.gain_range.0 <= 0.0 || self.gain_range.0 > self.gain_range.1 {
            return Err(Error::validation("gain range must be positive and ordered"));
        }
        Ok(())
    }

    /// The source domain: identity style over the base geometry stream.
    pub fn source_domain(&self) -> DomainSpec {
        DomainSpec::identity("source", self.geometry_seed, self.texture_level)
    }

    /// The `idx`-th (1-based) target domain, with its style derived
    /// deterministically from the benchmark style seed.
    pub fn target_domain(&self, idx: usize) -> DomainSpec {
        let style_seed = self.style_seed.wrapping_add(idx as u64);
        let mut style = crate::rng::stream(style_seed, "domain-style");
        let (lo, hi) = self.gain_range;
        let gain_profile: Vec<f64> = (0..self.radial_bins)
            .map(|_| (style.gen_range(lo.ln()..=hi.ln())).exp())
            .collect();
        let base_brightness = style.gen_range(-self.brightness_shift..=self.brightness_shift);
        let jitter = self.brightness_shift * 0.1;
        DomainSpec {
            name: format!("target{idx}"),
            geometry_seed: if self.fresh_target_geometry {
                self.geometry_seed.wrapping_add(1000 * idx as u64)
            } else {
                self.geometry_seed
            },
            style_seed,
            gain_profile,
            band_ratio: self.band_ratio,
            brightness: (base_brightness - jitter, base_brightness + jitter),
            contrast: (1.0 - self.contrast_jitter, 1.0 + self.contrast_jitter),
            texture_level: self.texture_level,
        }
    }

    pub fn domains(&self) -> Vec<(DomainSpec, usize)> {
        let mut out = vec![(self.source_domain(), self.source_train + self.source_val)];
        for idx in 1..=self.target_domains {
            out.push((self.target_domain(idx), self.target_samples));
        }
        out
    }
}
