//! Stochastic-forward-pass uncertainty estimation and the attention-region
//! algebra that reweights it.
//!
//! Uncertainty is the per-pixel entropy of the mean prediction over several
//! dropout-active forward passes on noise-perturbed copies of the *original*
//! image (never the style-augmented one, which would conflate style-induced
//! difficulty with inherent difficulty). Pixels that were segmented correctly
//! on the original image but break under style augmentation get their
//! uncertainty amplified; pixels wrongly predicted on both get it damped.

use ndarray::{Array2, Array3};
use rand::RngCore;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};
use crate::image::ImageTensor;
use crate::losses::{LabelMask, Prediction};

/// Per-pixel non-negative weight map of shape `H x W x U`, where `U` is
/// either `1` (broadcast over classes) or the class count.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    map: Array3<f64>,
}

impl UncertaintyMap {
    pub fn new(map: Array3<f64>) -> Result<Self> {
        if !map.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::validation(
                "uncertainty entries must be finite and non-negative",
            ));
        }
        Ok(Self { map })
    }

    /// All-ones map, the neutral weighting.
    pub fn uniform(h: usize, w: usize) -> Self {
        Self {
            map: Array3::from_elem((h, w, 1), 1.0),
        }
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.map.dim()
    }

    pub fn map(&self) -> &Array3<f64> {
        &self.map
    }

    /// Rescale so the mean entry is one, keeping the loss magnitude
    /// comparable to an unweighted cross-entropy. A map that is (numerically)
    /// all zero rescales to the uniform map.
    pub fn normalized_to_unit_mean(&self) -> Self {
        let mean = self.map.iter().sum::<f64>() / self.map.len() as f64;
        if mean < 1e-8 {
            let (h, w, _) = self.map.dim();
            return Self::uniform(h, w);
        }
        Self {
            map: &self.map / mean,
        }
    }

    pub fn max_entry(&self) -> f64 {
        self.map.iter().copied().fold(0.0, f64::max)
    }
}

/// Disjoint per-class pixel sets produced by [`attention_regions`].
#[derive(Debug, Clone)]
pub struct AttentionRegions {
    more: Array3<bool>,
    less: Array3<bool>,
}

impl AttentionRegions {
    pub fn dim(&self) -> (usize, usize, usize) {
        self.more.dim()
    }

    /// Pixels correct on the original image but broken by the style shift.
    pub fn more(&self) -> &Array3<bool> {
        &self.more
    }

    /// Pixels wrongly predicted on both the original and augmented image.
    pub fn less(&self) -> &Array3<bool> {
        &self.less
    }

    pub fn is_empty(&self) -> bool {
        !self.more.iter().any(|m| *m) && !self.less.iter().any(|l| *l)
    }
}

/// Model interface used by [`mc_uncertainty`]: anything that maps an image to
/// per-class probabilities, optionally with stochastic layers active.
pub trait StochasticSegmenter {
    /// Per-class probability map for `image`. With `stochastic` set, dropout
    /// (or any other stochastic layer) must be active.
    fn predict_probs(
        &mut self,
        image: &ImageTensor,
        stochastic: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Prediction>;

    /// Whether the model has stochastic layers at all.
    fn has_stochastic_layers(&self) -> bool;
}

/// Entropy of the mean prediction over `passes` stochastic forward passes on
/// Gaussian-perturbed copies of `image`.
///
/// Model weights are left untouched; only the RNG advances. The result lies
/// in `[0, ln K]` per pixel.
pub fn mc_uncertainty(
    model: &mut dyn StochasticSegmenter,
    image: &ImageTensor,
    passes: u32,
    noise_std: f64,
    rng: &mut dyn RngCore,
) -> Result<UncertaintyMap> {
    if passes < 2 {
        return Err(Error::validation(format!(
            "at least 2 stochastic passes required, got {passes}"
        )));
    }
    if !noise_std.is_finite() || noise_std < 0.0 {
        return Err(Error::validation("noise_std must be non-negative"));
    }
    if !model.has_stochastic_layers() && noise_std == 0.0 {
        log::warn!(
            "model has no stochastic layers and noise_std is zero; \
             uncertainty degenerates to the deterministic prediction entropy"
        );
    }

    let normal = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut mean: Option<Array3<f64>> = None;
    for _ in 0..passes {
        let noisy = if noise_std > 0.0 {
            ImageTensor::new(image.data().mapv(|v| v + normal.sample(rng)))?
        } else {
            image.clone()
        };
        let probs = model.predict_probs(&noisy, true, rng)?;
        match mean.as_mut() {
            Some(m) => *m += probs.probs(),
            None => mean = Some(probs.probs().clone()),
        }
    }
    let mut mean = mean.expect("passes >= 2");
    mean /= passes as f64;

    let (h, w, _) = mean.dim();
    let mut entropy = Array3::zeros((h, w, 1));
    for r in 0..h {
        for c in 0..w {
            let mut e = 0.0;
            for p in mean.slice(ndarray::s![r, c, ..]).iter() {
                if *p > 1e-12 {
                    e -= p * p.ln();
                }
            }
            entropy[[r, c, 0]] = e.max(0.0);
        }
    }
    UncertaintyMap::new(entropy)
}

/// Classify pixels by how the hard predictions on the original (`pred`) and
/// style-augmented (`pred_aug`) image relate to the label.
///
/// Per class: `more = P and y and not P_aug` (correct until the style shift),
/// `less = P and P_aug and not y` (wrong on both). The two sets are disjoint
/// by construction since one requires `P_aug` and the other its complement.
pub fn attention_regions(
    pred: &LabelMask,
    pred_aug: &LabelMask,
    label: &LabelMask,
) -> Result<AttentionRegions> {
    if pred.dim() != pred_aug.dim() || pred.dim() != label.dim() {
        return Err(shape_err("attention_regions", pred.dim(), pred_aug.dim()));
    }
    let dim = pred.dim();
    let mut more = Array3::from_elem(dim, false);
    let mut less = Array3::from_elem(dim, false);
    for ((r, c, k), m) in more.indexed_iter_mut() {
        let p = pred.onehot()[[r, c, k]] != 0.0;
        let p_aug = pred_aug.onehot()[[r, c, k]] != 0.0;
        let y = label.onehot()[[r, c, k]] != 0.0;
        *m = p && y && !p_aug;
        less[[r, c, k]] = p && p_aug && !y;
    }
    Ok(AttentionRegions { more, less })
}

/// Scale the uncertainty map by `rho` on more-attention pixels and `sigma` on
/// less-attention pixels, per class. The input map is not modified.
pub fn reweight(
    u: &UncertaintyMap,
    regions: &AttentionRegions,
    rho: f64,
    sigma: f64,
) -> Result<UncertaintyMap> {
    if !(rho >= 1.0 && (0.0..=1.0).contains(&sigma) && sigma > 0.0) {
        return Err(Error::validation(format!(
            "expected rho >= 1 >= sigma > 0, got rho = {rho}, sigma = {sigma}"
        )));
    }
    let (h, w, k) = regions.dim();
    let (uh, uw, uk) = u.dim();
    if (uh, uw) != (h, w) || (uk != 1 && uk != k) {
        return Err(shape_err("reweight", (h, w, k), u.dim()));
    }
    let mut out = Array3::zeros((h, w, k));
    for ((r, c, i), o) in out.indexed_iter_mut() {
        let base = u.map()[[r, c, if uk == 1 { 0 } else { i }]];
        let in_more = regions.more[[r, c, i]];
        let in_less = regions.less[[r, c, i]];
        assert!(
            !(in_more && in_less),
            "attention regions overlap at ({r},{c},{i})"
        );
        *o = if in_more {
            base * rho
        } else if in_less {
            base * sigma
        } else {
            base
        };
    }
    UncertaintyMap::new(out)
}

/// Hard per-class Dice between two one-hot masks; both-empty counts as 1.
pub fn hard_dice(pred: &LabelMask, label: &LabelMask, class: usize) -> f64 {
    let (h, w, _) = pred.dim();
    let mut inter = 0.0;
    let mut p_sum = 0.0;
    let mut y_sum = 0.0;
    for r in 0..h {
        for c in 0..w {
            let p = pred.onehot()[[r, c, class]];
            let y = label.onehot()[[r, c, class]];
            inter += p * y;
            p_sum += p;
            y_sum += y;
        }
    }
    if p_sum + y_sum == 0.0 {
        1.0
    } else {
        2.0 * inter / (p_sum + y_sum)
    }
}

/// Per-pixel entropy map of a single prediction (convenience for previews).
pub fn prediction_entropy(pred: &Prediction) -> Array2<f64> {
    let (h, w, k) = pred.dim();
    let mut out = Array2::zeros((h, w));
    for r in 0..h {
        for c in 0..w {
            let mut e = 0.0;
            for i in 0..k {
                let p = pred.probs()[[r, c, i]];
                if p > 1e-12 {
                    e -= p * p.ln();
                }
            }
            out[[r, c]] = e.max(0.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr3;

    struct ConstModel {
        probs: Array3<f64>,
    }

    impl StochasticSegmenter for ConstModel {
        fn predict_probs(
            &mut self,
            _image: &ImageTensor,
            _stochastic: bool,
            _rng: &mut dyn RngCore,
        ) -> Result<Prediction> {
            Prediction::new(self.probs.clone())
        }

        fn has_stochastic_layers(&self) -> bool {
            false
        }
    }

    #[test]
    fn constant_half_probs_give_log2_entropy() {
        let mut model = ConstModel {
            probs: Array3::from_elem((2, 2, 2), 0.5),
        };
        let img = ImageTensor::constant(2, 2, 1, 0.3).unwrap();
        let mut rng = crate::rng::stream(1, "mc");
        let u = mc_uncertainty(&mut model, &img, 4, 0.05, &mut rng).unwrap();
        for &v in u.map() {
            assert!((v - (2.0f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_predictions_give_zero_entropy() {
        let mut probs = Array3::zeros((2, 2, 2));
        for r in 0..2 {
            for c in 0..2 {
                probs[[r, c, 0]] = 1.0;
            }
        }
        let mut model = ConstModel { probs };
        let img = ImageTensor::constant(2, 2, 1, 0.3).unwrap();
        let mut rng = crate::rng::stream(2, "mc");
        let u = mc_uncertainty(&mut model, &img, 4, 0.05, &mut rng).unwrap();
        assert!(u.max_entry() < 1e-9);
    }

    #[test]
    fn too_few_passes_rejected() {
        let mut model = ConstModel {
            probs: Array3::from_elem((2, 2, 2), 0.5),
        };
        let img = ImageTensor::constant(2, 2, 1, 0.3).unwrap();
        let mut rng = crate::rng::stream(3, "mc");
        assert!(mc_uncertainty(&mut model, &img, 1, 0.05, &mut rng).is_err());
    }

    fn one_pixel_mask(v: bool) -> LabelMask {
        LabelMask::new(arr3(&[[[if v { 1.0 } else { 0.0 }]]])).unwrap()
    }

    #[test]
    fn truth_table_matches_set_expressions() {
        for bits in 0..8u8 {
            let p = bits & 1 != 0;
            let p_aug = bits & 2 != 0;
            let y = bits & 4 != 0;
            let regions = attention_regions(
                &one_pixel_mask(p),
                &one_pixel_mask(p_aug),
                &one_pixel_mask(y),
            )
            .unwrap();
            // Set expressions evaluated directly: (P n y) \ (P n y n P_aug)
            // and (P n P_aug) \ (P n y n P_aug).
            let want_more = (p && y) && !(p && y && p_aug);
            let want_less = (p && p_aug) && !(p && y && p_aug);
            assert_eq!(regions.more()[[0, 0, 0]], want_more, "bits {bits:03b}");
            assert_eq!(regions.less()[[0, 0, 0]], want_less, "bits {bits:03b}");
            assert!(!(regions.more()[[0, 0, 0]] && regions.less()[[0, 0, 0]]));
        }
    }

    #[test]
    fn perfect_agreement_gives_empty_regions() {
        let m = LabelMask::new(arr3(&[[[1.0], [0.0]], [[0.0], [1.0]]])).unwrap();
        let regions = attention_regions(&m, &m, &m).unwrap();
        assert!(regions.is_empty());
    }

    #[test]
    fn reweight_defining_cases() {
        // u = 1 everywhere; pixel (0,0) in `more`, pixel (0,1) in `less`.
        let pred = LabelMask::new(arr3(&[[[1.0], [1.0]], [[0.0], [0.0]]])).unwrap();
        let pred_aug = LabelMask::new(arr3(&[[[0.0], [1.0]], [[0.0], [0.0]]])).unwrap();
        let label = LabelMask::new(arr3(&[[[1.0], [0.0]], [[0.0], [0.0]]])).unwrap();
        let regions = attention_regions(&pred, &pred_aug, &label).unwrap();
        let u = UncertaintyMap::uniform(2, 2);
        let out = reweight(&u, &regions, 1.2, 0.8).unwrap();
        assert_eq!(out.map()[[0, 0, 0]], 1.2);
        assert_eq!(out.map()[[0, 1, 0]], 0.8);
        assert_eq!(out.map()[[1, 0, 0]], 1.0);
        assert_eq!(out.map()[[1, 1, 0]], 1.0);
        // input untouched
        assert_eq!(u.map()[[0, 0, 0]], 1.0);
    }

    #[test]
    fn reweight_empty_regions_is_identity() {
        let m = LabelMask::new(arr3(&[[[1.0], [0.0]], [[0.0], [1.0]]])).unwrap();
        let regions = attention_regions(&m, &m, &m).unwrap();
        let u = UncertaintyMap::new(arr3(&[[[0.3], [0.7]], [[1.5], [0.0]]])).unwrap();
        let out = reweight(&u, &regions, 1.2, 0.8).unwrap();
        assert_eq!(out.map(), u.map());
    }

    #[test]
    fn reweight_validates_factors() {
        let m = LabelMask::new(arr3(&[[[1.0]]])).unwrap();
        let regions = attention_regions(&m, &m, &m).unwrap();
        let u = UncertaintyMap::uniform(1, 1);
        assert!(reweight(&u, &regions, 0.9, 0.8).is_err());
        assert!(reweight(&u, &regions, 1.2, 1.1).is_err());
        assert!(reweight(&u, &regions, 1.2, 0.0).is_err());
    }

    #[test]
    fn normalization_guards_zero_maps() {
        let u = UncertaintyMap::new(Array3::zeros((2, 2, 1))).unwrap();
        let n = u.normalized_to_unit_mean();
        assert_eq!(n.map()[[0, 0, 0]], 1.0);

        let u = UncertaintyMap::new(arr3(&[[[2.0], [4.0]], [[2.0], [0.0]]])).unwrap();
        let n = u.normalized_to_unit_mean();
        let mean: f64 = n.map().iter().sum::<f64>() / 4.0;
        assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hard_dice_hand_case() {
        // |P n y| = 2, |P| = 3, |y| = 3 -> 2*2/6
        let mut p = Array3::zeros((4, 4, 1));
        let mut y = Array3::zeros((4, 4, 1));
        for (r, c) in [(0, 0), (0, 1), (1, 0)] {
            p[[r, c, 0]] = 1.0;
        }
        for (r, c) in [(0, 0), (0, 1), (2, 2)] {
            y[[r, c, 0]] = 1.0;
        }
        let d = hard_dice(
            &LabelMask::new(p).unwrap(),
            &LabelMask::new(y).unwrap(),
            0,
        );
        assert!((d - 2.0 * 2.0 / 6.0).abs() < 1e-12);
    }
}
