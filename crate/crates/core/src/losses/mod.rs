//! Differentiable loss functions.
//!
//! All losses are computed in `f64` and come in two flavours: a plain value
//! and a `_with_grad` variant returning the analytic gradient with respect to
//! the differentiable argument. The gradients are checked against central
//! finite differences in the test suite.

mod fsd;

pub use fsd::{fsd_loss, fsd_loss_with_grad};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::uncertainty::UncertaintyMap;

/// Probability floor used to keep the log terms finite.
pub const PROB_EPS: f64 = 1e-7;

/// Smoothing constant in the Dice denominator; defines the empty-empty case
/// as zero loss.
pub const DICE_SMOOTH: f64 = 1e-5;

/// Weights of the spectrum-diversity reconstruction loss with their
/// per-epoch exponential decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FsdWeights {
    /// Pixel-space term weight.
    pub lambda1: f64,
    /// High-frequency amplitude term weight.
    pub lambda2: f64,
    /// Low-frequency amplitude term weight; keeping it below `lambda2`
    /// relaxes the low-frequency constraint.
    pub lambda3: f64,
    /// Per-epoch multiplicative decay applied to all three weights.
    pub decay_rate: f64,
}

impl Default for FsdWeights {
    fn default() -> Self {
        Self {
            lambda1: 5e-3,
            lambda2: 5e-5,
            lambda3: 5e-6,
            decay_rate: 0.99,
        }
    }
}

impl FsdWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64, decay_rate: f64) -> Result<Self> {
        let w = Self {
            lambda1,
            lambda2,
            lambda3,
            decay_rate,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("decay_rate", self.decay_rate),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::validation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.decay_rate > 1.0 {
            return Err(Error::validation("decay_rate must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Weights after `epoch` decay steps.
    ///
    /// The decay is applied as an iterated product so that the weights at
    /// epoch `e + 1` equal exactly `decay_rate` times the weights at epoch
    /// `e`, with no re-association of the floating-point operations.
    pub fn decayed(&self, epoch: u32) -> Self {
        let mut w = *self;
        for _ in 0..epoch {
            w.lambda1 *= self.decay_rate;
            w.lambda2 *= self.decay_rate;
            w.lambda3 *= self.decay_rate;
        }
        w
    }
}

/// Per-class probability maps of shape `H x W x K`, values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Prediction {
    probs: Array3<f64>,
}

impl Prediction {
    pub fn new(probs: Array3<f64>) -> Result<Self> {
        let (h, w, k) = probs.dim();
        if h == 0 || w == 0 || k == 0 {
            return Err(Error::validation("prediction must be non-empty"));
        }
        if !probs
            .iter()
            .all(|p| p.is_finite() && (0.0..=1.0).contains(p))
        {
            return Err(Error::validation("probabilities must lie in [0, 1]"));
        }
        Ok(Self { probs })
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.probs.dim()
    }

    pub fn probs(&self) -> &Array3<f64> {
        &self.probs
    }

    /// Check the mutually-exclusive-classes invariant: per-pixel sums equal
    /// one within `tol`.
    pub fn validate_exclusive(&self, tol: f64) -> Result<()> {
        let (h, w, k) = self.probs.dim();
        for r in 0..h {
            for c in 0..w {
                let s: f64 = (0..k).map(|i| self.probs[[r, c, i]]).sum();
                if (s - 1.0).abs() > tol {
                    return Err(Error::validation(format!(
                        "per-pixel probabilities sum to {s} at ({r},{c})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Per-pixel argmax as a one-hot mask.
    pub fn argmax_mask(&self) -> LabelMask {
        let (h, w, k) = self.probs.dim();
        let mut onehot = Array3::zeros((h, w, k));
        for r in 0..h {
            for c in 0..w {
                let mut best = 0;
                for i in 1..k {
                    if self.probs[[r, c, i]] > self.probs[[r, c, best]] {
                        best = i;
                    }
                }
                onehot[[r, c, best]] = 1.0;
            }
        }
        LabelMask { onehot }
    }
}

/// One-hot label masks of shape `H x W x K` with entries in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    onehot: Array3<f64>,
}

impl LabelMask {
    pub fn new(onehot: Array3<f64>) -> Result<Self> {
        if !onehot.iter().all(|v| *v == 0.0 || *v == 1.0) {
            return Err(Error::validation("label mask entries must be 0 or 1"));
        }
        Ok(Self { onehot })
    }

    /// Build from a per-pixel class-index map.
    pub fn from_classes(classes: &ndarray::Array2<usize>, num_classes: usize) -> Result<Self> {
        let (h, w) = classes.dim();
        let mut onehot = Array3::zeros((h, w, num_classes));
        for ((r, c), &k) in classes.indexed_iter() {
            if k >= num_classes {
                return Err(Error::validation(format!(
                    "class index {k} out of range (K = {num_classes})"
                )));
            }
            onehot[[r, c, k]] = 1.0;
        }
        Ok(Self { onehot })
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.onehot.dim()
    }

    pub fn onehot(&self) -> &Array3<f64> {
        &self.onehot
    }
}

fn check_pred_label(pred: &Prediction, label: &LabelMask, what: &str) -> Result<()> {
    if pred.dim() != label.dim() {
        return Err(shape_err(what, pred.dim(), label.dim()));
    }
    Ok(())
}

fn uncertainty_weight(u: &UncertaintyMap, r: usize, c: usize, k: usize) -> f64 {
    let uk = u.map().dim().2;
    u.map()[[r, c, if uk == 1 { 0 } else { k }]]
}

fn check_uncertainty(u: &UncertaintyMap, dim: (usize, usize, usize)) -> Result<()> {
    let (h, w, uk) = u.map().dim();
    if (h, w) != (dim.0, dim.1) || (uk != 1 && uk != dim.2) {
        return Err(shape_err("uncertainty map", dim, u.map().dim()));
    }
    Ok(())
}

/// Uncertainty-weighted per-pixel cross-entropy, summed per class and
/// averaged over classes. With a unit uncertainty map this reduces to the
/// standard binary cross-entropy.
pub fn uiu_loss(pred: &Prediction, label: &LabelMask, u: &UncertaintyMap) -> Result<f64> {
    uiu_loss_impl(pred, label, u, false).map(|(v, _)| v)
}

/// [`uiu_loss`] together with its gradient with respect to the predicted
/// probabilities.
pub fn uiu_loss_with_grad(
    pred: &Prediction,
    label: &LabelMask,
    u: &UncertaintyMap,
) -> Result<(f64, Array3<f64>)> {
    let (v, g) = uiu_loss_impl(pred, label, u, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn uiu_loss_impl(
    pred: &Prediction,
    label: &LabelMask,
    u: &UncertaintyMap,
    want_grad: bool,
) -> Result<(f64, Option<Array3<f64>>)> {
    check_pred_label(pred, label, "uiu_loss")?;
    check_uncertainty(u, pred.dim())?;
    let (h, w, k) = pred.dim();
    let scale = 1.0 / (h * w) as f64 / k as f64;
    let mut loss = 0.0;
    let mut grad = want_grad.then(|| Array3::zeros((h, w, k)));
    for r in 0..h {
        for c in 0..w {
            for i in 0..k {
                let p_raw = pred.probs()[[r, c, i]];
                let p = p_raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
                let y = label.onehot()[[r, c, i]];
                let weight = uncertainty_weight(u, r, c, i);
                loss -= weight * (y * p.ln() + (1.0 - y) * (1.0 - p).ln()) * scale;
                if let Some(g) = grad.as_mut() {
                    // The clamp is part of the function: outside the active
                    // range the loss is locally constant in the prediction.
                    let dp = if p_raw <= PROB_EPS || p_raw >= 1.0 - PROB_EPS {
                        0.0
                    } else {
                        -weight * (y / p - (1.0 - y) / (1.0 - p)) * scale
                    };
                    g[[r, c, i]] = dp;
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Soft Dice loss averaged over classes with smoothing [`DICE_SMOOTH`].
pub fn dice_loss(pred: &Prediction, label: &LabelMask) -> Result<f64> {
    dice_loss_impl(pred, label, false).map(|(v, _)| v)
}

/// [`dice_loss`] together with its gradient with respect to the predicted
/// probabilities.
pub fn dice_loss_with_grad(pred: &Prediction, label: &LabelMask) -> Result<(f64, Array3<f64>)> {
    let (v, g) = dice_loss_impl(pred, label, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn dice_loss_impl(
    pred: &Prediction,
    label: &LabelMask,
    want_grad: bool,
) -> Result<(f64, Option<Array3<f64>>)> {
    check_pred_label(pred, label, "dice_loss")?;
    let (h, w, k) = pred.dim();
    let mut loss = 0.0;
    let mut grad = want_grad.then(|| Array3::zeros((h, w, k)));
    for i in 0..k {
        let mut inter = 0.0;
        let mut p_sum = 0.0;
        let mut y_sum = 0.0;
        for r in 0..h {
            for c in 0..w {
                let p = pred.probs()[[r, c, i]];
                let y = label.onehot()[[r, c, i]];
                inter += p * y;
                p_sum += p;
                y_sum += y;
            }
        }
        let num = 2.0 * inter + DICE_SMOOTH;
        let den = p_sum + y_sum + DICE_SMOOTH;
        loss += 1.0 - num / den;
        if let Some(g) = grad.as_mut() {
            for r in 0..h {
                for c in 0..w {
                    let y = label.onehot()[[r, c, i]];
                    g[[r, c, i]] = -(2.0 * y * den - num) / (den * den) / k as f64;
                }
            }
        }
    }
    loss /= k as f64;
    Ok((loss, grad))
}

/// Combined segmentation loss: uncertainty-weighted cross-entropy plus Dice.
pub fn seg_loss(pred: &Prediction, label: &LabelMask, u: &UncertaintyMap) -> Result<f64> {
    Ok(uiu_loss(pred, label, u)? + dice_loss(pred, label)?)
}

/// [`seg_loss`] together with its gradient with respect to the predicted
/// probabilities.
pub fn seg_loss_with_grad(
    pred: &Prediction,
    label: &LabelMask,
    u: &UncertaintyMap,
) -> Result<(f64, Array3<f64>)> {
    let (lu, gu) = uiu_loss_with_grad(pred, label, u)?;
    let (ld, gd) = dice_loss_with_grad(pred, label)?;
    Ok((lu + ld, gu + gd))
}
