//! Real-valued image tensors in `H x W x C` layout.

use ndarray::{Array3, ArrayView3};

use crate::error::{shape_err, Error, Result};

/// A real image of shape `H x W x C`, nominally with intensities in `[0, 1]`.
///
/// Only finiteness and a minimum size are enforced: spectral operations such
/// as amplitude swaps legitimately produce values slightly outside `[0, 1]`,
/// and downstream consumers clamp where the contract requires it.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
}

impl ImageTensor {
    /// Wrap an `H x W x C` array, rejecting non-finite values and degenerate
    /// sizes (`H, W >= 2`, `C >= 1`).
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h < 2 || w < 2 || c == 0 {
            return Err(Error::validation(format!(
                "image must be at least 2x2x1, got {h}x{w}x{c}"
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::validation("image contains non-finite values"));
        }
        Ok(Self { data })
    }

    /// Constant-valued image. `value` must be finite.
    pub fn constant(h: usize, w: usize, c: usize, value: f64) -> Result<Self> {
        Self::new(Array3::from_elem((h, w, c), value))
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView3<'_, f64> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.data
    }

    /// Elementwise clamp to `[0, 1]`.
    pub fn clamped(&self) -> Self {
        Self {
            data: self.data.mapv(|v| v.clamp(0.0, 1.0)),
        }
    }

    /// Largest absolute difference to `other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(shape_err(what, self.dim(), other.dim()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let mut data = Array3::zeros((4, 4, 1));
        data[[1, 2, 0]] = f64::NAN;
        assert!(ImageTensor::new(data).is_err());
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(ImageTensor::new(Array3::zeros((1, 4, 1))).is_err());
        assert!(ImageTensor::new(Array3::zeros((4, 1, 1))).is_err());
        assert!(ImageTensor::new(Array3::zeros((4, 4, 0))).is_err());
        assert!(ImageTensor::new(Array3::zeros((2, 2, 1))).is_ok());
    }

    #[test]
    fn clamp_is_elementwise() {
        let mut data = Array3::zeros((2, 2, 1));
        data[[0, 0, 0]] = -0.5;
        data[[1, 1, 0]] = 1.5;
        let img = ImageTensor::new(data).unwrap().clamped();
        assert_eq!(img.data()[[0, 0, 0]], 0.0);
        assert_eq!(img.data()[[1, 1, 0]], 1.0);
    }
}
