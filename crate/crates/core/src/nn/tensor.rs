//! Minimal single-sample feature tensor in channel-major `C x H x W` layout.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::image::ImageTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), c * h * w);
        Self { c, h, w, data }
    }

    #[inline]
    pub fn plane(&self, ch: usize) -> &[f32] {
        let n = self.h * self.w;
        &self.data[ch * n..(ch + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, ch: usize) -> &mut [f32] {
        let n = self.h * self.w;
        &mut self.data[ch * n..(ch + 1) * n]
    }

    #[inline]
    pub fn at(&self, ch: usize, y: usize, x: usize) -> f32 {
        self.data[(ch * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, ch: usize, y: usize, x: usize) -> &mut f32 {
        &mut self.data[(ch * self.h + y) * self.w + x]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    /// Stack the channel planes of `a` on top of those of `b`.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!((a.h, a.w), (b.h, b.w));
        let mut data = Vec::with_capacity((a.c + b.c) * a.h * a.w);
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor {
            c: a.c + b.c,
            h: a.h,
            w: a.w,
            data,
        }
    }

    /// Split a gradient produced against a channel concatenation back into
    /// the two operands' gradients.
    pub fn split_channels(&self, c_first: usize) -> (Tensor, Tensor) {
        assert!(c_first <= self.c);
        let n = self.h * self.w;
        let first = Tensor::from_vec(c_first, self.h, self.w, self.data[..c_first * n].to_vec());
        let second = Tensor::from_vec(
            self.c - c_first,
            self.h,
            self.w,
            self.data[c_first * n..].to_vec(),
        );
        (first, second)
    }

    /// Convert an `H x W x C` image (f64) into `C x H x W` features.
    pub fn from_image(image: &ImageTensor) -> Tensor {
        let (h, w, c) = image.dim();
        let mut t = Tensor::zeros(c, h, w);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    *t.at_mut(ch, y, x) = image.data()[[y, x, ch]] as f32;
                }
            }
        }
        t
    }

    /// Convert back into an `H x W x C` image, validating finiteness.
    pub fn to_image(&self) -> Result<ImageTensor> {
        let mut data = Array3::zeros((self.h, self.w, self.c));
        for ch in 0..self.c {
            for y in 0..self.h {
                for x in 0..self.w {
                    let v = self.at(ch, y, x) as f64;
                    if !v.is_finite() {
                        return Err(Error::validation("non-finite activation"));
                    }
                    data[[y, x, ch]] = v;
                }
            }
        }
        ImageTensor::new(data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_and_split_round_trip() {
        let a = Tensor::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::from_vec(2, 2, 2, (0..8).map(|v| v as f32).collect());
        let cat = Tensor::concat_channels(&a, &b);
        assert_eq!(cat.shape(), (3, 2, 2));
        let (a2, b2) = cat.split_channels(1);
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }

    #[test]
    fn image_round_trip() {
        let img = ImageTensor::constant(3, 4, 2, 0.25).unwrap();
        let t = Tensor::from_image(&img);
        assert_eq!(t.shape(), (2, 3, 4));
        let back = t.to_image().unwrap();
        assert!(img.max_abs_diff(&back) < 1e-7);
    }
}
