//! A small, dependency-free neural-network stack: channel-major tensors,
//! direct convolutions, pooling/upsampling, dropout, instance-norm style
//! mixing, and SGD/Adam optimizers.
//!
//! Everything runs single-threaded in `f32` with fixed accumulation orders,
//! so training is bit-reproducible for a given seed. Layers cache what their
//! own backward pass needs; networks wire layers explicitly and call
//! `backward` in reverse order immediately after the matching `forward`.

pub mod conv;
pub mod init;
pub mod layers;
pub mod linear;
pub mod optim;
pub mod tensor;

#[cfg(test)]
pub(crate) mod testutil;

pub use conv::{Conv1x1, Conv3x3};
pub use layers::{AvgPool2, Dropout, MaxPool2, Relu, Sigmoid, SoftmaxChannels, Upsample2};
pub use linear::{Linear, SoftClip, VecRelu};
pub use optim::{Adam, Sgd};
pub use tensor::Tensor;

/// Anything holding trainable parameters paired with gradient buffers.
///
/// Implementations must visit their `(params, grads)` slices in a fixed
/// order; optimizers and checkpointing rely on that order being stable.
pub trait Parameterized {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f32], &mut [f32]));
}

/// Reset all gradient buffers to zero.
pub fn zero_grads(p: &mut dyn Parameterized) {
    p.visit_params(&mut |_, g| g.fill(0.0));
}

/// Flatten all parameters into one vector (fixed visit order).
pub fn export_params(p: &mut dyn Parameterized) -> Vec<f32> {
    let mut out = Vec::new();
    p.visit_params(&mut |w, _| out.extend_from_slice(w));
    out
}

/// Load a flat parameter vector produced by [`export_params`].
pub fn import_params(p: &mut dyn Parameterized, flat: &[f32]) -> crate::Result<()> {
    let mut offset = 0usize;
    let mut err = None;
    p.visit_params(&mut |w, _| {
        if err.is_some() {
            return;
        }
        if offset + w.len() > flat.len() {
            err = Some("parameter vector too short".to_string());
            return;
        }
        w.copy_from_slice(&flat[offset..offset + w.len()]);
        offset += w.len();
    });
    if let Some(e) = err {
        return Err(crate::Error::validation(e));
    }
    if offset != flat.len() {
        return Err(crate::Error::validation(format!(
            "parameter vector length {} does not match model ({offset})",
            flat.len()
        )));
    }
    Ok(())
}

/// Total number of scalar parameters.
pub fn param_count(p: &mut dyn Parameterized) -> usize {
    let mut n = 0;
    p.visit_params(&mut |w, _| n += w.len());
    n
}

/// Largest absolute difference between two parameter snapshots.
pub fn max_param_delta(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}
