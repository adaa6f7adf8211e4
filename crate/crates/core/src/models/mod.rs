//! The three trainable networks, at toy scale: a segmentation
//! encoder-decoder with dropout, a reconstruction autoencoder with
//! style-mixing slots in its first three convolutional blocks, and a noise
//! encoder mapping Gaussian noise vectors to per-layer style parameters.

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::Prediction;
use crate::nn::layers::{bernoulli, mix_backward, mix_forward, AvgPool2, MixCache};
use crate::nn::{
    Conv1x1, Conv3x3, Dropout, Linear, MaxPool2, Parameterized, Relu, Sigmoid, SoftClip,
    SoftmaxChannels, Tensor, Upsample2, VecRelu,
};
use crate::uncertainty::StochasticSegmenter;

/// Architecture hyperparameters for all three networks.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// Input image channels.
    pub in_channels: usize,
    /// Segmentation classes.
    pub classes: usize,
    /// Channel widths of the three encoder levels.
    pub seg_widths: [usize; 3],
    /// Dropout probability in the segmentation decoder blocks.
    pub dropout: f64,
    /// Channel widths of the reconstruction encoder blocks (which carry the
    /// mix-layer slots).
    pub recon_widths: [usize; 3],
    /// Dimension of the Gaussian noise vector fed to the noise encoder.
    pub noise_dim: usize,
    /// Hidden width of the noise encoder.
    pub noise_hidden: usize,
    /// Probability that each mix layer activates during styled generation.
    pub mix_prob: f64,
    /// Soft bound on the emitted gamma/beta magnitudes.
    pub style_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            classes: 3,
            seg_widths: [16, 32, 64],
            dropout: 0.1,
            recon_widths: [16, 32, 64],
            noise_dim: 64,
            noise_hidden: 128,
            mix_prob: 0.5,
            style_scale: 2.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.classes < 2 {
            return Err(Error::validation("need >=1 input channel and >=2 classes"));
        }
        if self.seg_widths.iter().chain(&self.recon_widths).any(|w| *w == 0) {
            return Err(Error::validation("channel widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation("dropout must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.mix_prob) {
            return Err(Error::validation("mix_prob must lie in [0, 1]"));
        }
        if self.noise_dim == 0 || self.noise_hidden == 0 || self.style_scale <= 0.0 {
            return Err(Error::validation("noise encoder dimensions must be positive"));
        }
        Ok(())
    }
}

/// Spatial downsampling factor of the segmentation network.
pub const SEG_DOWN_FACTOR: usize = 8;
/// Spatial downsampling factor of the reconstruction network.
pub const RECON_DOWN_FACTOR: usize = 4;

fn check_divisible(h: usize, w: usize, factor: usize) -> Result<()> {
    if h % factor != 0 || w % factor != 0 || h == 0 || w == 0 {
        return Err(Error::validation(format!(
            "spatial dims {h}x{w} must be positive multiples of {factor}"
        )));
    }
    Ok(())
}

/// U-shaped segmentation network: three encoder levels, a bottleneck, three
/// skip-connected decoder levels with dropout, and a softmax head.
pub struct SegNetwork {
    pub config: ModelConfig,
    enc1: Conv3x3,
    relu_e1: Relu,
    pool1: MaxPool2,
    enc2: Conv3x3,
    relu_e2: Relu,
    pool2: MaxPool2,
    enc3: Conv3x3,
    relu_e3: Relu,
    pool3: MaxPool2,
    bott: Conv3x3,
    relu_b: Relu,
    up3: Upsample2,
    dec3: Conv3x3,
    relu_d3: Relu,
    drop3: Dropout,
    up2: Upsample2,
    dec2: Conv3x3,
    relu_d2: Relu,
    drop2: Dropout,
    up1: Upsample2,
    dec1: Conv3x3,
    relu_d1: Relu,
    drop1: Dropout,
    head: Conv1x1,
    softmax: SoftmaxChannels,
    // skip activations cached for the backward pass
    cache_a: Option<(Tensor, Tensor, Tensor)>,
}

impl SegNetwork {
    pub fn new(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let [w0, w1, w2] = config.seg_widths;
        Ok(Self {
            config: config.clone(),
            enc1: Conv3x3::new(config.in_channels, w0, rng),
            relu_e1: Relu::new(),
            pool1: MaxPool2::new(),
            enc2: Conv3x3::new(w0, w1, rng),
            relu_e2: Relu::new(),
            pool2: MaxPool2::new(),
            enc3: Conv3x3::new(w1, w2, rng),
            relu_e3: Relu::new(),
            pool3: MaxPool2::new(),
            bott: Conv3x3::new(w2, w2, rng),
            relu_b: Relu::new(),
            up3: Upsample2::new(),
            dec3: Conv3x3::new(w2 + w2, w1, rng),
            relu_d3: Relu::new(),
            drop3: Dropout::new(config.dropout),
            up2: Upsample2::new(),
            dec2: Conv3x3::new(w1 + w1, w0, rng),
            relu_d2: Relu::new(),
            drop2: Dropout::new(config.dropout),
            up1: Upsample2::new(),
            dec1: Conv3x3::new(w0 + w0, w0, rng),
            relu_d1: Relu::new(),
            drop1: Dropout::new(config.dropout),
            head: Conv1x1::new(w0, config.classes, rng),
            softmax: SoftmaxChannels::new(),
            cache_a: None,
        })
    }

    /// Forward pass producing per-class probabilities (`K x H x W`).
    pub fn forward(
        &mut self,
        x: &Tensor,
        dropout_active: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        check_divisible(x.h, x.w, SEG_DOWN_FACTOR)?;
        if x.c != self.config.in_channels {
            return Err(Error::validation(format!(
                "expected {} input channels, got {}",
                self.config.in_channels, x.c
            )));
        }
        let a1 = self.relu_e1.forward(&self.enc1.forward(x));
        let p1 = self.pool1.forward(&a1);
        let a2 = self.relu_e2.forward(&self.enc2.forward(&p1));
        let p2 = self.pool2.forward(&a2);
        let a3 = self.relu_e3.forward(&self.enc3.forward(&p2));
        let p3 = self.pool3.forward(&a3);
        let b = self.relu_b.forward(&self.bott.forward(&p3));

        let u3 = self.up3.forward(&b);
        let c3 = Tensor::concat_channels(&u3, &a3);
        let d3 = self
            .drop3
            .forward(&self.relu_d3.forward(&self.dec3.forward(&c3)), dropout_active, rng);
        let u2 = self.up2.forward(&d3);
        let c2 = Tensor::concat_channels(&u2, &a2);
        let d2 = self
            .drop2
            .forward(&self.relu_d2.forward(&self.dec2.forward(&c2)), dropout_active, rng);
        let u1 = self.up1.forward(&d2);
        let c1 = Tensor::concat_channels(&u1, &a1);
        let d1 = self
            .drop1
            .forward(&self.relu_d1.forward(&self.dec1.forward(&c1)), dropout_active, rng);
        let logits = self.head.forward(&d1);
        self.cache_a = Some((a1, a2, a3));
        Ok(self.softmax.forward(&logits))
    }

    /// Backward pass from a gradient on the probabilities; returns the input
    /// gradient and accumulates parameter gradients.
    pub fn backward(&mut self, dprobs: &Tensor) -> Tensor {
        let [w0, w1, w2] = self.config.seg_widths;
        let dlogits = self.softmax.backward(dprobs);
        let dd1 = self.head.backward(&dlogits);
        let dc1 = self
            .dec1
            .backward(&self.relu_d1.backward(&self.drop1.backward(&dd1)));
        let (du1, da1_skip) = dc1.split_channels(w0);
        let dd2 = self.up1.backward(&du1);
        let dc2 = self
            .dec2
            .backward(&self.relu_d2.backward(&self.drop2.backward(&dd2)));
        let (du2, da2_skip) = dc2.split_channels(w1);
        let dd3 = self.up2.backward(&du2);
        let dc3 = self
            .dec3
            .backward(&self.relu_d3.backward(&self.drop3.backward(&dd3)));
        let (du3, da3_skip) = dc3.split_channels(w2);
        let db = self.up3.backward(&du3);
        let dp3 = self.bott.backward(&self.relu_b.backward(&db));

        let mut da3 = self.pool3.backward(&dp3);
        da3.add_assign(&da3_skip);
        let dp2 = self.enc3.backward(&self.relu_e3.backward(&da3));
        let mut da2 = self.pool2.backward(&dp2);
        da2.add_assign(&da2_skip);
        let dp1 = self.enc2.backward(&self.relu_e2.backward(&da2));
        let mut da1 = self.pool1.backward(&dp1);
        da1.add_assign(&da1_skip);
        self.cache_a = None;
        self.enc1.backward(&self.relu_e1.backward(&da1))
    }
}

impl Parameterized for SegNetwork {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f32], &mut [f32])) {
        self.enc1.visit_params(f);
        self.enc2.visit_params(f);
        self.enc3.visit_params(f);
        self.bott.visit_params(f);
        self.dec3.visit_params(f);
        self.dec2.visit_params(f);
        self.dec1.visit_params(f);
        self.head.visit_params(f);
    }
}

impl StochasticSegmenter for SegNetwork {
    fn predict_probs(
        &mut self,
        image: &ImageTensor,
        stochastic: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Prediction> {
        // Draw a child stream so the trait stays object-safe over RngCore.
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        let mut child = <ChaCha8Rng as rand::SeedableRng>::from_seed(seed);
        let x = Tensor::from_image(image);
        let probs = self.forward(&x, stochastic, &mut child)?;
        tensor_to_prediction(&probs)
    }

    fn has_stochastic_layers(&self) -> bool {
        self.config.dropout > 0.0
    }
}

/// Convert a `K x H x W` probability tensor into a validated [`Prediction`].
pub fn tensor_to_prediction(t: &Tensor) -> Result<Prediction> {
    let mut probs = ndarray::Array3::zeros((t.h, t.w, t.c));
    for k in 0..t.c {
        for r in 0..t.h {
            for c in 0..t.w {
                probs[[r, c, k]] = (t.at(k, r, c) as f64).clamp(0.0, 1.0);
            }
        }
    }
    Prediction::new(probs)
}

/// Convert a loss gradient on `H x W x K` probabilities into `K x H x W`.
pub fn grad_to_tensor(grad: &ndarray::Array3<f64>) -> Tensor {
    let (h, w, k) = grad.dim();
    let mut t = Tensor::zeros(k, h, w);
    for c in 0..k {
        for r in 0..h {
            for q in 0..w {
                *t.at_mut(c, r, q) = grad[[r, q, c]] as f32;
            }
        }
    }
    t
}

/// Per-layer style parameters emitted by the noise encoder: a channel scale
/// `gamma` and an additive shift `beta` per mix slot.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleParams {
    pub gammas: [Vec<f32>; 3],
    pub betas: [Vec<f32>; 3],
}

impl StyleParams {
    /// Neutral style: zero scale and shift.
    pub fn neutral(widths: [usize; 3]) -> Self {
        Self {
            gammas: widths.map(|w| vec![0.0; w]),
            betas: widths.map(|w| vec![0.0; w]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.gammas
            .iter()
            .chain(self.betas.iter())
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Gradients flowing back into the style parameters.
#[derive(Debug, Clone)]
pub struct StyleGrads {
    pub dgammas: [Vec<f32>; 3],
    pub dbetas: [Vec<f32>; 3],
}

/// Which mix slots are active for one styled generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixPattern {
    pub active: [bool; 3],
}

impl MixPattern {
    pub const ALL_OFF: MixPattern = MixPattern {
        active: [false; 3],
    };
    pub const ALL_ON: MixPattern = MixPattern { active: [true; 3] };

    /// Sample each slot independently with probability `p`.
    pub fn sample(rng: &mut ChaCha8Rng, p: f64) -> Self {
        Self {
            active: [
                bernoulli(rng, p),
                bernoulli(rng, p),
                bernoulli(rng, p),
            ],
        }
    }
}

/// Apply the style-mixing transform to a feature map, or pass it through
/// unchanged when inactive.
pub fn style_mix_layer(
    features: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    active: bool,
) -> Result<Tensor> {
    if gamma.len() != features.c || beta.len() != features.c {
        return Err(Error::validation(format!(
            "style parameters for {} channels applied to {} channels",
            gamma.len(),
            features.c
        )));
    }
    if !active {
        return Ok(features.clone());
    }
    Ok(mix_forward(features, gamma, beta).0)
}

/// Reconstruction autoencoder with style-mixing slots after its first three
/// convolutions and a sigmoid output head keeping pixels in `(0, 1)`.
pub struct ReconDecoder {
    pub config: ModelConfig,
    b1: Conv3x3,
    relu1: Relu,
    pool1: AvgPool2,
    b2: Conv3x3,
    relu2: Relu,
    pool2: AvgPool2,
    b3: Conv3x3,
    relu3: Relu,
    up2: Upsample2,
    d2: Conv3x3,
    relu_d2: Relu,
    up1: Upsample2,
    d1: Conv3x3,
    relu_d1: Relu,
    head: Conv1x1,
    out: Sigmoid,
    mix_caches: [Option<MixCache>; 3],
    last_style: Option<(StyleParams, MixPattern)>,
}

impl ReconDecoder {
    pub fn new(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let [w0, w1, w2] = config.recon_widths;
        Ok(Self {
            config: config.clone(),
            b1: Conv3x3::new(config.in_channels, w0, rng),
            relu1: Relu::new(),
            pool1: AvgPool2::new(),
            b2: Conv3x3::new(w0, w1, rng),
            relu2: Relu::new(),
            pool2: AvgPool2::new(),
            b3: Conv3x3::new(w1, w2, rng),
            relu3: Relu::new(),
            up2: Upsample2::new(),
            d2: Conv3x3::new(w2, w1, rng),
            relu_d2: Relu::new(),
            up1: Upsample2::new(),
            d1: Conv3x3::new(w1, w0, rng),
            relu_d1: Relu::new(),
            head: Conv1x1::new(w0, config.in_channels, rng),
            out: Sigmoid::new(),
            mix_caches: [None, None, None],
            last_style: None,
        })
    }

    fn mix_slot(
        &mut self,
        slot: usize,
        features: Tensor,
        style: Option<&(StyleParams, MixPattern)>,
    ) -> Result<Tensor> {
        self.mix_caches[slot] = None;
        let Some((params, pattern)) = style else {
            return Ok(features);
        };
        if !pattern.active[slot] {
            return Ok(features);
        }
        let gamma = &params.gammas[slot];
        let beta = &params.betas[slot];
        if gamma.len() != features.c || beta.len() != features.c {
            return Err(Error::validation("style parameter width mismatch"));
        }
        let (y, cache) = mix_forward(&features, gamma, beta);
        self.mix_caches[slot] = Some(cache);
        Ok(y)
    }

    /// Forward pass. With `style = None` (or an all-inactive pattern) this is
    /// the plain reconstruction path.
    pub fn forward(
        &mut self,
        x: &Tensor,
        style: Option<(&StyleParams, &MixPattern)>,
    ) -> Result<Tensor> {
        check_divisible(x.h, x.w, RECON_DOWN_FACTOR)?;
        if x.c != self.config.in_channels {
            return Err(Error::validation("recon input channel mismatch"));
        }
        let style_owned = style.map(|(p, m)| (p.clone(), *m));
        let f1 = self.b1.forward(x);
        let f1 = self.mix_slot(0, f1, style_owned.as_ref())?;
        let a1 = self.relu1.forward(&f1);
        let p1 = self.pool1.forward(&a1);
        let f2 = self.b2.forward(&p1);
        let f2 = self.mix_slot(1, f2, style_owned.as_ref())?;
        let a2 = self.relu2.forward(&f2);
        let p2 = self.pool2.forward(&a2);
        let f3 = self.b3.forward(&p2);
        let f3 = self.mix_slot(2, f3, style_owned.as_ref())?;
        let a3 = self.relu3.forward(&f3);

        let u2 = self.up2.forward(&a3);
        let g2 = self.relu_d2.forward(&self.d2.forward(&u2));
        let u1 = self.up1.forward(&g2);
        let g1 = self.relu_d1.forward(&self.d1.forward(&u1));
        let logits = self.head.forward(&g1);
        self.last_style = style_owned;
        Ok(self.out.forward(&logits))
    }

    fn mix_slot_backward(&mut self, slot: usize, dy: Tensor, grads: &mut StyleGrads) -> Tensor {
        match (&self.mix_caches[slot], &self.last_style) {
            (Some(cache), Some((params, _))) => {
                let (dx, dgamma, dbeta) = mix_backward(cache, &params.gammas[slot], &dy);
                grads.dgammas[slot] = dgamma;
                grads.dbetas[slot] = dbeta;
                dx
            }
            _ => dy,
        }
    }

    /// Backward pass from a gradient on the output image; returns the input
    /// gradient and the style-parameter gradients (zero for inactive slots).
    pub fn backward(&mut self, dout: &Tensor) -> (Tensor, StyleGrads) {
        let widths = self.config.recon_widths;
        let mut style_grads = StyleGrads {
            dgammas: widths.map(|w| vec![0.0; w]),
            dbetas: widths.map(|w| vec![0.0; w]),
        };
        let dlogits = self.out.backward(dout);
        let dg1 = self.head.backward(&dlogits);
        let du1 = self.d1.backward(&self.relu_d1.backward(&dg1));
        let dg2 = self.up1.backward(&du1);
        let du2 = self.d2.backward(&self.relu_d2.backward(&dg2));
        let da3 = self.up2.backward(&du2);

        let df3 = self.relu3.backward(&da3);
        let df3 = self.mix_slot_backward(2, df3, &mut style_grads);
        let dp2 = self.b3.backward(&df3);
        let da2 = self.pool2.backward(&dp2);
        let df2 = self.relu2.backward(&da2);
        let df2 = self.mix_slot_backward(1, df2, &mut style_grads);
        let dp1 = self.b2.backward(&df2);
        let da1 = self.pool1.backward(&dp1);
        let df1 = self.relu1.backward(&da1);
        let df1 = self.mix_slot_backward(0, df1, &mut style_grads);
        let dx = self.b1.backward(&df1);
        (dx, style_grads)
    }
}

impl Parameterized for ReconDecoder {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f32], &mut [f32])) {
        self.b1.visit_params(f);
        self.b2.visit_params(f);
        self.b3.visit_params(f);
        self.d2.visit_params(f);
        self.d1.visit_params(f);
        self.head.visit_params(f);
    }
}

/// Two-layer perceptron mapping a Gaussian noise vector to soft-bounded
/// per-slot style parameters.
pub struct NoiseEncoder {
    pub config: ModelConfig,
    fc1: Linear,
    relu: VecRelu,
    fc2: Linear,
    clip: SoftClip,
    cache_dims: [usize; 3],
}

impl NoiseEncoder {
    pub fn new(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let dims = config.recon_widths;
        let out_dim: usize = dims.iter().map(|w| 2 * w).sum();
        Ok(Self {
            config: config.clone(),
            fc1: Linear::new(config.noise_dim, config.noise_hidden, rng),
            relu: VecRelu::new(),
            fc2: Linear::new(config.noise_hidden, out_dim, rng),
            clip: SoftClip::new(config.style_scale as f32),
            cache_dims: dims,
        })
    }

    /// Draw a noise vector of the configured dimension.
    pub fn sample_noise(&self, rng: &mut ChaCha8Rng) -> Vec<f32> {
        (0..self.config.noise_dim)
            .map(|_| crate::nn::init::normal_sample(rng) as f32)
            .collect()
    }

    pub fn forward(&mut self, noise: &[f32]) -> Result<StyleParams> {
        if noise.len() != self.config.noise_dim {
            return Err(Error::validation(format!(
                "noise vector has length {}, expected {}",
                noise.len(),
                self.config.noise_dim
            )));
        }
        let h = self.relu.forward(&self.fc1.forward(noise));
        let flat = self.clip.forward(&self.fc2.forward(&h));
        let mut offset = 0usize;
        let mut take = |n: usize| {
            let v = flat[offset..offset + n].to_vec();
            offset += n;
            v
        };
        let params = StyleParams {
            gammas: [
                take(self.cache_dims[0]),
                take(self.cache_dims[1]),
                take(self.cache_dims[2]),
            ],
            betas: [
                take(self.cache_dims[0]),
                take(self.cache_dims[1]),
                take(self.cache_dims[2]),
            ],
        };
        Ok(params)
    }

    /// Accumulate parameter gradients from style-parameter gradients.
    pub fn backward(&mut self, grads: &StyleGrads) {
        let mut flat = Vec::new();
        for g in &grads.dgammas {
            flat.extend_from_slice(g);
        }
        for b in &grads.dbetas {
            flat.extend_from_slice(b);
        }
        let d = self.clip.backward(&flat);
        let d = self.fc2.backward(&d);
        let d = self.relu.backward(&d);
        let _ = self.fc1.backward(&d);
    }

    /// Reorder: the head emits `[gammas..., betas...]`; forward slices in the
    /// same order, so gradients must be flattened identically.
    fn _layout_note() {}
}

impl Parameterized for NoiseEncoder {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f32], &mut [f32])) {
        self.fc1.visit_params(f);
        self.fc2.visit_params(f);
    }
}

/// Produce one style-augmented image: map `noise` to style parameters,
/// activate each mix slot independently with the configured probability, run
/// the reconstruction decoder, and clamp the result to `[0, 1]`.
pub fn generate_styled(
    decoder: &mut ReconDecoder,
    noise_enc: &mut NoiseEncoder,
    x: &ImageTensor,
    noise: &[f32],
    rng: &mut ChaCha8Rng,
) -> Result<ImageTensor> {
    let style = noise_enc.forward(noise)?;
    let pattern = MixPattern::sample(rng, decoder.config.mix_prob);
    let t = Tensor::from_image(x);
    let y = decoder.forward(&t, Some((&style, &pattern)))?;
    Ok(y.to_image()?.clamped())
}
