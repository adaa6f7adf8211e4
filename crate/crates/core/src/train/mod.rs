//! Training: the three-phase adversarial step, the epoch loop with metrics
//! and checkpoints, and evaluation.
//!
//! The per-step protocol (for the adversarial methods) is:
//!
//! 1. *Reconstruction*: generate styled reconstructions and minimize the
//!    reconstruction loss, updating both the decoder and the noise encoder.
//! 2. *Adversarial*: regenerate and ascend the segmentation loss on the
//!    styled images, updating only the noise encoder.
//! 3. *Segmentation*: minimize the segmentation loss on the original and the
//!    current styled images, updating only the segmentation network.
//!
//! Update routing is enforced structurally: each phase steps only its own
//! optimizer over its own network(s).

pub mod methods;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LoadedBenchmark, Sample};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::{fsd_loss_with_grad, seg_loss_with_grad, FsdWeights, LabelMask};
use crate::models::{
    grad_to_tensor, tensor_to_prediction, MixPattern, ModelConfig, NoiseEncoder, ReconDecoder,
    SegNetwork, StyleParams,
};
use crate::nn::{export_params, import_params, zero_grads, Adam, Sgd, Tensor};
use crate::rng::stream;
use crate::spectral::{make_low_freq_mask, FrequencyMask};
use crate::uncertainty::{
    attention_regions, hard_dice, mc_uncertainty, reweight, UncertaintyMap,
};

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    /// Segmentation network learning rate (momentum SGD).
    pub seg_lr: f64,
    pub seg_momentum: f64,
    /// Learning rate of the optimizer shared by the reconstruction decoder
    /// and the noise encoder during the reconstruction phase.
    pub recon_lr: f64,
    /// Learning rate of the dedicated noise optimizer (adversarial phase).
    pub noise_lr: f64,
    /// Reconstruction-loss weights with their per-epoch decay.
    pub fsd: FsdWeights,
    /// Low-frequency mask ratio used by the reconstruction loss.
    pub mask_ratio: f64,
    /// Stochastic forward passes for the uncertainty map.
    pub mc_passes: u32,
    /// Std of the Gaussian input noise during the stochastic passes.
    pub mc_noise_std: f64,
    /// Uncertainty multiplier on more-attention pixels.
    pub rho: f64,
    /// Uncertainty multiplier on less-attention pixels.
    pub sigma: f64,
    /// Low-frequency ratio for the amplitude-exchange baselines.
    pub swap_ratio: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (the final epoch always
    /// writes one).
    pub checkpoint_every: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            seg_lr: 1e-2,
            seg_momentum: 0.9,
            recon_lr: 1e-3,
            noise_lr: 1e-3,
            fsd: FsdWeights::default(),
            mask_ratio: 0.1,
            mc_passes: 8,
            mc_noise_std: 0.05,
            rho: 1.2,
            sigma: 0.8,
            swap_ratio: 0.1,
            seed: 0,
            checkpoint_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("batch size must be positive"));
        }
        for (name, v) in [
            ("seg_lr", self.seg_lr),
            ("recon_lr", self.recon_lr),
            ("noise_lr", self.noise_lr),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(format!("{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) || !(0.0..=1.0).contains(&self.swap_ratio) {
            return Err(Error::validation("mask ratios must lie in [0, 1]"));
        }
        if self.mc_passes < 2 {
            return Err(Error::validation("mc_passes must be at least 2"));
        }
        if !(self.rho >= 1.0 && self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(Error::validation("expected rho >= 1 >= sigma > 0"));
        }
        self.fsd.validate()?;
        if self.checkpoint_every == 0 {
            return Err(Error::validation("checkpoint_every must be positive"));
        }
        Ok(())
    }
}

/// Losses observed in one training step. Values are `None` for phases a
/// method does not run; present values are finite (non-finite ones abort the
/// step as divergence).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepReport {
    pub epoch: u32,
    pub step: u32,
    pub fsd_value: Option<f64>,
    pub seg_value_orig: f64,
    pub seg_value_aug: Option<f64>,
    pub adversarial_seg_value: Option<f64>,
}

/// One metrics-log record (a JSON line per epoch).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub method: String,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub fsd_mean: Option<f64>,
    pub seg_orig_mean: f64,
    pub seg_aug_mean: Option<f64>,
    pub adv_seg_mean: Option<f64>,
    pub val_dice_outer: f64,
    pub val_dice_inner: f64,
    pub val_dice_mean: f64,
}

/// Named RNG streams; every stochastic choice in training has its own.
#[derive(Serialize, Deserialize, Clone)]
pub struct RngStreams {
    pub data: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
    pub noise: ChaCha8Rng,
    pub mix: ChaCha8Rng,
    pub mc: ChaCha8Rng,
    pub partner: ChaCha8Rng,
}

impl RngStreams {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            data: stream(seed, "data-order"),
            dropout: stream(seed, "dropout"),
            noise: stream(seed, "style-noise"),
            mix: stream(seed, "mix-pattern"),
            mc: stream(seed, "mc-dropout"),
            partner: stream(seed, "swap-partner"),
        }
    }
}

/// The auxiliary style-augmentation networks and their optimizers.
pub struct AuxNets {
    pub recon: ReconDecoder,
    pub noise_enc: NoiseEncoder,
    /// Reconstruction-phase optimizers (one per network, same schedule).
    pub recon_opt_decoder: Adam,
    pub recon_opt_noise: Adam,
    /// The dedicated noise optimizer driven by the adversarial phase.
    pub noise_opt: Adam,
}

impl AuxNets {
    pub fn new(model: &ModelConfig, config: &TrainConfig, seed: u64) -> Result<Self> {
        let mut recon_rng = stream(seed, "init-recon");
        let mut noise_rng = stream(seed, "init-noise-enc");
        Ok(Self {
            recon: ReconDecoder::new(model, &mut recon_rng)?,
            noise_enc: NoiseEncoder::new(model, &mut noise_rng)?,
            recon_opt_decoder: Adam::new(config.recon_lr),
            recon_opt_noise: Adam::new(config.recon_lr),
            noise_opt: Adam::new(config.noise_lr),
        })
    }
}

/// Everything a method needs to run one step.
pub struct StepCtx<'a> {
    pub seg: &'a mut SegNetwork,
    pub seg_opt: &'a mut Sgd,
    pub aux: Option<&'a mut AuxNets>,
    pub rngs: &'a mut RngStreams,
    pub config: &'a TrainConfig,
    pub model: &'a ModelConfig,
    /// Reconstruction-loss weights decayed to the current epoch.
    pub weights_now: FsdWeights,
    pub mask: &'a FrequencyMask,
    /// The full training pool (partner sampling for the exchange baselines).
    pub pool: &'a [Sample],
    pub epoch: u32,
    pub step: u32,
}

fn dummy_rng() -> ChaCha8Rng {
    stream(0, "inactive-dropout")
}

/// Deterministic, dropout-free forward pass.
pub fn eval_forward(seg: &mut SegNetwork, image: &ImageTensor) -> Result<Tensor> {
    seg.forward(&Tensor::from_image(image), false, &mut dummy_rng())
}

/// Hard prediction via argmax of an eval-mode forward pass.
pub fn eval_predict(seg: &mut SegNetwork, image: &ImageTensor) -> Result<LabelMask> {
    Ok(tensor_to_prediction(&eval_forward(seg, image)?)?.argmax_mask())
}

fn ensure_finite(value: f64, what: &str, ctx: &StepCtx) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Divergence(format!(
            "{what} became non-finite at epoch {} step {} (method config: seed {}, seg_lr {}, batch {})",
            ctx.epoch, ctx.step, ctx.config.seed, ctx.config.seg_lr, ctx.config.batch_size
        )))
    }
}

/// Per-image style inputs drawn once per step and reused across phases.
pub struct StepStyles {
    pub noises: Vec<Vec<f32>>,
    pub patterns: Vec<MixPattern>,
}

/// Draw fresh noise and mix activations for a batch.
pub fn draw_styles(ctx: &mut StepCtx, batch_len: usize) -> StepStyles {
    let aux = ctx.aux.as_ref().expect("styles need the auxiliary nets");
    let noises = (0..batch_len)
        .map(|_| aux.noise_enc.sample_noise(&mut ctx.rngs.noise))
        .collect();
    let patterns = (0..batch_len)
        .map(|_| MixPattern::sample(&mut ctx.rngs.mix, ctx.model.mix_prob))
        .collect();
    StepStyles { noises, patterns }
}

fn styled_forward(
    aux: &mut AuxNets,
    image: &ImageTensor,
    noise: &[f32],
    pattern: &MixPattern,
) -> Result<(Tensor, StyleParams)> {
    let style = aux.noise_enc.forward(noise)?;
    let x = Tensor::from_image(image);
    let y = aux.recon.forward(&x, Some((&style, pattern)))?;
    Ok((y, style))
}

fn check_tensor(t: &Tensor, what: &str, ctx: &StepCtx) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence(format!(
            "{what} produced non-finite activations at epoch {} step {} (seed {}, seg_lr {}, batch {})",
            ctx.epoch, ctx.step, ctx.config.seed, ctx.config.seg_lr, ctx.config.batch_size
        )))
    }
}

/// Regenerate the styled images of a batch with the current networks
/// (forward only, clamped to the image range).
pub fn styled_batch(
    ctx: &mut StepCtx,
    batch: &[&Sample],
    styles: &StepStyles,
) -> Result<Vec<ImageTensor>> {
    let aux = ctx.aux.as_mut().expect("styled batch needs aux nets");
    batch
        .iter()
        .enumerate()
        .map(|(i, sample)| {
            let (t, _) = styled_forward(aux, &sample.image, &styles.noises[i], &styles.patterns[i])?;
            Ok(t.to_image()?.clamped())
        })
        .collect()
}

/// Phase 1: minimize the reconstruction loss over decoder and noise encoder.
///
/// With `use_fsd` the spectrum-diversity loss (with the epoch-decayed
/// weights) supervises the reconstruction; otherwise a plain pixel MSE does.
/// Returns the mean reconstruction loss.
pub fn phase_reconstruction(
    ctx: &mut StepCtx,
    batch: &[&Sample],
    styles: &StepStyles,
    use_fsd: bool,
) -> Result<f64> {
    let n = batch.len();
    {
        let aux = ctx.aux.as_mut().expect("reconstruction needs aux nets");
        zero_grads(&mut aux.recon);
        zero_grads(&mut aux.noise_enc);
    }
    let mut total = 0.0;
    for (i, sample) in batch.iter().enumerate() {
        let x_hat_t = {
            let aux = ctx.aux.as_mut().expect("reconstruction needs aux nets");
            styled_forward(aux, &sample.image, &styles.noises[i], &styles.patterns[i])?.0
        };
        check_tensor(&x_hat_t, "styled reconstruction", ctx)?;
        let x_hat = x_hat_t.to_image()?;
        let (loss, grad) = if use_fsd {
            fsd_loss_with_grad(&sample.image, &x_hat, &ctx.weights_now, ctx.mask)?
        } else {
            pixel_mse_with_grad(&sample.image, &x_hat)
        };
        let dy = grad_image_to_tensor(&grad);
        let aux = ctx.aux.as_mut().expect("reconstruction needs aux nets");
        let (_, style_grads) = aux.recon.backward(&dy);
        aux.noise_enc.backward(&style_grads);
        total += loss;
    }
    let loss = ensure_finite(total / n as f64, "reconstruction loss", ctx)?;
    let scale = 1.0 / n as f32;
    let aux = ctx.aux.as_mut().expect("reconstruction needs aux nets");
    aux.recon_opt_decoder.step(&mut aux.recon, scale);
    aux.recon_opt_noise.step(&mut aux.noise_enc, scale);
    Ok(loss)
}

/// Phase 2: one ascent step on the segmentation loss of the styled images,
/// updating only the noise encoder. Returns the (pre-update) mean loss.
pub fn phase_adversarial(
    ctx: &mut StepCtx,
    batch: &[&Sample],
    styles: &StepStyles,
) -> Result<f64> {
    let n = batch.len();
    {
        let aux = ctx.aux.as_mut().expect("adversarial phase needs aux nets");
        zero_grads(&mut aux.noise_enc);
    }
    let mut total = 0.0;
    for (i, sample) in batch.iter().enumerate() {
        let (x_hat_t, _) = {
            let aux = ctx.aux.as_mut().expect("adversarial phase needs aux nets");
            styled_forward(aux, &sample.image, &styles.noises[i], &styles.patterns[i])?
        };
        check_tensor(&x_hat_t, "styled reconstruction", ctx)?;
        let probs_t = ctx.seg.forward(&x_hat_t, false, &mut dummy_rng())?;
        check_tensor(&probs_t, "adversarial prediction", ctx)?;
        let pred = tensor_to_prediction(&probs_t)?;
        let u = UncertaintyMap::uniform(pred.dim().0, pred.dim().1);
        let (loss, grad) = seg_loss_with_grad(&pred, &sample.label, &u)?;
        total += loss;
        let dprobs = grad_to_tensor(&grad);
        let dx_hat = ctx.seg.backward(&dprobs);
        let aux = ctx.aux.as_mut().expect("adversarial phase needs aux nets");
        let (_, style_grads) = aux.recon.backward(&dx_hat);
        aux.noise_enc.backward(&style_grads);
    }
    let loss = ensure_finite(total / n as f64, "adversarial segmentation loss", ctx)?;
    // descent on the negated loss through the dedicated noise optimizer
    let aux = ctx.aux.as_mut().expect("adversarial phase needs aux nets");
    aux.noise_opt.step(&mut aux.noise_enc, -1.0 / n as f32);
    Ok(loss)
}

/// Phase 3: minimize the segmentation loss, updating only the segmentation
/// network.
///
/// `styled` regenerates the styled images with the *current* (post-ascent)
/// noise encoder. With `use_uiu` the per-pixel uncertainty is estimated by
/// stochastic passes on the original image, reweighted by the attention
/// regions, and applied to the cross-entropy of both images; otherwise unit
/// weights are used. Returns `(mean original loss, mean styled loss)`.
pub fn phase_segmentation(
    ctx: &mut StepCtx,
    batch: &[&Sample],
    styles: Option<&StepStyles>,
    use_uiu: bool,
) -> Result<(f64, Option<f64>)> {
    let n = batch.len();
    zero_grads(ctx.seg);
    let mut total_orig = 0.0;
    let mut total_aug = 0.0;
    let mut images_per_sample = 1usize;
    for (i, sample) in batch.iter().enumerate() {
        let x_hat = match styles {
            Some(s) => {
                let t = {
                    let aux = ctx.aux.as_mut().expect("styled phase needs aux nets");
                    let (t, _) =
                        styled_forward(aux, &sample.image, &s.noises[i], &s.patterns[i])?;
                    t
                };
                check_tensor(&t, "styled reconstruction", ctx)?;
                Some(t.to_image()?.clamped())
            }
            None => None,
        };

        let weight = if use_uiu {
            let x_hat = x_hat.as_ref().expect("uncertainty weighting needs styled images");
            let raw = mc_uncertainty(
                ctx.seg,
                &sample.image,
                ctx.config.mc_passes,
                ctx.config.mc_noise_std,
                &mut ctx.rngs.mc,
            )?;
            let u = raw.normalized_to_unit_mean();
            let pred = eval_predict(ctx.seg, &sample.image)?;
            let pred_aug = eval_predict(ctx.seg, x_hat)?;
            let regions = attention_regions(&pred, &pred_aug, &sample.label)?;
            reweight(&u, &regions, ctx.config.rho, ctx.config.sigma)?
        } else {
            let (h, w, _) = sample.image.dim();
            UncertaintyMap::uniform(h, w)
        };

        let x_t = Tensor::from_image(&sample.image);
        let probs = ctx.seg.forward(&x_t, true, &mut ctx.rngs.dropout)?;
        check_tensor(&probs, "segmentation prediction", ctx)?;
        let pred = tensor_to_prediction(&probs)?;
        let (loss_orig, grad) = seg_loss_with_grad(&pred, &sample.label, &weight)?;
        ctx.seg.backward(&grad_to_tensor(&grad));
        total_orig += loss_orig;

        if let Some(x_hat) = x_hat {
            images_per_sample = 2;
            let t = Tensor::from_image(&x_hat);
            let probs = ctx.seg.forward(&t, true, &mut ctx.rngs.dropout)?;
            check_tensor(&probs, "styled segmentation prediction", ctx)?;
            let pred = tensor_to_prediction(&probs)?;
            let (loss_aug, grad) = seg_loss_with_grad(&pred, &sample.label, &weight)?;
            ctx.seg.backward(&grad_to_tensor(&grad));
            total_aug += loss_aug;
        }
    }
    let loss_orig = ensure_finite(total_orig / n as f64, "segmentation loss", ctx)?;
    let loss_aug = if images_per_sample == 2 {
        Some(ensure_finite(total_aug / n as f64, "styled segmentation loss", ctx)?)
    } else {
        None
    };
    ctx.seg_opt.step(ctx.seg, 1.0 / n as f32);
    Ok((loss_orig, loss_aug))
}

fn pixel_mse_with_grad(x: &ImageTensor, x_hat: &ImageTensor) -> (f64, Array3<f64>) {
    let n = x.data().len() as f64;
    let mut loss = 0.0;
    let mut grad = Array3::zeros(x.dim());
    ndarray::Zip::from(&mut grad)
        .and(x.data())
        .and(x_hat.data())
        .for_each(|g, &a, &b| {
            let d = b - a;
            loss += d * d;
            *g = 2.0 * d / n;
        });
    (loss / n, grad)
}

fn grad_image_to_tensor(grad: &Array3<f64>) -> Tensor {
    let (h, w, c) = grad.dim();
    let mut t = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for r in 0..h {
            for q in 0..w {
                *t.at_mut(ch, r, q) = grad[[r, q, ch]] as f32;
            }
        }
    }
    t
}

/// A self-describing checkpoint: configuration echo, epoch counter, flat
/// network weights, and the RNG stream state at save time.
#[derive(Serialize, Deserialize, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub method: String,
    pub epoch: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seg_params: Vec<f32>,
    pub recon_params: Option<Vec<f32>>,
    pub noise_params: Option<Vec<f32>>,
    pub rng: RngStreams,
}

impl Checkpoint {
    pub fn capture(
        method: &str,
        epoch: u32,
        model: &ModelConfig,
        train: &TrainConfig,
        seg: &mut SegNetwork,
        aux: Option<&mut AuxNets>,
        rng: &RngStreams,
    ) -> Self {
        let (recon_params, noise_params) = match aux {
            Some(aux) => (
                Some(export_params(&mut aux.recon)),
                Some(export_params(&mut aux.noise_enc)),
            ),
            None => (None, None),
        };
        Self {
            version: 1,
            method: method.to_string(),
            epoch,
            model: model.clone(),
            train: train.clone(),
            seg_params: export_params(seg),
            recon_params,
            noise_params,
            rng: rng.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    /// Rebuild the segmentation network from the stored weights.
    pub fn restore_seg(&self) -> Result<SegNetwork> {
        let mut rng = stream(0, "restore");
        let mut seg = SegNetwork::new(&self.model, &mut rng)?;
        import_params(&mut seg, &self.seg_params)?;
        Ok(seg)
    }

    /// Rebuild the style-augmentation networks, if the run trained them.
    pub fn restore_aux(&self) -> Result<Option<(ReconDecoder, NoiseEncoder)>> {
        let (Some(recon_params), Some(noise_params)) = (&self.recon_params, &self.noise_params)
        else {
            return Ok(None);
        };
        let mut rng = stream(0, "restore");
        let mut recon = ReconDecoder::new(&self.model, &mut rng)?;
        let mut noise = NoiseEncoder::new(&self.model, &mut rng)?;
        import_params(&mut recon, recon_params)?;
        import_params(&mut noise, noise_params)?;
        Ok(Some((recon, noise)))
    }
}

/// Result of a completed training run.
pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
    pub records: Vec<EpochRecord>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.jsonl";

fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

fn val_dice(seg: &mut SegNetwork, val: &[Sample]) -> Result<(f64, f64)> {
    let mut outer = 0.0;
    let mut inner = 0.0;
    for sample in val {
        let pred = eval_predict(seg, &sample.image)?;
        outer += hard_dice(&pred, &sample.label, crate::data::CLASS_OUTER);
        inner += hard_dice(&pred, &sample.label, crate::data::CLASS_INNER);
    }
    let n = val.len().max(1) as f64;
    Ok((outer / n, inner / n))
}

/// Run a full training loop of the named method over the benchmark's source
/// domain, writing a metrics log and periodic checkpoints under `run_dir`.
/// Returns the final checkpoint path.
///
/// On divergence the last end-of-epoch checkpoint survives on disk and the
/// error carries a config echo.
pub fn train(
    method_name: &str,
    model: &ModelConfig,
    config: &TrainConfig,
    data: &LoadedBenchmark,
    run_dir: &Path,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    if data.train.is_empty() {
        return Err(Error::validation("training split is empty"));
    }
    let mut method = methods::make_method(method_name)?;
    fs::create_dir_all(run_dir)?;

    let mut seg_rng = stream(config.seed, "init-seg");
    let mut seg = SegNetwork::new(model, &mut seg_rng)?;
    let mut seg_opt = Sgd::new(config.seg_lr, config.seg_momentum);
    let mut aux = if method.wants_aux() {
        Some(AuxNets::new(model, config, config.seed)?)
    } else {
        None
    };
    let mut rngs = RngStreams::from_seed(config.seed);
    let image_size = data.image_size();
    let mask = make_low_freq_mask(image_size, image_size, config.mask_ratio)?;

    let checkpoint_path = run_dir.join(CHECKPOINT_FILE);
    let metrics_path = run_dir.join(METRICS_FILE);
    let mut metrics = std::io::BufWriter::new(fs::File::create(&metrics_path)?);

    // initial checkpoint: epochs = 0 emits exactly this and stops
    Checkpoint::capture(method_name, 0, model, config, &mut seg, aux.as_mut(), &rngs)
        .save(&checkpoint_path)?;

    let mut records = Vec::new();
    for epoch in 0..config.epochs {
        let weights_now = config.fsd.decayed(epoch);
        let order = shuffled_indices(data.train.len(), &mut rngs.data);
        let mut sums = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut counts = (0u32, 0u32, 0u32, 0u32);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|i| &data.train[*i]).collect();
            let mut ctx = StepCtx {
                seg: &mut seg,
                seg_opt: &mut seg_opt,
                aux: aux.as_mut(),
                rngs: &mut rngs,
                config,
                model,
                weights_now,
                mask: &mask,
                pool: &data.train,
                epoch,
                step: step as u32,
            };
            let report = method.step(&mut ctx, &batch)?;
            sums.1 += report.seg_value_orig;
            counts.1 += 1;
            if let Some(v) = report.fsd_value {
                sums.0 += v;
                counts.0 += 1;
            }
            if let Some(v) = report.seg_value_aug {
                sums.2 += v;
                counts.2 += 1;
            }
            if let Some(v) = report.adversarial_seg_value {
                sums.3 += v;
                counts.3 += 1;
            }
        }

        let (dice_outer, dice_inner) = val_dice(&mut seg, &data.val)?;
        let mean = |s: f64, c: u32| if c > 0 { Some(s / c as f64) } else { None };
        let record = EpochRecord {
            epoch,
            method: method_name.to_string(),
            lambda1: weights_now.lambda1,
            lambda2: weights_now.lambda2,
            lambda3: weights_now.lambda3,
            fsd_mean: mean(sums.0, counts.0),
            seg_orig_mean: sums.1 / counts.1.max(1) as f64,
            seg_aug_mean: mean(sums.2, counts.2),
            adv_seg_mean: mean(sums.3, counts.3),
            val_dice_outer: dice_outer,
            val_dice_inner: dice_inner,
            val_dice_mean: 0.5 * (dice_outer + dice_inner),
        };
        serde_json::to_writer(&mut metrics, &record)?;
        metrics.write_all(b"\n")?;
        metrics.flush()?;
        records.push(record);

        let is_last = epoch + 1 == config.epochs;
        if (epoch + 1) % config.checkpoint_every == 0 || is_last {
            Checkpoint::capture(
                method_name,
                epoch + 1,
                model,
                config,
                &mut seg,
                aux.as_mut(),
                &rngs,
            )
            .save(&checkpoint_path)?;
        }
    }
    metrics.flush()?;
    Ok(TrainOutcome {
        checkpoint_path,
        metrics_path,
        records,
    })
}

/// Per-domain Dice statistics of a checkpointed model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiceReport {
    pub domain: String,
    /// `(class name, mean, std)` over the domain's images, foreground
    /// classes only.
    pub classes: Vec<(String, f64, f64)>,
    /// Per-image Dice values per foreground class.
    pub per_image: Vec<(u64, Vec<f64>)>,
}

impl DiceReport {
    pub fn mean_dice(&self) -> f64 {
        let s: f64 = self.classes.iter().map(|(_, m, _)| m).sum();
        s / self.classes.len().max(1) as f64
    }
}

/// Evaluate any hard predictor over a sample set.
pub fn evaluate_predictor(
    mut predict: impl FnMut(&ImageTensor) -> Result<LabelMask>,
    domain: &str,
    samples: &[Sample],
) -> Result<DiceReport> {
    let class_defs = [
        ("outer", crate::data::CLASS_OUTER),
        ("inner", crate::data::CLASS_INNER),
    ];
    let mut per_image = Vec::new();
    for sample in samples {
        let pred = predict(&sample.image)?;
        let dices: Vec<f64> = class_defs
            .iter()
            .map(|(_, k)| hard_dice(&pred, &sample.label, *k))
            .collect();
        per_image.push((sample.id, dices));
    }
    let classes = class_defs
        .iter()
        .enumerate()
        .map(|(i, (name, _))| {
            let vals: Vec<f64> = per_image.iter().map(|(_, d)| d[i]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / vals.len().max(1) as f64;
            (name.to_string(), mean, var.sqrt())
        })
        .collect();
    Ok(DiceReport {
        domain: domain.to_string(),
        classes,
        per_image,
    })
}

/// Evaluate a checkpoint on one domain of the benchmark (hard Dice, argmax
/// prediction vs label). The checkpoint file is only read.
pub fn evaluate(checkpoint: &Path, data: &LoadedBenchmark, domain: &str) -> Result<DiceReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut seg = ckpt.restore_seg()?;
    let samples = data
        .domain(domain)
        .ok_or_else(|| Error::validation(format!("domain '{domain}' not in dataset")))?;
    evaluate_predictor(
        |image| eval_predict(&mut seg, image),
        domain,
        &samples.samples,
    )
}
