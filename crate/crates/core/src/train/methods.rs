//! The training-method registry: every method variant sits behind one trait,
//! is registered by name, and is selected at runtime from config or CLI.

use rand::Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::spectral::{fact_mixup, fda_swap};

use super::{
    draw_styles, phase_adversarial, phase_reconstruction, phase_segmentation, StepCtx, StepReport,
};

/// One interchangeable training strategy.
pub trait TrainMethod {
    fn name(&self) -> &'static str;
    /// Whether the method trains the reconstruction decoder and noise
    /// encoder alongside the segmenter.
    fn wants_aux(&self) -> bool {
        false
    }
    /// Run one optimization step over a batch.
    fn step(&mut self, ctx: &mut StepCtx, batch: &[&Sample]) -> Result<StepReport>;
}

/// Registry entry: a name, a one-line summary, and a constructor.
pub struct MethodEntry {
    pub name: &'static str,
    pub summary: &'static str,
    build: fn() -> Box<dyn TrainMethod>,
}

/// All registered methods, in presentation order.
pub fn registry() -> &'static [MethodEntry] {
    &[
        MethodEntry {
            name: "baseline",
            summary: "plain segmentation training, no augmentation",
            build: || Box::new(Baseline),
        },
        MethodEntry {
            name: "fda",
            summary: "low-frequency amplitude swap with a random training partner",
            build: || Box::new(FourierExchange { mixup: false }),
        },
        MethodEntry {
            name: "fact",
            summary: "low-frequency amplitude mixup with a random training partner",
            build: || Box::new(FourierExchange { mixup: true }),
        },
        MethodEntry {
            name: "asa",
            summary: "adversarial style augmentation with a plain reconstruction loss",
            build: || {
                Box::new(Adversarial {
                    use_fsd: false,
                    use_uiu: false,
                })
            },
        },
        MethodEntry {
            name: "asa-fsd",
            summary: "adversarial style augmentation with the spectrum-diversity loss",
            build: || {
                Box::new(Adversarial {
                    use_fsd: true,
                    use_uiu: false,
                })
            },
        },
        MethodEntry {
            name: "morestyle",
            summary: "full pipeline: spectrum-diversity recon, adversarial styles, uncertainty-weighted loss",
            build: || {
                Box::new(Adversarial {
                    use_fsd: true,
                    use_uiu: true,
                })
            },
        },
    ]
}

pub fn method_names() -> Vec<&'static str> {
    registry().iter().map(|e| e.name).collect()
}

/// Look a method up by name.
pub fn make_method(name: &str) -> Result<Box<dyn TrainMethod>> {
    registry()
        .iter()
        .find(|e| e.name == name)
        .map(|e| (e.build)())
        .ok_or_else(|| {
            Error::validation(format!(
                "unknown method '{name}'; available: {}",
                method_names().join(", ")
            ))
        })
}

struct Baseline;

impl TrainMethod for Baseline {
    fn name(&self) -> &'static str {
        "baseline"
    }

    fn step(&mut self, ctx: &mut StepCtx, batch: &[&Sample]) -> Result<StepReport> {
        let (seg_value_orig, _) = phase_segmentation(ctx, batch, None, false)?;
        Ok(StepReport {
            epoch: ctx.epoch,
            step: ctx.step,
            fsd_value: None,
            seg_value_orig,
            seg_value_aug: None,
            adversarial_seg_value: None,
        })
    }
}

/// The classic amplitude-exchange augmentations: each training image is
/// restyled against a random partner from the training pool before the
/// segmentation step. A swap ratio of zero degenerates to the baseline.
struct FourierExchange {
    mixup: bool,
}

impl FourierExchange {
    fn augment(&self, ctx: &mut StepCtx, sample: &Sample) -> Result<ImageTensor> {
        if ctx.config.swap_ratio == 0.0 {
            return Ok(sample.image.clone());
        }
        let partner_idx = ctx.rngs.partner.gen_range(0..ctx.pool.len());
        let partner = &ctx.pool[partner_idx].image;
        let styled = if self.mixup {
            let mix = ctx.rngs.partner.gen_range(0.0..=1.0);
            fact_mixup(&sample.image, partner, ctx.config.swap_ratio, mix)?
        } else {
            fda_swap(&sample.image, partner, ctx.config.swap_ratio)?
        };
        Ok(styled.clamped())
    }
}

impl TrainMethod for FourierExchange {
    fn name(&self) -> &'static str {
        if self.mixup {
            "fact"
        } else {
            "fda"
        }
    }

    fn step(&mut self, ctx: &mut StepCtx, batch: &[&Sample]) -> Result<StepReport> {
        let augmented: Vec<Sample> = batch
            .iter()
            .map(|s| {
                Ok(Sample {
                    id: s.id,
                    image: self.augment(ctx, s)?,
                    label: s.label.clone(),
                })
            })
            .collect::<Result<_>>()?;
        let aug_refs: Vec<&Sample> = augmented.iter().collect();
        let (seg_value_orig, _) = phase_segmentation(ctx, &aug_refs, None, false)?;
        Ok(StepReport {
            epoch: ctx.epoch,
            step: ctx.step,
            fsd_value: None,
            seg_value_orig,
            seg_value_aug: None,
            adversarial_seg_value: None,
        })
    }
}

/// The adversarial three-phase pipeline. `use_fsd` selects the
/// spectrum-diversity reconstruction loss over plain MSE; `use_uiu` enables
/// the uncertainty-weighted segmentation loss.
struct Adversarial {
    use_fsd: bool,
    use_uiu: bool,
}

impl TrainMethod for Adversarial {
    fn name(&self) -> &'static str {
        match (self.use_fsd, self.use_uiu) {
            (false, _) => "asa",
            (true, false) => "asa-fsd",
            (true, true) => "morestyle",
        }
    }

    fn wants_aux(&self) -> bool {
        true
    }

    fn step(&mut self, ctx: &mut StepCtx, batch: &[&Sample]) -> Result<StepReport> {
        let styles = draw_styles(ctx, batch.len());
        let fsd_value = phase_reconstruction(ctx, batch, &styles, self.use_fsd)?;
        let adversarial_seg_value = Some(phase_adversarial(ctx, batch, &styles)?);
        let (seg_value_orig, seg_value_aug) =
            phase_segmentation(ctx, batch, Some(&styles), self.use_uiu)?;
        Ok(StepReport {
            epoch: ctx.epoch,
            step: ctx.step,
            fsd_value: Some(fsd_value),
            seg_value_orig,
            seg_value_aug,
            adversarial_seg_value,
        })
    }
}
