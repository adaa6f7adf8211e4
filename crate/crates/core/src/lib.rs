//! Desk-scale laboratory for single-source domain-generalizable image
//! segmentation.
//!
//! The crate provides the full pipeline: Fourier-domain primitives and
//! amplitude-exchange augmentations ([`spectral`]), the reconstruction and
//! segmentation losses ([`losses`]), Monte-Carlo-dropout uncertainty with
//! attention-region reweighting ([`uncertainty`]), toy trainable networks
//! ([`models`]) on a small hand-rolled autodiff stack ([`nn`]), a synthetic
//! multi-domain benchmark ([`data`]), and the adversarial training loop with
//! its interchangeable method strategies ([`train`]).

pub mod config;
pub mod data;
pub mod error;
pub mod image;
pub mod losses;
pub mod models;
pub mod nn;
pub mod report;
pub mod rng;
pub mod spectral;
pub mod train;
pub mod uncertainty;

pub use error::{Error, Result};
pub use image::ImageTensor;
