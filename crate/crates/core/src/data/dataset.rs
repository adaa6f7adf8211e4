//! Dataset persistence: one directory per domain holding 16-bit grayscale
//! image PNGs and 8-bit class-index label PNGs, plus a manifest with
//! per-file checksums and a content hash over the whole dataset.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::LabelMask;

use super::{generate_domain, BenchmarkSpec, NUM_CLASSES};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: u64,
    pub image_file: String,
    pub label_file: String,
    pub image_sha256: String,
    pub label_sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainManifest {
    pub name: String,
    pub role: String, // "source" | "target"
    /// For the source domain: how many leading ids form the training split.
    pub train_count: usize,
    pub samples: Vec<SampleEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub image_size: usize,
    pub classes: usize,
    pub spec: BenchmarkSpec,
    pub domains: Vec<DomainManifest>,
    /// Content hash: sha256 over the ordered per-file hashes.
    pub dataset_hash: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn image_to_png_bytes(img: &ImageTensor) -> Result<Vec<u8>> {
    let (h, w, c) = img.dim();
    if c != 1 {
        return Err(Error::validation("dataset images are single-channel"));
    }
    let mut buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(w as u32, h as u32);
    for r in 0..h {
        for q in 0..w {
            let v = (img.data()[[r, q, 0]].clamp(0.0, 1.0) * 65535.0).round() as u16;
            buf.put_pixel(q as u32, r as u32, Luma([v]));
        }
    }
    let mut bytes = Vec::new();
    image::DynamicImage::ImageLuma16(buf)
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    Ok(bytes)
}

fn label_to_png_bytes(label: &LabelMask) -> Result<Vec<u8>> {
    let (h, w, k) = label.dim();
    let mut buf = GrayImage::new(w as u32, h as u32);
    for r in 0..h {
        for q in 0..w {
            let class = (0..k)
                .find(|i| label.onehot()[[r, q, *i]] == 1.0)
                .ok_or_else(|| Error::validation("label pixel has no class"))?;
            buf.put_pixel(q as u32, r as u32, Luma([class as u8]));
        }
    }
    let mut bytes = Vec::new();
    image::DynamicImage::ImageLuma8(buf)
        .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    Ok(bytes)
}

fn png_bytes_to_image(bytes: &[u8]) -> Result<ImageTensor> {
    let img = image::load_from_memory(bytes)?.into_luma16();
    let (w, h) = img.dimensions();
    let mut data = Array3::zeros((h as usize, w as usize, 1));
    for r in 0..h {
        for q in 0..w {
            data[[r as usize, q as usize, 0]] = img.get_pixel(q, r).0[0] as f64 / 65535.0;
        }
    }
    ImageTensor::new(data)
}

fn png_bytes_to_label(bytes: &[u8], classes: usize) -> Result<LabelMask> {
    let img = image::load_from_memory(bytes)?.into_luma8();
    let (w, h) = img.dimensions();
    let mut map = Array2::zeros((h as usize, w as usize));
    for r in 0..h {
        for q in 0..w {
            map[[r as usize, q as usize]] = img.get_pixel(q, r).0[0] as usize;
        }
    }
    LabelMask::from_classes(&map, classes)
}

/// Generate the full benchmark and persist it under `dir`.
///
/// Layout: `dir/<domain>/img_NNNN.png` + `lab_NNNN.png` plus
/// `dir/manifest.json`. Re-running with the same spec produces byte-identical
/// files and hashes.
pub fn save_dataset(dir: &Path, spec: &BenchmarkSpec) -> Result<DatasetManifest> {
    spec.validate()?;
    fs::create_dir_all(dir)?;
    let mut domains = Vec::new();
    let mut hash_input = String::new();
    for (domain_idx, (domain, count)) in spec.domains().into_iter().enumerate() {
        let records = generate_domain(&domain, count, spec.image_size)?;
        let domain_dir = dir.join(&domain.name);
        fs::create_dir_all(&domain_dir)?;
        let mut samples = Vec::new();
        for rec in &records {
            let image_file = format!("img_{:04}.png", rec.id);
            let label_file = format!("lab_{:04}.png", rec.id);
            let image_bytes = image_to_png_bytes(&rec.image)?;
            let label_bytes = label_to_png_bytes(&rec.label)?;
            fs::write(domain_dir.join(&image_file), &image_bytes)?;
            fs::write(domain_dir.join(&label_file), &label_bytes)?;
            let entry = SampleEntry {
                id: rec.id,
                image_file,
                label_file,
                image_sha256: sha256_hex(&image_bytes),
                label_sha256: sha256_hex(&label_bytes),
            };
            hash_input.push_str(&domain.name);
            hash_input.push('/');
            hash_input.push_str(&entry.image_sha256);
            hash_input.push('/');
            hash_input.push_str(&entry.label_sha256);
            hash_input.push('\n');
            samples.push(entry);
        }
        domains.push(DomainManifest {
            name: domain.name.clone(),
            role: if domain_idx == 0 { "source" } else { "target" }.to_string(),
            train_count: if domain_idx == 0 { spec.source_train } else { 0 },
            samples,
        });
    }
    let manifest = DatasetManifest {
        version: 1,
        image_size: spec.image_size,
        classes: NUM_CLASSES,
        spec: spec.clone(),
        domains,
        dataset_hash: sha256_hex(hash_input.as_bytes()),
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// One loaded sample, ready for training or evaluation.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: u64,
    pub image: ImageTensor,
    pub label: LabelMask,
}

#[derive(Debug, Clone)]
pub struct LoadedDomain {
    pub name: String,
    pub samples: Vec<Sample>,
}

/// The benchmark as used by training: a source train/val split plus target
/// domains.
#[derive(Debug)]
pub struct LoadedBenchmark {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub targets: Vec<LoadedDomain>,
}

impl LoadedBenchmark {
    pub fn image_size(&self) -> usize {
        self.manifest.image_size
    }

    pub fn classes(&self) -> usize {
        self.manifest.classes
    }

    /// Look up a domain (including "source") by name.
    pub fn domain(&self, name: &str) -> Option<LoadedDomain> {
        if name == "source" {
            let mut samples = self.train.clone();
            samples.extend(self.val.iter().cloned());
            return Some(LoadedDomain {
                name: "source".into(),
                samples,
            });
        }
        self.targets.iter().find(|d| d.name == name).cloned()
    }

    pub fn domain_names(&self) -> Vec<String> {
        let mut names = vec!["source".to_string()];
        names.extend(self.targets.iter().map(|d| d.name.clone()));
        names
    }
}

/// Load a dataset directory produced by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<LoadedBenchmark> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(Error::validation(format!(
            "no {MANIFEST_FILE} under {}",
            dir.display()
        )));
    }
    let manifest: DatasetManifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut targets: BTreeMap<usize, LoadedDomain> = BTreeMap::new();
    for (idx, domain) in manifest.domains.iter().enumerate() {
        let domain_dir = dir.join(&domain.name);
        let mut samples = Vec::new();
        for entry in &domain.samples {
            let image = png_bytes_to_image(&fs::read(domain_dir.join(&entry.image_file))?)?;
            let label =
                png_bytes_to_label(&fs::read(domain_dir.join(&entry.label_file))?, manifest.classes)?;
            samples.push(Sample {
                id: entry.id,
                image,
                label,
            });
        }
        if domain.role == "source" {
            for s in samples {
                if (s.id as usize) < domain.train_count {
                    train.push(s);
                } else {
                    val.push(s);
                }
            }
        } else {
            targets.insert(
                idx,
                LoadedDomain {
                    name: domain.name.clone(),
                    samples,
                },
            );
        }
    }
    if train.is_empty() {
        return Err(Error::validation("dataset has no training samples"));
    }
    Ok(LoadedBenchmark {
        manifest,
        root: dir.to_path_buf(),
        train,
        val,
        targets: targets.into_values().collect(),
    })
}
