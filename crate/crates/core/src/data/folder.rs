//! Loading datasets from image folders.
//!
//! A labeled folder has one subdirectory per class; an unlabeled folder is
//! flat. Paths are sorted lexicographically, so class ids and sample order
//! are stable across runs.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use serde::{Deserialize, Serialize};

use super::{ImageShape, LabeledSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FolderSpec {
    pub train: PathBuf,
    pub test: PathBuf,
    pub unlabeled: PathBuf,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_size")]
    pub image_size: usize,
}

fn default_channels() -> usize {
    1
}

fn default_size() -> usize {
    16
}

/// Result of ingesting a folder.
#[derive(Debug, Clone, PartialEq)]
pub enum FolderData {
    Labeled {
        samples: Vec<LabeledSample>,
        class_names: Vec<String>,
    },
    Unlabeled(Vec<Vec<f32>>),
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    out.sort();
    Ok(out)
}

fn load_image(path: &Path, shape: ImageShape) -> Option<Vec<f32>> {
    let img = match image::open(path) {
        Ok(img) => img,
        Err(e) => {
            log::warn!("skipping unreadable image {}: {e}", path.display());
            return None;
        }
    };
    let s = shape.size as u32;
    let img = img.resize_exact(s, s, FilterType::Triangle);
    let n = shape.size * shape.size;
    let mut out = vec![0.0f32; shape.len()];
    match shape.channels {
        1 => {
            for (o, p) in out.iter_mut().zip(img.to_luma8().pixels()) {
                *o = p.0[0] as f32 / 255.0;
            }
        }
        _ => {
            for (i, p) in img.to_rgb8().pixels().enumerate() {
                for ch in 0..3 {
                    out[ch * n + i] = p.0[ch] as f32 / 255.0;
                }
            }
        }
    }
    Some(out)
}

/// Reads a folder of class subdirectories, or a flat folder of images when
/// it contains no subdirectories. Unreadable files are skipped with a
/// warning; a class directory with no readable image is an error.
pub fn ingest_image_folder(path: &Path, shape: ImageShape) -> Result<FolderData> {
    if shape.channels != 1 && shape.channels != 3 {
        return Err(Error::config("dataset.folder.channels", "must be 1 or 3"));
    }
    let entries = sorted_entries(path)?;
    let dirs: Vec<&PathBuf> = entries.iter().filter(|p| p.is_dir()).collect();
    if dirs.is_empty() {
        let images = entries
            .iter()
            .filter(|p| p.is_file())
            .filter_map(|p| load_image(p, shape))
            .collect();
        return Ok(FolderData::Unlabeled(images));
    }
    let mut samples = Vec::new();
    let mut class_names = Vec::new();
    for (label, dir) in dirs.into_iter().enumerate() {
        let before = samples.len();
        for file in sorted_entries(dir)?.into_iter().filter(|p| p.is_file()) {
            if let Some(image) = load_image(&file, shape) {
                samples.push(LabeledSample {
                    id: samples.len(),
                    label,
                    image,
                });
            }
        }
        if samples.len() == before {
            return Err(Error::Format(format!("class folder {} has no readable images", dir.display())));
        }
        class_names.push(dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
    }
    Ok(FolderData::Labeled { samples, class_names })
}
