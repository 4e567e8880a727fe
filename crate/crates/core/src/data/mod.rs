//! Synthetic shape scenes, labelled/unlabelled splits, and PNM image I/O.

mod pnm;
mod scene;
mod split;

pub use pnm::{
    export_image_ppm, export_pgm, export_ppm, parse_pnm, Palette, PnmImage, DEFAULT_PALETTE,
    UNKNOWN_CLASS_RGB,
};
pub use scene::{generate_scene, generate_scenes, SceneConfig, SceneMeta, ShapeKind, SyntheticScene};
pub use split::{make_split, read_manifest, write_manifest, DatasetSplit, ManifestRecord};

use crate::error::{bail, Result};
use crate::tensorkit::IGNORE_INDEX;

/// Label value excluded from losses and metrics.
pub const IGNORE_LABEL: u8 = 255;

/// Dense H×W class-index map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            bail!(Argument, "label map {}×{} with {} entries", height, width, labels.len());
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self {
            height,
            width,
            labels: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.labels[y * self.width + x] = v;
    }

    /// Class indices with [`IGNORE_LABEL`] mapped to [`IGNORE_INDEX`].
    pub fn to_indices(&self) -> Vec<usize> {
        self.labels
            .iter()
            .map(|&l| if l == IGNORE_LABEL { IGNORE_INDEX } else { l as usize })
            .collect()
    }
}
