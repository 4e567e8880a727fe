//! Weak and strong view generation.
//!
//! Geometry is an isotropic zoom about a chosen window, optionally mirrored
//! horizontally. The same [`Warp`] drives images (bilinear), label maps
//! (nearest, padding → ignore) and any other per-pixel target map (nearest,
//! padding → 0), so all of them stay pixel-aligned.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{LabelMap, IGNORE_LABEL};
use crate::error::{bail, Result};
use crate::seeding::{stream_rng, Stream};
use crate::tensorkit::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentationKind {
    Weak,
    Strong,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationSpec {
    pub kind: AugmentationKind,
    /// Zoom factor range; values above 1 magnify.
    pub scale_range: (f64, f64),
    pub flip_prob: f64,
    /// Output window (height, width) placed at a random offset; `None`
    /// keeps the input size with a centred window.
    pub crop_size: Option<(usize, usize)>,
    pub brightness_range: (f64, f64),
    pub contrast_range: (f64, f64),
    pub noise_sigma: f64,
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        Self {
            kind: AugmentationKind::Weak,
            scale_range: (1.0, 1.0),
            flip_prob: 0.0,
            crop_size: None,
            brightness_range: (1.0, 1.0),
            contrast_range: (1.0, 1.0),
            noise_sigma: 0.0,
        }
    }

    pub fn weak() -> Self {
        Self {
            scale_range: (1.0, 1.25),
            flip_prob: 0.5,
            ..Self::identity()
        }
    }

    pub fn strong(crop: (usize, usize)) -> Self {
        Self {
            kind: AugmentationKind::Strong,
            scale_range: (1.0, 1.5),
            flip_prob: 0.5,
            crop_size: Some(crop),
            brightness_range: (0.6, 1.4),
            contrast_range: (0.6, 1.4),
            noise_sigma: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if !range_ok(self.scale_range) || !range_ok(self.brightness_range) || !range_ok(self.contrast_range) {
            bail!(Config, "augmentation ranges must be positive and ordered");
        }
        if !(0.0..=1.0).contains(&self.flip_prob) || !(self.noise_sigma >= 0.0) {
            bail!(Config, "flip probability or noise level out of range");
        }
        if matches!(self.crop_size, Some((0, _)) | Some((_, 0))) {
            bail!(Config, "empty crop");
        }
        if self.kind == AugmentationKind::Weak
            && (self.crop_size.is_some()
                || self.brightness_range != (1.0, 1.0)
                || self.contrast_range != (1.0, 1.0)
                || self.noise_sigma != 0.0)
        {
            bail!(Config, "weak augmentation allows only scaling and horizontal flips");
        }
        Ok(())
    }
}

/// Output pixel → source pixel mapping of one geometric transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Warp {
    pub src_h: usize,
    pub src_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub scale: f64,
    /// Window origin in zoomed coordinates.
    pub start_y: f64,
    pub start_x: f64,
    pub flip: bool,
}

impl Warp {
    pub fn identity(h: usize, w: usize) -> Self {
        Self {
            src_h: h,
            src_w: w,
            out_h: h,
            out_w: w,
            scale: 1.0,
            start_y: 0.0,
            start_x: 0.0,
            flip: false,
        }
    }

    /// Continuous source coordinates (pixel-index units) of output pixel.
    pub fn source(&self, oy: usize, ox: usize) -> (f64, f64) {
        let sy = (oy as f64 + 0.5 + self.start_y) / self.scale - 0.5;
        let mut sx = (ox as f64 + 0.5 + self.start_x) / self.scale - 0.5;
        if self.flip {
            sx = (self.src_w - 1) as f64 - sx;
        }
        (sy, sx)
    }

    /// Nearest source pixel, or `None` for padding.
    pub fn nearest(&self, oy: usize, ox: usize) -> Option<(usize, usize)> {
        let (sy, sx) = self.source(oy, ox);
        let (ny, nx) = ((sy + 0.5).floor(), (sx + 0.5).floor());
        (ny >= 0.0 && nx >= 0.0 && ny < self.src_h as f64 && nx < self.src_w as f64)
            .then_some((ny as usize, nx as usize))
    }

    pub fn valid_mask(&self) -> Tensor {
        let data = (0..self.out_h * self.out_w)
            .map(|p| self.nearest(p / self.out_w, p % self.out_w).map_or(0.0, |_| 1.0))
            .collect();
        Tensor::new(&[self.out_h, self.out_w], data).expect("non-empty window")
    }

    /// Bilinear resampling of an H×W×C image; padding is 0.
    pub fn warp_image(&self, image: &Tensor) -> Result<Tensor> {
        let &[h, w, ch] = image.shape() else {
            bail!(Argument, "image must be H×W×C, got {:?}", image.shape());
        };
        if (h, w) != (self.src_h, self.src_w) {
            bail!(Argument, "image {h}×{w} does not match warp source");
        }
        let src = image.data();
        let mut out = vec![0.0; self.out_h * self.out_w * ch];
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                if self.nearest(oy, ox).is_none() {
                    continue;
                }
                let (sy, sx) = self.source(oy, ox);
                let (sy, sx) = (sy.clamp(0.0, (h - 1) as f64), sx.clamp(0.0, (w - 1) as f64));
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                let dst = &mut out[(oy * self.out_w + ox) * ch..(oy * self.out_w + ox + 1) * ch];
                for (k, d) in dst.iter_mut().enumerate() {
                    let at = |y: usize, x: usize| src[(y * w + x) * ch + k];
                    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                    *d = if fy == 0.0 { top } else { top * (1.0 - fy) + bottom * fy };
                }
            }
        }
        Tensor::new(&[self.out_h, self.out_w, ch], out)
    }

    /// Nearest-neighbour resampling of a class map; padding is ignore.
    pub fn warp_labels(&self, labels: &LabelMap) -> Result<LabelMap> {
        if (labels.height(), labels.width()) != (self.src_h, self.src_w) {
            bail!(Argument, "label map does not match warp source");
        }
        let mut out = LabelMap::filled(self.out_h, self.out_w, IGNORE_LABEL);
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                if let Some((y, x)) = self.nearest(oy, ox) {
                    out.set(oy, ox, labels.get(y, x));
                }
            }
        }
        Ok(out)
    }

    /// Nearest-neighbour resampling of a C×H×W (or H×W) map; padding is 0.
    pub fn warp_planes(&self, map: &Tensor) -> Result<Tensor> {
        let (planes, shape) = match *map.shape() {
            [h, w] if (h, w) == (self.src_h, self.src_w) => (1, vec![self.out_h, self.out_w]),
            [c, h, w] if (h, w) == (self.src_h, self.src_w) => (c, vec![c, self.out_h, self.out_w]),
            ref s => bail!(Argument, "map {:?} does not match warp source", s),
        };
        let (sh, sw) = (self.src_h, self.src_w);
        let mut out = vec![0.0; planes * self.out_h * self.out_w];
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                if let Some((y, x)) = self.nearest(oy, ox) {
                    for c in 0..planes {
                        out[(c * self.out_h + oy) * self.out_w + ox] = map.data()[(c * sh + y) * sw + x];
                    }
                }
            }
        }
        Tensor::new(&shape, out)
    }
}

/// An augmented view with its geometry and validity mask (1 = real content).
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSample {
    pub image: Tensor,
    pub labels: Option<LabelMap>,
    pub valid: Tensor,
    pub warp: Warp,
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Applies `spec` to an H×W×C image (and optional labels), fully determined
/// by `seed`.
pub fn apply_augmentation(
    image: &Tensor,
    labels: Option<&LabelMap>,
    spec: &AugmentationSpec,
    seed: u64,
) -> Result<AugmentedSample> {
    spec.validate()?;
    let &[h, w, _] = image.shape() else {
        bail!(Argument, "image must be H×W×C, got {:?}", image.shape());
    };
    let mut rng = stream_rng(seed, Stream::WeakAugment, spec.kind as u64);
    let scale = draw(&mut rng, spec.scale_range);
    let flip = spec.flip_prob > 0.0 && rng.random_bool(spec.flip_prob);
    let (out_h, out_w) = spec.crop_size.unwrap_or((h, w));
    let (zh, zw) = (h as f64 * scale, w as f64 * scale);
    let mut origin = |zoomed: f64, out: usize| -> f64 {
        let slack = zoomed - out as f64;
        match spec.crop_size {
            None => slack / 2.0,
            Some(_) => {
                let (lo, hi) = if slack >= 0.0 { (0.0, slack) } else { (slack, 0.0) };
                draw(&mut rng, (lo, hi)).round()
            }
        }
    };
    let start_y = origin(zh, out_h);
    let start_x = origin(zw, out_w);
    let warp = Warp {
        src_h: h,
        src_w: w,
        out_h,
        out_w,
        scale,
        start_y,
        start_x,
        flip,
    };
    let mut out = warp.warp_image(image)?;
    let valid = warp.valid_mask();

    let brightness = draw(&mut rng, spec.brightness_range);
    let contrast = draw(&mut rng, spec.contrast_range);
    if brightness != 1.0 || contrast != 1.0 || spec.noise_sigma > 0.0 {
        let ch = out.shape()[2];
        let live: Vec<bool> = valid.data().iter().map(|&m| m > 0.0).collect();
        let count = live.iter().filter(|&&l| l).count().max(1) as f64;
        let mean = out
            .data()
            .chunks(ch)
            .zip(&live)
            .filter(|(_, &l)| l)
            .map(|(px, _)| px.iter().sum::<f64>() / ch as f64)
            .sum::<f64>()
            / count;
        let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma checked"));
        for (px, &l) in out.data_mut().chunks_mut(ch).zip(&live) {
            if !l {
                continue;
            }
            for v in px.iter_mut() {
                let mut x = ((*v - mean) * contrast + mean) * brightness;
                if let Some(n) = &noise {
                    x += n.sample(&mut rng);
                }
                *v = x.clamp(0.0, 1.0);
            }
        }
    }
    let labels = labels.map(|l| warp.warp_labels(l)).transpose()?;
    Ok(AugmentedSample {
        image: out,
        labels,
        valid,
        warp,
    })
}
