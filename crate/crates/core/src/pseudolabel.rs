//! Teacher probability maps to fuzzy top-K targets, normalized entropy, and
//! per-pixel reliability weights.
//!
//! Probability maps are `C×H×W` (one image) or `N×C×H×W` (a batch). Per-pixel
//! outputs drop the class axis: `H×W` or `N×H×W`.

use crate::error::{bail, Result};
use crate::tensorkit::{argmax, topk_indices, Tensor};

/// Default normalized-entropy cutoff above which pixels get zero weight.
pub const DEFAULT_ENTROPY_THRESHOLD: f64 = 0.7;

const NORMALIZATION_TOL: f64 = 1e-6;

/// Batch layout of a probability map: (images, classes, pixels per image, per-pixel shape).
pub(crate) fn class_layout(t: &Tensor) -> Result<(usize, usize, usize, Vec<usize>)> {
    match *t.shape() {
        [c, h, w] => Ok((1, c, h * w, vec![h, w])),
        [n, c, h, w] => Ok((n, c, h * w, vec![n, h, w])),
        ref s => bail!(Argument, "expected C×H×W or N×C×H×W, got {:?}", s),
    }
}

/// Reads the class distribution at pixel `q` of image `n` into `buf`.
pub(crate) fn pixel_distribution(t: &Tensor, n: usize, c: usize, hw: usize, q: usize, buf: &mut [f64]) {
    let d = t.data();
    for (k, b) in buf.iter_mut().enumerate() {
        *b = d[(n * c + k) * hw + q];
    }
}

fn validate_distribution(t: &Tensor) -> Result<()> {
    let (n, c, hw, _) = class_layout(t)?;
    let mut buf = vec![0.0; c];
    for s in 0..n {
        for q in 0..hw {
            pixel_distribution(t, s, c, hw, q, &mut buf);
            let total: f64 = buf.iter().sum();
            if buf.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > NORMALIZATION_TOL {
                bail!(
                    Validation,
                    "pixel {q} of image {s} is not a distribution (sum {total})"
                );
            }
        }
    }
    Ok(())
}

/// Per-pixel distribution supported on the teacher's top-K classes.
#[derive(Clone, Debug, PartialEq)]
pub struct FuzzyLabelMap {
    probs: Tensor,
    support_size: usize,
}

impl FuzzyLabelMap {
    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn support_size(&self) -> usize {
        self.support_size
    }

    pub fn num_classes(&self) -> usize {
        class_layout(&self.probs).map(|l| l.1).unwrap_or(0)
    }

    /// Per-pixel argmax (lowest class wins ties), flattened over N×H×W.
    pub fn argmax(&self) -> Vec<usize> {
        let (n, c, hw, _) = class_layout(&self.probs).expect("validated at construction");
        let mut buf = vec![0.0; c];
        let mut out = Vec::with_capacity(n * hw);
        for s in 0..n {
            for q in 0..hw {
                pixel_distribution(&self.probs, s, c, hw, q, &mut buf);
                out.push(argmax(&buf));
            }
        }
        out
    }
}

/// Keeps the top-K teacher classes per pixel and renormalizes by their mass.
pub fn fuzzy_labels(teacher_probs: &Tensor, k: usize) -> Result<FuzzyLabelMap> {
    let (n, c, hw, _) = class_layout(teacher_probs)?;
    if k == 0 || k > c {
        bail!(Argument, "support size K={k} must lie in 1..={c}");
    }
    validate_distribution(teacher_probs)?;
    let mut out = vec![0.0; teacher_probs.len()];
    let mut buf = vec![0.0; c];
    for s in 0..n {
        for q in 0..hw {
            pixel_distribution(teacher_probs, s, c, hw, q, &mut buf);
            let top = topk_indices(&buf, k)?;
            let mass: f64 = top.iter().map(|&j| buf[j]).sum();
            for &j in &top {
                out[(s * c + j) * hw + q] = if mass > 0.0 {
                    buf[j] / mass
                } else {
                    1.0 / k as f64
                };
            }
        }
    }
    Ok(FuzzyLabelMap {
        probs: Tensor::new(teacher_probs.shape(), out)?,
        support_size: k,
    })
}

/// Shannon entropy divided by `ln C`, with `0 · ln 0 = 0`.
pub fn normalized_entropy(teacher_probs: &Tensor) -> Result<Tensor> {
    let (n, c, hw, spatial) = class_layout(teacher_probs)?;
    if c < 2 {
        bail!(Argument, "normalized entropy needs at least two classes");
    }
    let norm = (c as f64).ln();
    let mut buf = vec![0.0; c];
    let mut out = Vec::with_capacity(n * hw);
    for s in 0..n {
        for q in 0..hw {
            pixel_distribution(teacher_probs, s, c, hw, q, &mut buf);
            let h: f64 = buf
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.ln())
                .sum();
            out.push((h / norm).clamp(0.0, 1.0));
        }
    }
    Tensor::new(&spatial, out)
}

/// `1 − H` where `H ≤ τ`, otherwise 0.
pub fn pixel_weights(entropy: &Tensor, threshold: f64) -> Result<Tensor> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        bail!(Argument, "entropy threshold {threshold} outside (0, 1]");
    }
    if let Some(bad) = entropy.data().iter().find(|&&h| !(0.0..=1.0).contains(&h)) {
        bail!(Validation, "entropy value {bad} outside [0, 1]");
    }
    Ok(entropy.map(|h| if h <= threshold { 1.0 - h } else { 0.0 }))
}

/// Reliability weights, validity mask and entropy for one batch of targets.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelWeightMap {
    pub weight: Tensor,
    pub valid_mask: Tensor,
    pub entropy: Tensor,
}

impl PixelWeightMap {
    /// Entropy-derived weights with every pixel valid.
    pub fn from_teacher(teacher_probs: &Tensor, threshold: f64) -> Result<Self> {
        let entropy = normalized_entropy(teacher_probs)?;
        let weight = pixel_weights(&entropy, threshold)?;
        let valid_mask = Tensor::ones(entropy.shape());
        Ok(Self {
            weight,
            valid_mask,
            entropy,
        })
    }

    /// Applies a binary validity mask; weights are zeroed where it is 0.
    pub fn masked(mut self, mask: &Tensor) -> Result<Self> {
        self.valid_mask = self.valid_mask.zip_map(mask, |a, b| if a > 0.0 && b > 0.0 { 1.0 } else { 0.0 })?;
        self.weight = self.weight.zip_map(&self.valid_mask, |w, m| w * m)?;
        Ok(self)
    }

    /// Replaces the weights with 1 on valid pixels (uncertainty weighting off).
    pub fn without_uncertainty(mut self) -> Self {
        self.weight = self.valid_mask.clone();
        self
    }

    pub fn valid_count(&self) -> usize {
        self.valid_mask.data().iter().filter(|&&m| m > 0.0).count()
    }
}
