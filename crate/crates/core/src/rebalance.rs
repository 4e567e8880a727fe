//! Per-batch class frequencies and median-frequency class weights.

use crate::error::{bail, Result};
use crate::pseudolabel::FuzzyLabelMap;
use crate::tensorkit::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_WEIGHT_CAP: f64 = 20.0;

/// Class weights `median(F) / (F_c + ε)` together with their inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeightVector {
    pub weights: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub epsilon: f64,
}

impl ClassWeightVector {
    /// All-ones weights (rebalancing disabled).
    pub fn uniform(classes: usize) -> Self {
        Self {
            weights: vec![1.0; classes],
            frequencies: vec![0.0; classes],
            epsilon: DEFAULT_EPSILON,
        }
    }

    /// Clips every weight to at most `cap`.
    pub fn capped(mut self, cap: f64) -> Self {
        for w in &mut self.weights {
            *w = w.min(cap);
        }
        self
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Median over all entries; even lengths average the two middle values.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Counts valid pixels per fuzzy-argmax class. `valid_mask` is N×H×W (or
/// H×W for a single image) with nonzero meaning valid.
pub fn class_frequencies(fuzzy: &FuzzyLabelMap, valid_mask: &Tensor) -> Result<Vec<f64>> {
    let probs = fuzzy.probs();
    let spatial: Vec<usize> = match *probs.shape() {
        [_, h, w] => vec![h, w],
        [n, _, h, w] => vec![n, h, w],
        ref s => bail!(Argument, "fuzzy map shape {:?}", s),
    };
    if valid_mask.shape() != spatial.as_slice() {
        bail!(
            Argument,
            "valid mask {:?} does not match fuzzy map pixels {:?}",
            valid_mask.shape(),
            spatial
        );
    }
    let mut counts = vec![0.0; fuzzy.num_classes()];
    for (cls, &m) in fuzzy.argmax().into_iter().zip(valid_mask.data()) {
        if m > 0.0 {
            counts[cls] += 1.0;
        }
    }
    Ok(counts)
}

/// `w_c = median(F) / (F_c + ε)` for every class.
pub fn class_weights(frequencies: &[f64], epsilon: f64) -> Result<ClassWeightVector> {
    if frequencies.is_empty() {
        bail!(Argument, "no classes");
    }
    if !(epsilon > 0.0) {
        bail!(Argument, "epsilon must be positive, got {epsilon}");
    }
    if frequencies.iter().any(|&f| !(f >= 0.0) || !f.is_finite()) {
        bail!(Argument, "frequencies must be finite and nonnegative");
    }
    let med = median(frequencies);
    Ok(ClassWeightVector {
        weights: frequencies.iter().map(|&f| med / (f + epsilon)).collect(),
        frequencies: frequencies.to_vec(),
        epsilon,
    })
}
