//! Confusion matrices, per-class IoU, mIoU and the evaluation CSV.

use std::io::Write;

use crate::error::{bail, Result};

/// C×C pixel counts, rows = ground truth, columns = prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            bail!(Argument, "{} counts for {} classes", counts.len(), classes);
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            bail!(Argument, "cannot merge {}- and {}-class matrices", self.classes, other.classes);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Fraction of counted pixels on the diagonal; `None` when empty.
    pub fn pixel_accuracy(&self) -> Option<f64> {
        let total = self.total();
        let diag: u64 = (0..self.classes).map(|c| self.get(c, c)).sum();
        (total > 0).then(|| diag as f64 / total as f64)
    }
}

/// Adds one prediction/truth pair. Truth entries equal to `ignore` are
/// skipped.
pub fn update_confusion(cm: &mut ConfusionMatrix, pred: &[usize], truth: &[usize], ignore: usize) -> Result<()> {
    if pred.len() != truth.len() {
        bail!(Argument, "prediction has {} pixels, truth {}", pred.len(), truth.len());
    }
    let c = cm.classes;
    for (&p, &t) in pred.iter().zip(truth) {
        if t == ignore {
            continue;
        }
        if t >= c || p >= c {
            bail!(Validation, "class index out of range (truth {t}, prediction {p}) for {c} classes");
        }
        cm.counts[t * c + p] += 1;
    }
    Ok(())
}

/// Per-class intersection over union.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassIou {
    pub iou: Vec<f64>,
    /// False where TP + FP + FN = 0; such classes carry IoU 0 and are
    /// excluded from the mean.
    pub present: Vec<bool>,
}

pub fn iou_per_class(cm: &ConfusionMatrix) -> ClassIou {
    let c = cm.classes;
    let mut iou = vec![0.0; c];
    let mut present = vec![false; c];
    for k in 0..c {
        let tp = cm.get(k, k);
        let row: u64 = (0..c).map(|j| cm.get(k, j)).sum();
        let col: u64 = (0..c).map(|i| cm.get(i, k)).sum();
        let union = row + col - tp;
        if union > 0 {
            iou[k] = tp as f64 / union as f64;
            present[k] = true;
        }
    }
    ClassIou { iou, present }
}

pub fn miou(iou: &ClassIou) -> Result<f64> {
    let vals: Vec<f64> = iou
        .iou
        .iter()
        .zip(&iou.present)
        .filter(|(_, &p)| p)
        .map(|(&v, _)| v)
        .collect();
    if vals.is_empty() {
        bail!(Evaluation, "mIoU undefined: no class present in prediction or truth");
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// One row of the evaluation CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub label: String,
    pub iou: ClassIou,
    pub miou: f64,
    pub pixel_accuracy: f64,
}

impl EvalRow {
    pub fn from_confusion(label: impl Into<String>, cm: &ConfusionMatrix) -> Result<Self> {
        let iou = iou_per_class(cm);
        Ok(Self {
            label: label.into(),
            miou: miou(&iou)?,
            pixel_accuracy: cm.pixel_accuracy().unwrap_or(0.0),
            iou,
        })
    }
}

/// `split,iou_0..iou_{C-1},miou,pixel_acc`; absent classes are written as
/// `nan`.
pub fn write_eval_csv<W: Write>(mut w: W, rows: &[EvalRow]) -> Result<()> {
    let classes = rows.first().map_or(0, |r| r.iou.iou.len());
    let mut header = String::from("split");
    for c in 0..classes {
        header.push_str(&format!(",iou_{c}"));
    }
    writeln!(w, "{header},miou,pixel_acc")?;
    for r in rows {
        if r.iou.iou.len() != classes {
            bail!(Argument, "rows disagree on class count");
        }
        let mut line = r.label.clone();
        for (v, &p) in r.iou.iou.iter().zip(&r.iou.present) {
            if p {
                line.push_str(&format!(",{v:.6}"));
            } else {
                line.push_str(",nan");
            }
        }
        writeln!(w, "{line},{:.6},{:.6}", r.miou, r.pixel_accuracy)?;
    }
    Ok(())
}
