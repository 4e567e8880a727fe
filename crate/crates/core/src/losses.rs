//! Supervised cross-entropy, the weighted and rebalanced fuzzy KL consistency
//! loss, prototype contrastive loss, and their weighted total.
//!
//! Losses are recorded on a [`Graph`] so gradients reach the student's
//! logits and embeddings. Teacher-derived inputs (fuzzy targets, pixel and
//! class weights, prototypes) enter as constants.

use std::rc::Rc;

use crate::error::{bail, Result};
use crate::pseudolabel::{class_layout, FuzzyLabelMap, PixelWeightMap};
use crate::rebalance::ClassWeightVector;
use crate::tensorkit::{Graph, Tensor, Var, IGNORE_INDEX};

/// Student probabilities are clamped to this floor before logarithms.
pub const PROB_FLOOR: f64 = 1e-12;
pub const DEFAULT_LAMBDA_U: f64 = 0.5;
pub const DEFAULT_LAMBDA_C: f64 = 0.1;
pub const DEFAULT_SELECT_THRESHOLD: f64 = 0.5;

/// A scalar loss node plus whether it was vacuous (nothing to average over).
#[derive(Clone, Copy, Debug)]
pub struct LossTerm {
    pub value: Var,
    pub empty: bool,
}

/// Scalar values of one step's objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub supervised: f64,
    pub unsupervised: f64,
    pub contrastive: f64,
    pub total: f64,
    pub n_valid: usize,
    pub lambda_u: f64,
    pub lambda_c: f64,
}

impl LossBreakdown {
    pub fn new(
        supervised: f64,
        unsupervised: f64,
        contrastive: f64,
        n_valid: usize,
        lambda_u: f64,
        lambda_c: f64,
    ) -> Self {
        Self {
            supervised,
            unsupervised,
            contrastive,
            total: total_loss(supervised, unsupervised, contrastive, lambda_u, lambda_c),
            n_valid,
            lambda_u,
            lambda_c,
        }
    }
}

/// `L_s + λ_u·L_u + λ_c·L_c`.
pub fn total_loss(supervised: f64, unsupervised: f64, contrastive: f64, lambda_u: f64, lambda_c: f64) -> f64 {
    supervised + lambda_u * unsupervised + lambda_c * contrastive
}

/// Graph form of [`total_loss`]; absent terms are skipped.
pub fn total_loss_var(
    g: &mut Graph,
    supervised: Var,
    unsupervised: Option<Var>,
    contrastive: Option<Var>,
    lambda_u: f64,
    lambda_c: f64,
) -> Result<Var> {
    let mut total = supervised;
    for (term, lambda) in [(unsupervised, lambda_u), (contrastive, lambda_c)] {
        if let Some(t) = term {
            let scaled = g.scale(t, lambda);
            total = g.add(total, scaled)?;
        }
    }
    Ok(total)
}

fn clamped_log(g: &mut Graph, probs: Var) -> Result<Var> {
    let c = g.clamp_min(probs, PROB_FLOOR);
    g.log(c)
}

/// Mean over non-ignored pixels of `−log p[label]`. `student_probs` is
/// N×C×H×W; `labels` is N×H×W with [`IGNORE_INDEX`] for ignored pixels.
pub fn supervised_ce(g: &mut Graph, student_probs: Var, labels: &[usize]) -> Result<LossTerm> {
    let counted = labels.iter().filter(|&&l| l != IGNORE_INDEX).count();
    let logp = clamped_log(g, student_probs)?;
    let picked = g.gather_classes(logp, Rc::from(labels))?;
    let total = g.sum(picked);
    if counted == 0 {
        return Ok(LossTerm {
            value: g.scale(total, 0.0),
            empty: true,
        });
    }
    Ok(LossTerm {
        value: g.scale(total, -1.0 / counted as f64),
        empty: false,
    })
}

/// Where the class weights enter the consistency loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ClassWeighting {
    /// One weight per pixel, that of its fuzzy-argmax class. Each pixel's
    /// term stays a nonnegative KL.
    #[default]
    PixelArgmax,
    /// `w_c` multiplies each class term inside the KL sum. Can go negative
    /// when weights differ across a pixel's support.
    PerClassTerm,
}

impl ClassWeighting {
    pub fn name(self) -> &'static str {
        match self {
            ClassWeighting::PixelArgmax => "pixel",
            ClassWeighting::PerClassTerm => "term",
        }
    }
}

/// `(1/N_valid) Σ M·W·w_{c*} Σ_c p^f · log(p^f / p^S)` with `c*` the fuzzy
/// argmax; returns the loss and `N_valid`.
pub fn unsupervised_kl(
    g: &mut Graph,
    fuzzy: &FuzzyLabelMap,
    student_probs: Var,
    weights: &PixelWeightMap,
    class_w: &ClassWeightVector,
) -> Result<(LossTerm, usize)> {
    unsupervised_kl_with(g, fuzzy, student_probs, weights, class_w, ClassWeighting::PixelArgmax)
}

/// [`unsupervised_kl`] with an explicit class-weight placement.
pub fn unsupervised_kl_with(
    g: &mut Graph,
    fuzzy: &FuzzyLabelMap,
    student_probs: Var,
    weights: &PixelWeightMap,
    class_w: &ClassWeightVector,
    mode: ClassWeighting,
) -> Result<(LossTerm, usize)> {
    let target = fuzzy.probs();
    if g.shape(student_probs) != target.shape() {
        bail!(
            Argument,
            "student {:?} vs fuzzy target {:?}",
            g.shape(student_probs),
            target.shape()
        );
    }
    let (n, c, hw, spatial) = class_layout(target)?;
    if weights.weight.shape() != spatial.as_slice() || weights.valid_mask.shape() != spatial.as_slice() {
        bail!(Argument, "pixel weights {:?} vs pixels {:?}", weights.weight.shape(), spatial);
    }
    if class_w.len() != c {
        bail!(Argument, "{} class weights for {} classes", class_w.len(), c);
    }
    let n_valid = weights.valid_count();
    let hard = fuzzy.argmax();
    let mut coef = vec![0.0; target.len()];
    let mut constant = 0.0;
    for s in 0..n {
        for q in 0..hw {
            let p = s * hw + q;
            let mw = weights.valid_mask.data()[p] * weights.weight.data()[p];
            if mw == 0.0 {
                continue;
            }
            for k in 0..c {
                let i = (s * c + k) * hw + q;
                let pf = target.data()[i];
                if pf > 0.0 {
                    let wc = match mode {
                        ClassWeighting::PixelArgmax => class_w.weights[hard[p]],
                        ClassWeighting::PerClassTerm => class_w.weights[k],
                    };
                    let a = mw * wc * pf;
                    coef[i] = a;
                    constant += a * pf.ln();
                }
            }
        }
    }
    let logp = clamped_log(g, student_probs)?;
    let coef = g.constant(Tensor::new(target.shape(), coef)?);
    let cross = g.dot(logp, coef)?;
    if n_valid == 0 {
        return Ok((
            LossTerm {
                value: g.scale(cross, 0.0),
                empty: true,
            },
            0,
        ));
    }
    let inv = 1.0 / n_valid as f64;
    let neg = g.scale(cross, -inv);
    Ok((
        LossTerm {
            value: g.add_scalar(neg, constant * inv),
            empty: false,
        },
        n_valid,
    ))
}

/// Class prototypes from confidently pseudo-labelled pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet {
    /// C×D mean embeddings; rows of absent classes are zero.
    pub prototypes: Tensor,
    pub counts: Vec<usize>,
    pub present: Vec<bool>,
    /// Selected pixels (flattened N×H×W index) and their classes.
    pub pixels: Vec<usize>,
    pub classes: Vec<usize>,
}

impl PrototypeSet {
    pub fn present_classes(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Selects pixels with weight `> threshold` and averages their embeddings per
/// class. `embeddings` is N×D×H×W; `assignments` and `weights` cover N×H×W.
pub fn compute_prototypes(
    embeddings: &Tensor,
    assignments: &[usize],
    weights: &Tensor,
    threshold: f64,
    num_classes: usize,
) -> Result<PrototypeSet> {
    let &[n, d, h, w] = embeddings.shape() else {
        bail!(Argument, "embeddings must be N×D×H×W, got {:?}", embeddings.shape());
    };
    let hw = h * w;
    if assignments.len() != n * hw || weights.len() != n * hw {
        bail!(Argument, "assignments/weights do not cover {} pixels", n * hw);
    }
    if !(0.0..1.0).contains(&threshold) {
        bail!(Argument, "selection threshold {threshold} outside [0, 1)");
    }
    let mut sums = vec![0.0; num_classes * d];
    let mut counts = vec![0usize; num_classes];
    let (mut pixels, mut classes) = (Vec::new(), Vec::new());
    let e = embeddings.data();
    for (p, (&cls, &wt)) in assignments.iter().zip(weights.data()).enumerate() {
        if !(wt > threshold) {
            continue;
        }
        if cls >= num_classes {
            bail!(Argument, "class {cls} out of range");
        }
        let (s, q) = (p / hw, p % hw);
        for k in 0..d {
            sums[cls * d + k] += e[(s * d + k) * hw + q];
        }
        counts[cls] += 1;
        pixels.push(p);
        classes.push(cls);
    }
    for (cls, &cnt) in counts.iter().enumerate() {
        if cnt > 0 {
            for v in &mut sums[cls * d..(cls + 1) * d] {
                *v /= cnt as f64;
            }
        }
    }
    Ok(PrototypeSet {
        prototypes: Tensor::new(&[num_classes, d], sums)?,
        present: counts.iter().map(|&c| c > 0).collect(),
        counts,
        pixels,
        classes,
    })
}

/// `(1/C_present) Σ_c (1/|P_c|) Σ_{i∈P_c} (1 − cos(f_i, f_c))` with the
/// prototypes held constant.
pub fn contrastive_loss(g: &mut Graph, embeddings: Var, prototypes: &PrototypeSet) -> Result<LossTerm> {
    if prototypes.is_empty() {
        let zero = g.constant(Tensor::scalar(0.0));
        return Ok(LossTerm {
            value: zero,
            empty: true,
        });
    }
    let d = prototypes.prototypes.shape()[1];
    if g.shape(embeddings).get(1) != Some(&d) {
        bail!(Argument, "embedding width {:?} vs prototype width {}", g.shape(embeddings), d);
    }
    let present = prototypes.present_classes() as f64;
    let mut targets = Vec::with_capacity(prototypes.pixels.len() * d);
    let mut coef = Vec::with_capacity(prototypes.pixels.len());
    for &cls in &prototypes.classes {
        targets.extend_from_slice(&prototypes.prototypes.data()[cls * d..(cls + 1) * d]);
        coef.push(1.0 / (present * prototypes.counts[cls] as f64));
    }
    let rows = g.select_pixels(embeddings, Rc::from(prototypes.pixels.as_slice()))?;
    let targets = g.constant(Tensor::new(&[prototypes.pixels.len(), d], targets)?);
    let cos = g.cosine_rows(rows, targets)?;
    let total_coef: f64 = coef.iter().sum();
    let coef = g.constant(Tensor::from_vec(coef));
    let weighted = g.dot(cos, coef)?;
    let neg = g.scale(weighted, -1.0);
    Ok(LossTerm {
        value: g.add_scalar(neg, total_coef),
        empty: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pseudolabel::fuzzy_labels;

    fn probs_var(g: &mut Graph, p: &[f64], shape: &[usize]) -> Var {
        g.constant(Tensor::new(shape, p.to_vec()).unwrap())
    }

    #[test]
    fn ce_examples() {
        let mut g = Graph::new();
        let p = probs_var(&mut g, &[1.0, 0.0], &[1, 2, 1, 1]);
        let l = supervised_ce(&mut g, p, &[0]).unwrap();
        assert!(g.value(l.value).item().abs() <= 1e-9);

        let p = probs_var(&mut g, &[0.25; 4], &[1, 4, 1, 1]);
        let l = supervised_ce(&mut g, p, &[2]).unwrap();
        assert!((g.value(l.value).item() - 4f64.ln()).abs() < 1e-12);

        let p = probs_var(&mut g, &[0.5, 0.5], &[1, 2, 1, 1]);
        let l = supervised_ce(&mut g, p, &[1]).unwrap();
        assert!((g.value(l.value).item() - 2f64.ln()).abs() < 1e-12);

        let l = supervised_ce(&mut g, p, &[IGNORE_INDEX]).unwrap();
        assert!(l.empty);
        assert_eq!(g.value(l.value).item(), 0.0);
    }

    #[test]
    fn kl_hand_example() {
        let teacher = Tensor::new(&[1, 3, 1, 1], vec![0.5, 0.3, 0.2]).unwrap();
        let f = fuzzy_labels(&teacher, 2).unwrap();
        let mut g = Graph::new();
        let s = probs_var(&mut g, &[1.0 / 3.0; 3], &[1, 3, 1, 1]);
        let w = PixelWeightMap {
            weight: Tensor::ones(&[1, 1, 1]),
            valid_mask: Tensor::ones(&[1, 1, 1]),
            entropy: Tensor::zeros(&[1, 1, 1]),
        };
        let (l, nv) = unsupervised_kl(&mut g, &f, s, &w, &ClassWeightVector::uniform(3)).unwrap();
        let expected = 0.625 * 1.875f64.ln() + 0.375 * 1.125f64.ln();
        assert_eq!(nv, 1);
        assert!((g.value(l.value).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn class_weight_placement() {
        // Fuzzy [0.5, 0.5, 0] (argmax 0), student [0.9, 0.1, 0], w = [20, 0.05, 1].
        let teacher = Tensor::new(&[1, 3, 1, 1], vec![0.5, 0.5, 0.0]).unwrap();
        let f = fuzzy_labels(&teacher, 2).unwrap();
        let w = PixelWeightMap {
            weight: Tensor::ones(&[1, 1, 1]),
            valid_mask: Tensor::ones(&[1, 1, 1]),
            entropy: Tensor::zeros(&[1, 1, 1]),
        };
        let cw = ClassWeightVector {
            weights: vec![20.0, 0.05, 1.0],
            frequencies: vec![0.0; 3],
            epsilon: 1e-6,
        };
        let kl = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * 5f64.ln();
        let per_term = 20.0 * 0.5 * (0.5f64 / 0.9).ln() + 0.05 * 0.5 * 5f64.ln();
        let mut g = Graph::new();
        let s = probs_var(&mut g, &[0.9, 0.1, 0.0], &[1, 3, 1, 1]);
        let (a, _) = unsupervised_kl(&mut g, &f, s, &w, &cw).unwrap();
        let (b, _) = unsupervised_kl_with(&mut g, &f, s, &w, &cw, ClassWeighting::PerClassTerm).unwrap();
        assert!((g.value(a.value).item() - 20.0 * kl).abs() < 1e-12);
        assert!((g.value(b.value).item() - per_term).abs() < 1e-12);
        assert!(g.value(b.value).item() < 0.0);
    }

    #[test]
    fn kl_zero_cases() {
        let teacher = Tensor::new(&[1, 3, 1, 2], vec![0.5, 0.1, 0.3, 0.6, 0.2, 0.3]).unwrap();
        let f = fuzzy_labels(&teacher, 2).unwrap();
        let mut g = Graph::new();
        let s = g.constant(f.probs().clone());
        let w = PixelWeightMap::from_teacher(&teacher, 1.0).unwrap();
        let cw = ClassWeightVector {
            weights: vec![2.0, 0.5, 3.0],
            frequencies: vec![0.0; 3],
            epsilon: 1e-6,
        };
        let (l, _) = unsupervised_kl(&mut g, &f, s, &w, &cw).unwrap();
        assert!(g.value(l.value).item().abs() <= 1e-9);

        let s = g.constant(Tensor::full(&[1, 3, 1, 2], 1.0 / 3.0));
        let zero_w = PixelWeightMap {
            weight: Tensor::zeros(&[1, 1, 2]),
            ..w.clone()
        };
        let (l, nv) = unsupervised_kl(&mut g, &f, s, &zero_w, &cw).unwrap();
        assert_eq!(nv, 2);
        assert_eq!(g.value(l.value).item(), 0.0);

        let none = w.clone().masked(&Tensor::zeros(&[1, 1, 2])).unwrap();
        let (l, nv) = unsupervised_kl(&mut g, &f, s, &none, &cw).unwrap();
        assert!(l.empty);
        assert_eq!(nv, 0);
        assert_eq!(g.value(l.value).item(), 0.0);
    }

    #[test]
    fn prototype_examples() {
        // Two class-0 pixels with opposite embeddings average to zero.
        let e = Tensor::new(&[1, 2, 1, 2], vec![1.0, -1.0, 2.0, -2.0]).unwrap();
        let p = compute_prototypes(&e, &[0, 0], &Tensor::ones(&[1, 1, 2]), 0.5, 2).unwrap();
        assert_eq!(p.prototypes.data(), &[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.counts, vec![2, 0]);
        assert_eq!(p.present, vec![true, false]);

        let p = compute_prototypes(&e, &[0, 1], &Tensor::ones(&[1, 1, 2]), 0.5, 2).unwrap();
        assert_eq!(p.prototypes.data(), &[1.0, 2.0, -1.0, -2.0]);

        let none = compute_prototypes(&e, &[0, 1], &Tensor::full(&[1, 1, 2], 0.5), 0.5, 2).unwrap();
        assert!(none.is_empty());
        let mut g = Graph::new();
        let ev = g.param(e);
        let l = contrastive_loss(&mut g, ev, &none).unwrap();
        assert!(l.empty);
        assert_eq!(g.value(l.value).item(), 0.0);
    }

    fn contrastive_value(emb: &[f64], protos: &[f64]) -> f64 {
        let d = protos.len();
        let set = PrototypeSet {
            prototypes: Tensor::new(&[1, d], protos.to_vec()).unwrap(),
            counts: vec![1],
            present: vec![true],
            pixels: vec![0],
            classes: vec![0],
        };
        let mut g = Graph::new();
        let e = g.param(Tensor::new(&[1, d, 1, 1], emb.to_vec()).unwrap());
        let l = contrastive_loss(&mut g, e, &set).unwrap();
        g.value(l.value).item()
    }

    #[test]
    fn contrastive_examples() {
        assert!(contrastive_value(&[1.0, 2.0], &[1.0, 2.0]).abs() < 1e-12);
        assert!((contrastive_value(&[1.0, 0.0], &[0.0, 3.0]) - 1.0).abs() < 1e-12);
        assert!((contrastive_value(&[-1.0, -2.0], &[1.0, 2.0]) - 2.0).abs() < 1e-12);
        assert!((contrastive_value(&[0.0, 0.0], &[1.0, 2.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_loss(1.0, 0.0, 0.0, 0.5, 0.1), 1.0);
        assert!((total_loss(1.0, 2.0, 3.0, 0.5, 0.1) - 2.3).abs() < 1e-12);
        assert_eq!(total_loss(1.7, 2.0, 3.0, 0.0, 0.0), 1.7);
        let b = LossBreakdown::new(1.0, 2.0, 3.0, 10, DEFAULT_LAMBDA_U, DEFAULT_LAMBDA_C);
        assert!((b.total - 2.3).abs() < 1e-12);

        let mut g = Graph::new();
        let (s, u, c) = (
            g.constant(Tensor::scalar(1.0)),
            g.constant(Tensor::scalar(2.0)),
            g.constant(Tensor::scalar(3.0)),
        );
        let t = total_loss_var(&mut g, s, Some(u), Some(c), 0.5, 0.1).unwrap();
        assert!((g.value(t).item() - 2.3).abs() < 1e-12);
        let t = total_loss_var(&mut g, s, None, None, 0.5, 0.1).unwrap();
        assert_eq!(g.value(t).item(), 1.0);
    }
}
