//! Property and gradient checks runnable outside `cargo test` (`fuzzyseg
//! verify`). Each check compares the library against a brute-force
//! reimplementation written here.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{
    compute_prototypes, contrastive_loss, supervised_ce, total_loss_var, unsupervised_kl, LossTerm,
};
use crate::metrics::{iou_per_class, miou, update_confusion, ConfusionMatrix};
use crate::model::{forward, init_params, project_embeddings, BoundParams, SegNetConfig};
use crate::pseudolabel::{fuzzy_labels, normalized_entropy, pixel_weights, PixelWeightMap};
use crate::rebalance::{class_frequencies, class_weights, ClassWeightVector};
use crate::teacher_student::{complementary_channel_masks, ema_update, ParameterStore, Role};
use crate::tensorkit::{grad_check_many, GradCheckReport, Graph, Tensor, Var, IGNORE_INDEX};

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Result of one named check.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {} ({:.2}s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.seconds,
            self.detail
        )
    }
}

fn timed(name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = match body() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckOutcome {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn random_distribution(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let mode = rng.random_range(0..4);
    let raw: Vec<f64> = (0..c)
        .map(|_| match mode {
            // Quantized values produce exact ties.
            0 => rng.random_range(0..4) as f64,
            // Sparse: some exact zeros.
            1 => {
                if rng.random_bool(0.4) {
                    0.0
                } else {
                    rng.random_range(0.0..1.0)
                }
            }
            // Peaked.
            2 => (6.0 * rng.random_range(-1.0..1.0f64)).exp(),
            _ => rng.random_range(0.0..1.0),
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        let mut one = vec![0.0; c];
        one[rng.random_range(0..c)] = 1.0;
        return one;
    }
    raw.iter().map(|v| v / total).collect()
}

/// C×H×W map with the given per-pixel distributions.
fn class_map(pixels: &[Vec<f64>], c: usize, h: usize, w: usize) -> Tensor {
    let hw = h * w;
    let mut data = vec![0.0; c * hw];
    for (q, p) in pixels.iter().enumerate() {
        for k in 0..c {
            data[k * hw + q] = p[k];
        }
    }
    Tensor::new(&[c, h, w], data).expect("consistent sizes")
}

fn pixel(t: &Tensor, c: usize, hw: usize, q: usize) -> Vec<f64> {
    (0..c).map(|k| t.data()[k * hw + q]).collect()
}

/// Top-K by full sort: descending value, ascending index on ties.
fn oracle_topk(p: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).expect("finite").then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Fuzzy labels on 1000 random maps: support, normalization, idempotence,
/// and the worked example.
pub fn check_fuzzy_labels(maps: usize) -> CheckOutcome {
    timed("fuzzy labels", || {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let mut worst_mass: f64 = 0.0;
        let mut worst_idem: f64 = 0.0;
        for _ in 0..maps {
            let c = rng.random_range(3..=8);
            let k = rng.random_range(1..=c);
            let (h, w) = (rng.random_range(1..=4), rng.random_range(1..=4));
            let pixels: Vec<Vec<f64>> = (0..h * w).map(|_| random_distribution(&mut rng, c)).collect();
            let map = class_map(&pixels, c, h, w);
            let fuzzy = fuzzy_labels(&map, k)?;
            let out = fuzzy.probs();
            for (q, p) in pixels.iter().enumerate() {
                let f = pixel(out, c, h * w, q);
                let top = oracle_topk(p, k);
                if let Some(j) = (0..c).find(|j| f[*j] > 0.0 && !top.contains(j)) {
                    return Ok((false, format!("class {j} outside top-{k} of {p:?}")));
                }
                worst_mass = worst_mass.max((f.iter().filter(|&&v| v > 0.0).sum::<f64>() - 1.0).abs());
            }
            let again = fuzzy_labels(out, k)?;
            worst_idem = worst_idem.max(again.probs().max_abs_diff(out));
        }
        let hand = fuzzy_labels(&Tensor::new(&[3, 1, 1], vec![0.5, 0.3, 0.2])?, 2)?;
        let hand_err = hand.probs().max_abs_diff(&Tensor::new(&[3, 1, 1], vec![0.625, 0.375, 0.0])?);
        let passed = worst_mass <= 1e-9 && worst_idem <= 1e-12 && hand_err <= 1e-12;
        Ok((
            passed,
            format!("{maps} maps; mass err {worst_mass:.1e}, idempotence err {worst_idem:.1e}, worked example err {hand_err:.1e}"),
        ))
    })
}

/// Entropy extremes, range on 10⁵ random distributions, and the threshold
/// weight rule.
pub fn check_entropy_weights(samples: usize) -> CheckOutcome {
    timed("entropy and pixel weights", || {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        let mut extreme_err: f64 = 0.0;
        for c in 2..=10 {
            let uniform = Tensor::full(&[c, 1, 1], 1.0 / c as f64);
            extreme_err = extreme_err.max((normalized_entropy(&uniform)?.item() - 1.0).abs());
            for hot in 0..c {
                let mut d = vec![0.0; c];
                d[hot] = 1.0;
                extreme_err = extreme_err.max(normalized_entropy(&Tensor::new(&[c, 1, 1], d)?)?.item().abs());
            }
        }
        let mut out_of_range = 0usize;
        let mut rule_mismatch = 0usize;
        let mut left = samples;
        while left > 0 {
            let c = rng.random_range(2..=8);
            let n = left.min(64);
            left -= n;
            let pixels: Vec<Vec<f64>> = (0..n).map(|_| random_distribution(&mut rng, c)).collect();
            let map = class_map(&pixels, c, 1, n);
            let h = normalized_entropy(&map)?;
            out_of_range += h.data().iter().filter(|&&v| !(0.0..=1.0).contains(&v)).count();
            let tau = [0.7, rng.random_range(0.05..1.0), 1.0][rng.random_range(0..3)];
            // Put some pixels exactly on the threshold.
            let mut hv = h.data().to_vec();
            hv[0] = tau;
            let ht = Tensor::new(&[1, n], hv.clone())?;
            let wt = pixel_weights(&ht, tau)?;
            for (&e, &wgt) in hv.iter().zip(wt.data()) {
                let expect = if e <= tau { 1.0 - e } else { 0.0 };
                if wgt != expect {
                    rule_mismatch += 1;
                }
            }
        }
        let passed = extreme_err <= 1e-12 && out_of_range == 0 && rule_mismatch == 0;
        Ok((
            passed,
            format!(
                "extremes err {extreme_err:.1e}; {samples} samples, {out_of_range} outside [0,1], {rule_mismatch} weight mismatches"
            ),
        ))
    })
}

/// Class weights against sort/median/divide on 1000 vectors, plus
/// monotonicity.
pub fn check_rebalance(vectors: usize) -> CheckOutcome {
    timed("class rebalancing", || {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        let eps = 1e-6;
        let (mut mismatches, mut monotone_fail) = (0usize, 0usize);
        for i in 0..vectors {
            let c = rng.random_range(1..=12);
            let f: Vec<f64> = (0..c)
                .map(|_| match i % 3 {
                    0 => rng.random_range(0..200) as f64,
                    1 => {
                        if rng.random_bool(0.3) {
                            0.0
                        } else {
                            rng.random_range(0..5000) as f64
                        }
                    }
                    _ => rng.random_range(0.0..1e4),
                })
                .collect();
            let mut sorted = f.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let med = if c % 2 == 1 {
                sorted[c / 2]
            } else {
                (sorted[c / 2 - 1] + sorted[c / 2]) / 2.0
            };
            let oracle: Vec<f64> = f.iter().map(|&x| med / (x + eps)).collect();
            let got = class_weights(&f, eps)?;
            if got.weights != oracle {
                mismatches += 1;
            }
            for a in 0..c {
                for b in 0..c {
                    if f[a] < f[b] && got.weights[a] < got.weights[b] {
                        monotone_fail += 1;
                    }
                }
            }
        }
        Ok((
            mismatches == 0 && monotone_fail == 0,
            format!("{vectors} vectors; {mismatches} oracle mismatches, {monotone_fail} monotonicity violations"),
        ))
    })
}

fn softmax_pixels(logits: &[f64], c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    let n = logits.len() / (c * hw);
    for s in 0..n {
        for q in 0..hw {
            let idx = |k: usize| (s * c + k) * hw + q;
            let m = (0..c).map(|k| logits[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..c).map(|k| (logits[idx(k)] - m).exp()).sum();
            for k in 0..c {
                out[idx(k)] = (logits[idx(k)] - m).exp() / z;
            }
        }
    }
    out
}

/// One random instance for the end-to-end gradient gate.
struct GateInstance {
    config: SegNetConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    labeled: Tensor,
    labels: Vec<usize>,
    strong: Tensor,
    mask: Tensor,
    fuzzy: crate::pseudolabel::FuzzyLabelMap,
    weights: PixelWeightMap,
    class_w: ClassWeightVector,
    selection: Tensor,
}

impl GateInstance {
    fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = 2 + (seed as usize % 3);
        let config = SegNetConfig {
            in_channels: 3,
            base_width: 3,
            depth: 2,
            num_classes: c,
            embed_dim: 3,
        };
        let store = init_params(&config, seed)?;
        let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
        // Random classifier so every path carries gradient.
        let params = store
            .iter()
            .map(|(_, t)| {
                let d = (0..t.len()).map(|_| rng.random_range(-0.7..0.7)).collect();
                Tensor::new(t.shape(), d)
            })
            .collect::<Result<Vec<_>>>()?;
        let (h, w) = (8, 8);
        let rand_t = |rng: &mut ChaCha8Rng, shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        };
        let labeled = rand_t(&mut rng, &[1, 3, h, w])?;
        let labels = (0..h * w)
            .map(|_| if rng.random_bool(0.1) { IGNORE_INDEX } else { rng.random_range(0..c) })
            .collect();
        let strong = rand_t(&mut rng, &[2, 3, h, w])?;
        let (m, inv) = complementary_channel_masks(1, config.feature_width(), 0.5, seed)?;
        let mask = Tensor::concat(&[m, inv])?;
        let teacher_logits: Vec<f64> = (0..2 * c * h * w).map(|_| rng.random_range(-4.0..4.0)).collect();
        let teacher = Tensor::new(&[2, c, h, w], softmax_pixels(&teacher_logits, c, h * w))?;
        let fuzzy = fuzzy_labels(&teacher, 2.min(c))?;
        let valid = Tensor::new(
            &[2, h, w],
            (0..2 * h * w).map(|_| if rng.random_bool(0.9) { 1.0 } else { 0.0 }).collect(),
        )?;
        let weights = PixelWeightMap::from_teacher(&teacher, 0.7)?.masked(&valid)?;
        let freq = class_frequencies(&fuzzy, &valid)?;
        let class_w = class_weights(&freq, 1e-6)?.capped(20.0);
        let selection = weights.weight.clone();
        Ok(Self {
            config,
            names,
            params,
            labeled,
            labels,
            strong,
            mask,
            fuzzy,
            weights,
            class_w,
            selection,
        })
    }

    /// Builds the requested loss from bound parameters. Prototypes are taken
    /// from `protos` (fixed) when given.
    fn loss(
        &self,
        g: &mut Graph,
        vars: &[Var],
        which: GateLoss,
        protos: Option<&crate::losses::PrototypeSet>,
    ) -> Result<(Var, Option<Tensor>)> {
        let p = BoundParams::from_vars(&self.names, vars);
        let xl = g.constant(self.labeled.clone());
        let out_l = forward(g, &p, &self.config, xl, None)?;
        let pl = g.softmax(out_l.logits, 1)?;
        let ls = supervised_ce(g, pl, &self.labels)?;
        let xs = g.constant(self.strong.clone());
        let out_s = forward(g, &p, &self.config, xs, Some(&self.mask))?;
        let ps = g.softmax(out_s.logits, 1)?;
        let (lu, _) = unsupervised_kl(g, &self.fuzzy, ps, &self.weights, &self.class_w)?;
        let emb = project_embeddings(g, &p, &self.config, out_s.decoded, (8, 8))?;
        let emb_value = g.value(emb).clone();
        let lc = match protos {
            Some(ps) => contrastive_loss(g, emb, ps)?,
            None => LossTerm {
                value: g.constant(Tensor::scalar(0.0)),
                empty: true,
            },
        };
        let v = match which {
            GateLoss::Supervised => ls.value,
            GateLoss::Unsupervised => lu.value,
            GateLoss::Contrastive => lc.value,
            GateLoss::Total => total_loss_var(g, ls.value, Some(lu.value), Some(lc.value), 0.5, 0.1)?,
        };
        Ok((v, Some(emb_value)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateLoss {
    Supervised,
    Unsupervised,
    Contrastive,
    Total,
}

impl GateLoss {
    pub const ALL: [GateLoss; 4] = [
        GateLoss::Supervised,
        GateLoss::Unsupervised,
        GateLoss::Contrastive,
        GateLoss::Total,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GateLoss::Supervised => "L_s",
            GateLoss::Unsupervised => "L_u",
            GateLoss::Contrastive => "L_c",
            GateLoss::Total => "L_total",
        }
    }
}

/// Worst relative gradient error of `which` on one random instance.
pub fn gate_error(seed: u64, which: GateLoss) -> Result<f64> {
    gate_report(seed, which).map(|r| r.max_rel_error)
}

/// Full finite-difference report of `which` on one random instance.
pub fn gate_report(seed: u64, which: GateLoss) -> Result<GradCheckReport> {
    let inst = GateInstance::new(seed)?;
    // Prototypes from the unperturbed embeddings, held fixed.
    let mut g = Graph::new();
    let vars: Vec<Var> = inst.params.iter().map(|t| g.constant(t.clone())).collect();
    let (_, emb) = inst.loss(&mut g, &vars, GateLoss::Supervised, None)?;
    let protos = compute_prototypes(
        &emb.expect("embeddings recorded"),
        &inst.fuzzy.argmax(),
        &inst.selection,
        0.5,
        inst.config.num_classes,
    )?;
    grad_check_many(
        |g, vars| Ok(inst.loss(g, vars, which, Some(&protos))?.0),
        &inst.params,
        GRAD_STEP,
    )
}

/// L_s, L_u, L_c and L_total through the full network on `seeds` random
/// 2–4-class 8×8 instances.
pub fn check_gradient_gate(seeds: u64) -> CheckOutcome {
    timed("end-to-end gradient gate", || {
        let mut worst = [0.0f64; 4];
        let mut failures = Vec::new();
        for seed in 0..seeds {
            for (i, which) in GateLoss::ALL.iter().enumerate() {
                let r = gate_report(seed, *which)?;
                worst[i] = worst[i].max(r.max_rel_error);
                if r.max_rel_error > GRAD_TOLERANCE {
                    failures.push(format!(
                        "seed {seed} {} at param {} coord {}: analytic {:.6e}, numeric {:.6e}",
                        which.name(),
                        r.worst.0,
                        r.worst.1,
                        r.analytic,
                        r.numeric
                    ));
                }
            }
        }
        let mut detail = GateLoss::ALL
            .iter()
            .zip(worst)
            .map(|(l, e)| format!("{} {e:.2e}", l.name()))
            .collect::<Vec<_>>()
            .join(", ");
        if !failures.is_empty() {
            detail = format!("{detail}; worst: {}", failures.join("; "));
        }
        Ok((failures.is_empty(), format!("{seeds} seeds, max rel err: {detail}")))
    })
}

fn kl_value(fuzzy: &Tensor, k: usize, student: &Tensor, weights: &PixelWeightMap, cw: &ClassWeightVector) -> Result<f64> {
    let f = fuzzy_labels(fuzzy, k)?;
    let mut g = Graph::new();
    let s = g.constant(student.clone());
    let (l, _) = unsupervised_kl(&mut g, &f, s, weights, cw)?;
    Ok(g.value(l.value).item())
}

/// Nonnegativity, zero at the target, reduction to mean KL, and the
/// target as minimizer.
pub fn check_kl_properties(trials: usize) -> CheckOutcome {
    timed("KL consistency properties", || {
        let mut rng = ChaCha8Rng::seed_from_u64(505);
        let (mut min_loss, mut max_zero, mut max_reduction): (f64, f64, f64) = (f64::INFINITY, 0.0, 0.0);
        let mut perturb_fail = 0usize;
        for _ in 0..trials {
            let c = rng.random_range(2..=6);
            let (h, w) = (rng.random_range(1..=4), rng.random_range(1..=4));
            let hw = h * w;
            let teacher = class_map(&(0..hw).map(|_| random_distribution(&mut rng, c)).collect::<Vec<_>>(), c, h, w);
            let student = class_map(&(0..hw).map(|_| random_distribution(&mut rng, c)).collect::<Vec<_>>(), c, h, w);
            let k = rng.random_range(1..=c);
            let weights = PixelWeightMap {
                weight: Tensor::new(&[h, w], (0..hw).map(|_| rng.random_range(0.0..1.0)).collect())?,
                valid_mask: Tensor::new(&[h, w], (0..hw).map(|_| rng.random_range(0..2) as f64).collect())?,
                entropy: Tensor::zeros(&[h, w]),
            };
            let cw = ClassWeightVector {
                weights: (0..c).map(|_| rng.random_range(0.05..20.0)).collect(),
                frequencies: vec![0.0; c],
                epsilon: 1e-6,
            };
            min_loss = min_loss.min(kl_value(&teacher, k, &student, &weights, &cw)?);

            let target = fuzzy_labels(&teacher, k)?.probs().clone();
            max_zero = max_zero.max(kl_value(&teacher, k, &target, &weights, &cw)?.abs());

            let ones = PixelWeightMap {
                weight: Tensor::ones(&[h, w]),
                valid_mask: Tensor::ones(&[h, w]),
                entropy: Tensor::zeros(&[h, w]),
            };
            let full = kl_value(&teacher, c, &student, &ones, &ClassWeightVector::uniform(c))?;
            let mut direct = 0.0;
            for q in 0..hw {
                let (pt, ps) = (pixel(&teacher, c, hw, q), pixel(&student, c, hw, q));
                for j in 0..c {
                    if pt[j] > 0.0 {
                        direct += pt[j] * (pt[j] / ps[j].max(1e-12)).ln();
                    }
                }
            }
            max_reduction = max_reduction.max((full - direct / hw as f64).abs());

            // Move the student off the target; the loss must not drop.
            let at_target = kl_value(&teacher, k, &target, &weights, &cw)?;
            let delta = rng.random_range(1e-3..0.5);
            let moved: Vec<Vec<f64>> = (0..hw)
                .map(|q| {
                    let t = pixel(&target, c, hw, q);
                    let raw: Vec<f64> = t.iter().map(|v| v + delta * rng.random_range(0.0..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    raw.iter().map(|v| v / s).collect()
                })
                .collect();
            let moved = class_map(&moved, c, h, w);
            if kl_value(&teacher, k, &moved, &weights, &cw)? < at_target - 1e-12 {
                perturb_fail += 1;
            }
        }
        let passed = min_loss >= -1e-9 && max_zero <= 1e-9 && max_reduction <= 1e-9 && perturb_fail == 0;
        Ok((
            passed,
            format!(
                "{trials} trials; min L_u {min_loss:.2e}, |L_u| at target {max_zero:.1e}, K=C reduction err {max_reduction:.1e}, {perturb_fail} perturbation decreases"
            ),
        ))
    })
}

/// A frozen student pulls the teacher in by exactly α per step.
pub fn check_ema_contraction(steps: usize) -> CheckOutcome {
    timed("EMA contraction", || {
        let mut rng = ChaCha8Rng::seed_from_u64(606);
        let alpha = 0.99;
        let mut student = ParameterStore::new(Role::Student);
        let mut teacher = ParameterStore::new(Role::Teacher);
        for (name, shape) in [("a", vec![4, 3]), ("b", vec![7])] {
            let n = shape.iter().product();
            student.insert(name, Tensor::new(&shape, (0..n).map(|_| rng.random_range(-3.0..3.0)).collect())?);
            teacher.insert(name, Tensor::new(&shape, (0..n).map(|_| rng.random_range(-3.0..3.0)).collect())?);
        }
        let gaps = |t: &ParameterStore| -> Vec<f64> {
            t.iter()
                .zip(student.iter())
                .flat_map(|((_, a), (_, b))| a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect::<Vec<_>>())
                .collect()
        };
        let initial = gaps(&teacher);
        let mut prev = initial.clone();
        let mut worst: f64 = 0.0;
        for n in 1..=steps {
            ema_update(&mut teacher, &student, alpha)?;
            let now = gaps(&teacher);
            for ((g, p), g0) in now.iter().zip(&prev).zip(&initial) {
                worst = worst.max((g - alpha * p).abs());
                worst = worst.max((g - alpha.powi(n as i32) * g0).abs());
            }
            prev = now;
        }
        Ok((worst <= 1e-12, format!("{steps} steps, max deviation {worst:.1e}")))
    })
}

/// Confusion matrix, IoU and mIoU against per-pixel set counting.
pub fn check_miou(maps: usize) -> CheckOutcome {
    timed("mIoU oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(707);
        let mut mismatches = 0usize;
        for _ in 0..maps {
            let c = rng.random_range(2..=6);
            let n = rng.random_range(1..=100);
            let truth: Vec<usize> = (0..n)
                .map(|_| if rng.random_bool(0.1) { IGNORE_INDEX } else { rng.random_range(0..c) })
                .collect();
            let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let mut cm = ConfusionMatrix::new(c);
            update_confusion(&mut cm, &pred, &truth, IGNORE_INDEX)?;
            let iou = iou_per_class(&cm);
            let got = miou(&iou);

            let mut present = Vec::new();
            for k in 0..c {
                let (mut inter, mut union) = (0u64, 0u64);
                for i in 0..n {
                    if truth[i] == IGNORE_INDEX {
                        continue;
                    }
                    let (t, p) = (truth[i] == k, pred[i] == k);
                    inter += (t && p) as u64;
                    union += (t || p) as u64;
                }
                if union > 0 {
                    let v = inter as f64 / union as f64;
                    if iou.iou[k] != v || !iou.present[k] {
                        mismatches += 1;
                    }
                    present.push(v);
                } else if iou.present[k] {
                    mismatches += 1;
                }
            }
            match got {
                Ok(m) if !present.is_empty() => {
                    if m != present.iter().sum::<f64>() / present.len() as f64 {
                        mismatches += 1;
                    }
                }
                Err(_) if present.is_empty() => {}
                _ => mismatches += 1,
            }
            let diag = (0..n).filter(|&i| truth[i] != IGNORE_INDEX && truth[i] == pred[i]).count();
            let counted = truth.iter().filter(|&&t| t != IGNORE_INDEX).count();
            let acc = (counted > 0).then(|| diag as f64 / counted as f64);
            if cm.pixel_accuracy() != acc {
                mismatches += 1;
            }
        }
        Ok((mismatches == 0, format!("{maps} maps, {mismatches} mismatches")))
    })
}

/// Every fast check at its acceptance size.
pub fn run_suite() -> Vec<CheckOutcome> {
    vec![
        check_fuzzy_labels(1000),
        check_entropy_weights(100_000),
        check_rebalance(1000),
        check_gradient_gate(10),
        check_kl_properties(200),
        check_ema_contraction(100),
        check_miou(100),
    ]
}

