use fuzzyseg::losses::{compute_prototypes, contrastive_loss, unsupervised_kl};
use fuzzyseg::pseudolabel::{fuzzy_labels, normalized_entropy, pixel_weights, PixelWeightMap};
use fuzzyseg::rebalance::{class_weights, ClassWeightVector};
use fuzzyseg::teacher_student::{complementary_channel_masks, ema_update, ParameterStore, Role};
use fuzzyseg::tensorkit::{Graph, Tensor};
use proptest::prelude::*;

/// C×H×W teacher map from raw positive scores, normalized per pixel.
fn teacher_map(c: usize, hw: usize, raw: &[f64]) -> Tensor {
    let mut v = raw.to_vec();
    for q in 0..hw {
        let s: f64 = (0..c).map(|k| v[k * hw + q]).sum();
        for k in 0..c {
            v[k * hw + q] /= s;
        }
    }
    Tensor::new(&[c, 1, hw], v).unwrap()
}

fn scores(c: usize, hw: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-3..1.0f64, c * hw)
}

fn map_case() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>)> {
    (2usize..6, 1usize..10).prop_flat_map(|(c, hw)| (Just(c), Just(hw), 1..=c, scores(c, hw)))
}

proptest! {
    #[test]
    fn fuzzy_support_is_top_k_with_unit_mass((c, hw, k, raw) in map_case()) {
        let t = teacher_map(c, hw, &raw);
        let f = fuzzy_labels(&t, k).unwrap();
        for q in 0..hw {
            let col: Vec<f64> = (0..c).map(|j| t.data()[j * hw + q]).collect();
            let mut order: Vec<usize> = (0..c).collect();
            order.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
            let top = &order[..k];
            let mut mass = 0.0;
            for j in 0..c {
                let p = f.probs().data()[j * hw + q];
                if p > 0.0 {
                    prop_assert!(top.contains(&j));
                    mass += p;
                }
            }
            prop_assert!((mass - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn fuzzy_labels_are_idempotent((c, hw, k, raw) in map_case()) {
        let once = fuzzy_labels(&teacher_map(c, hw, &raw), k).unwrap();
        let twice = fuzzy_labels(once.probs(), k).unwrap();
        prop_assert!(once.probs().max_abs_diff(twice.probs()) <= 1e-12);
    }

    #[test]
    fn entropy_ignores_class_order((c, hw, _k, raw) in map_case(), shift in 1usize..5) {
        let t = teacher_map(c, hw, &raw);
        let mut rolled = vec![0.0; raw.len()];
        for j in 0..c {
            let to = (j + shift) % c;
            rolled[to * hw..(to + 1) * hw].copy_from_slice(&t.data()[j * hw..(j + 1) * hw]);
        }
        let a = normalized_entropy(&t).unwrap();
        let b = normalized_entropy(&Tensor::new(&[c, 1, hw], rolled).unwrap()).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
        prop_assert!(a.data().iter().all(|h| (0.0..=1.0).contains(h)));
    }

    #[test]
    fn weight_non_increasing_below_threshold(a in 0.0..1.0f64, b in 0.0..1.0f64, tau in 0.05..=1.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let w = pixel_weights(&Tensor::from_vec(vec![lo, hi]), tau).unwrap();
        let (wl, wh) = (w.data()[0], w.data()[1]);
        prop_assert!(wh <= wl);
        if hi <= tau {
            prop_assert_eq!(wh, 1.0 - hi);
        } else {
            prop_assert_eq!(wh, 0.0);
        }
    }

    #[test]
    fn class_weights_match_sorted_median(freq in prop::collection::vec(0.0..1e4f64, 1..9)) {
        let eps = 1e-6;
        let got = class_weights(&freq, eps).unwrap();
        let mut s = freq.clone();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let med = if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 };
        for (w, f) in got.weights.iter().zip(&freq) {
            prop_assert_eq!(*w, med / (f + eps));
        }
    }

    #[test]
    fn rarer_classes_weigh_more(freq in prop::collection::vec(1.0..1e4f64, 2..9)) {
        let w = class_weights(&freq, 1e-6).unwrap().weights;
        for i in 0..freq.len() {
            for j in 0..freq.len() {
                if freq[i] < freq[j] {
                    prop_assert!(w[i] >= w[j]);
                }
            }
        }
    }

    #[test]
    fn class_weights_scale_free(freq in prop::collection::vec(1.0..1e3f64, 2..9), s in 0.5..100.0f64) {
        let a = class_weights(&freq, 1e-6).unwrap().weights;
        let scaled: Vec<f64> = freq.iter().map(|f| f * s).collect();
        let b = class_weights(&scaled, 1e-6).unwrap().weights;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-4 * x.abs());
        }
    }

    #[test]
    fn kl_is_nonnegative_and_minimized_at_target(
        (c, hw, k, raw) in map_case(),
        student in prop::collection::vec(1e-3..1.0f64, 45),
        cw in prop::collection::vec(0.05..20.0f64, 5),
    ) {
        let t = teacher_map(c, hw, &raw);
        let fuzzy = fuzzy_labels(&t, k).unwrap();
        let weights = PixelWeightMap::from_teacher(&t, 1.0).unwrap();
        let class_w = ClassWeightVector { weights: cw[..c].to_vec(), ..ClassWeightVector::uniform(c) };
        let eval = |s: &Tensor| {
            let mut g = Graph::new();
            let v = g.constant(s.clone());
            let (term, _) = unsupervised_kl(&mut g, &fuzzy, v, &weights, &class_w).unwrap();
            g.value(term.value).item()
        };
        let perturbed = eval(&teacher_map(c, hw, &student[..c * hw]));
        let at_target = eval(fuzzy.probs());
        prop_assert!(perturbed >= -1e-9);
        prop_assert!(at_target.abs() <= 1e-9);
        prop_assert!(perturbed >= at_target - 1e-9);
    }

    #[test]
    fn contrastive_stays_in_range(
        emb in prop::collection::vec(-3.0..3.0f64, 3 * 12),
        cls in prop::collection::vec(0usize..4, 12),
        wts in prop::collection::vec(0.0..1.0f64, 12),
    ) {
        let e = Tensor::new(&[1, 3, 3, 4], emb).unwrap();
        let protos = compute_prototypes(&e, &cls, &Tensor::new(&[1, 3, 4], wts).unwrap(), 0.5, 4).unwrap();
        let mut g = Graph::new();
        let v = g.constant(e);
        let term = contrastive_loss(&mut g, v, &protos).unwrap();
        let loss = g.value(term.value).item();
        prop_assert!((-1e-9..=2.0 + 1e-9).contains(&loss));
    }

    #[test]
    fn ema_commutes_with_linear_maps(
        t in prop::collection::vec(-5.0..5.0f64, 6),
        s in prop::collection::vec(-5.0..5.0f64, 6),
        a in 0.5..0.999f64,
        scale in -3.0..3.0f64,
    ) {
        let store = |role, v: &[f64]| {
            let mut p = ParameterStore::new(role);
            p.insert("w", Tensor::new(&[2, 3], v.to_vec()).unwrap());
            p
        };
        let lin = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| scale * x).collect() };
        let mut direct = store(Role::Teacher, &t);
        ema_update(&mut direct, &store(Role::Student, &s), a).unwrap();
        let mut mapped = store(Role::Teacher, &lin(&t));
        ema_update(&mut mapped, &store(Role::Student, &lin(&s)), a).unwrap();
        let want = lin(direct.get("w").unwrap().data());
        for (x, y) in mapped.get("w").unwrap().data().iter().zip(&want) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn ema_contracts_toward_frozen_student(
        t in prop::collection::vec(-5.0..5.0f64, 4),
        s in prop::collection::vec(-5.0..5.0f64, 4),
        a in 0.5..0.999f64,
        steps in 1usize..50,
    ) {
        let mut teacher = ParameterStore::new(Role::Teacher);
        teacher.insert("w", Tensor::from_vec(t.clone()));
        let mut student = ParameterStore::new(Role::Student);
        student.insert("w", Tensor::from_vec(s.clone()));
        let gap0 = t.iter().zip(&s).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        for _ in 0..steps {
            ema_update(&mut teacher, &student, a).unwrap();
        }
        let gap = teacher.get("w").unwrap().max_abs_diff(student.get("w").unwrap());
        prop_assert!(gap <= a.powi(steps as i32) * gap0 + 1e-12);
    }

    #[test]
    fn channel_masks_are_complementary(n in 1usize..4, c in 1usize..20, p in 0.0..=1.0f64, seed in any::<u64>()) {
        let (m, inv) = complementary_channel_masks(n, c, p, seed).unwrap();
        for (a, b) in m.data().iter().zip(inv.data()) {
            prop_assert!(*a == 0.0 || *a == 1.0);
            prop_assert_eq!(a + b, 1.0);
        }
    }
}
