use fuzzyseg::harness::{max_iterations, poly_lr, run_training, Dataset, RunOptions, TrainConfig};

fn tiny() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    for (k, v) in [
        ("image_size", "32"),
        ("crop_size", "16"),
        ("base_width", "4"),
        ("embed_dim", "4"),
        ("depth", "2"),
        ("train_scenes", "16"),
        ("eval_scenes", "4"),
        ("epochs", "2"),
        ("batch_labeled", "2"),
        ("batch_unlabeled", "2"),
        ("lr", "0.01"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.validate().unwrap();
    cfg
}

#[test]
fn runs_are_reproducible_and_seed_dependent() {
    let cfg = tiny();
    let data = Dataset::generate(&cfg).unwrap();
    let split = data.split(&cfg).unwrap();
    let a = run_training(&cfg, &data, &split, &RunOptions::default()).unwrap();
    let b = run_training(&cfg, &data, &split, &RunOptions::default()).unwrap();
    assert_eq!(a.teacher.checksum(), b.teacher.checksum());
    assert_eq!(a.student.checksum(), b.student.checksum());
    let la: Vec<u64> = a.records.iter().map(|r| r.losses.total.to_bits()).collect();
    let lb: Vec<u64> = b.records.iter().map(|r| r.losses.total.to_bits()).collect();
    assert_eq!(la, lb);

    let other = TrainConfig { seed: 1, ..cfg.clone() };
    let c = run_training(&other, &data, &data.split(&other).unwrap(), &RunOptions::default()).unwrap();
    assert_ne!(a.teacher.checksum(), c.teacher.checksum());
}

#[test]
fn schedule_and_logging() {
    let cfg = tiny();
    let data = Dataset::generate(&cfg).unwrap();
    let split = data.split(&cfg).unwrap();
    let out = run_training(&cfg, &data, &split, &RunOptions::default()).unwrap();
    // 14 unlabelled scenes in batches of 2, two epochs.
    assert_eq!(out.max_iterations, 14);
    assert_eq!(max_iterations(&cfg, &split), 14);
    assert_eq!(out.records.len(), 14);
    for (i, r) in out.records.iter().enumerate() {
        assert_eq!(r.iteration, i);
        assert_eq!(r.lr, poly_lr(cfg.lr, i, 14, cfg.poly_power));
        let l = &r.losses;
        assert!(l.supervised >= 0.0 && l.unsupervised >= -1e-9 && l.contrastive >= -1e-9);
        let total = l.supervised + 0.5 * l.unsupervised + 0.1 * l.contrastive;
        assert!((l.total - total).abs() < 1e-12);
    }
    // Teacher starts uniform: no confident pixel, so nothing to distil yet.
    assert_eq!(out.records[0].losses.unsupervised, 0.0);
    assert!(out.final_eval.row.miou.is_finite());
}

#[test]
fn teacher_lags_student() {
    let cfg = tiny();
    let data = Dataset::generate(&cfg).unwrap();
    let split = data.split(&cfg).unwrap();
    let out = run_training(&cfg, &data, &split, &RunOptions::default()).unwrap();
    let init = fuzzyseg::model::init_params(&cfg.model(), cfg.seed).unwrap();
    // The teacher moved from the initialization, but by less than the student.
    let dist = |a: &fuzzyseg::teacher_student::ParameterStore| -> f64 {
        a.iter()
            .map(|(n, t)| {
                let i = init.get(n).unwrap();
                t.data().iter().zip(i.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    };
    let (dt, ds) = (dist(&out.teacher), dist(&out.student));
    assert!(dt > 0.0 && dt < ds, "teacher {dt} student {ds}");
}
