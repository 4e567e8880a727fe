use std::ffi::{c_char, CString};
use std::ptr;

use fuzzyseg_ffi::*;

const TINY: &str = "image_size = 32\ncrop_size = 16\nbase_width = 4\nembed_dim = 4\ndepth = 2\n\
train_scenes = 16\neval_scenes = 4\nepochs = 1\nbatch_labeled = 2\nbatch_unlabeled = 2\nlr = 0.01\n";

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { fs_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf.iter().take(n.min(255)).map(|&b| b as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn fuzzy_labels_and_entropy() {
    // 1 image, 3 classes, 1×2 pixels, class-major.
    let probs = [0.5, 0.1, 0.3, 0.1, 0.2, 0.8];
    let mut fuzzy = [0.0; 6];
    let st = unsafe { fs_fuzzy_labels(probs.as_ptr(), 1, 3, 1, 2, 2, fuzzy.as_mut_ptr()) };
    assert_eq!(st, FsStatus::Ok);
    let expect = [0.5 / 0.8, 0.1 / 0.9, 0.3 / 0.8, 0.0, 0.0, 0.8 / 0.9];
    for (a, b) in fuzzy.iter().zip(expect) {
        assert!((a - b).abs() < 1e-12);
    }

    let mut h = [0.0; 2];
    assert_eq!(
        unsafe { fs_normalized_entropy(probs.as_ptr(), 1, 3, 1, 2, h.as_mut_ptr()) },
        FsStatus::Ok
    );
    let ent = |p: &[f64]| -p.iter().map(|v| v * v.ln()).sum::<f64>() / 3f64.ln();
    assert!((h[0] - ent(&[0.5, 0.3, 0.2])).abs() < 1e-12);
    assert!((h[1] - ent(&[0.1, 0.1, 0.8])).abs() < 1e-12);

    let mut w = [0.0; 2];
    assert_eq!(unsafe { fs_pixel_weights(h.as_ptr(), 2, 0.7, w.as_mut_ptr()) }, FsStatus::Ok);
    assert_eq!(w[0], 0.0);
    assert!((w[1] - (1.0 - h[1])).abs() < 1e-15);

    let st = unsafe { fs_fuzzy_labels(probs.as_ptr(), 1, 3, 1, 2, 4, fuzzy.as_mut_ptr()) };
    assert_eq!(st, FsStatus::InvalidArgument);
    assert!(last_error().contains("K=4"));
}

#[test]
fn class_weights_and_miou() {
    let f = [0.6, 0.3, 0.1, 0.0];
    let mut w = [0.0; 4];
    assert_eq!(unsafe { fs_class_weights(f.as_ptr(), 4, 1e-6, 0.0, w.as_mut_ptr()) }, FsStatus::Ok);
    assert!((w[1] - 0.2 / (0.3 + 1e-6)).abs() < 1e-12);
    assert!((w[3] - 0.2 / 1e-6).abs() < 1e-6);
    assert_eq!(unsafe { fs_class_weights(f.as_ptr(), 4, 1e-6, 20.0, w.as_mut_ptr()) }, FsStatus::Ok);
    assert_eq!(w[3], 20.0);

    let pred = [0u32, 1, 1, 2];
    let truth = [0u32, 1, 0, 255];
    let (mut m, mut per) = (0.0, [0.0; 3]);
    let st = unsafe { fs_miou(pred.as_ptr(), truth.as_ptr(), 4, 3, 255, &mut m, per.as_mut_ptr()) };
    assert_eq!(st, FsStatus::Ok);
    assert_eq!(per, [0.5, 0.5, 0.0]);
    assert_eq!(m, 0.5);

    let bad = [0u32, 7, 1, 2];
    let st = unsafe { fs_miou(bad.as_ptr(), truth.as_ptr(), 4, 3, 255, &mut m, ptr::null_mut()) };
    assert_eq!(st, FsStatus::Validation);
}

#[test]
fn null_pointers_are_reported() {
    let st = unsafe { fs_pixel_weights(ptr::null(), 3, 0.7, ptr::null_mut()) };
    assert_eq!(st, FsStatus::NullPointer);
    assert!(last_error().contains("entropy"));
    assert_eq!(unsafe { fs_config_set(ptr::null_mut(), ptr::null(), ptr::null()) }, FsStatus::NullPointer);
    unsafe {
        fs_config_free(ptr::null_mut());
        fs_model_free(ptr::null_mut());
    }
}

#[test]
fn config_errors_map_to_codes() {
    let cfg = fs_config_new();
    let key = CString::new("lambda_u").unwrap();
    let bad = CString::new("banana").unwrap();
    assert_eq!(unsafe { fs_config_set(cfg, key.as_ptr(), bad.as_ptr()) }, FsStatus::Config);
    let unknown = CString::new("no_such_key").unwrap();
    let one = CString::new("1").unwrap();
    assert_eq!(unsafe { fs_config_set(cfg, unknown.as_ptr(), one.as_ptr()) }, FsStatus::Config);
    let tau = CString::new("entropy_threshold").unwrap();
    let zero = CString::new("0").unwrap();
    let st = unsafe { fs_config_set(cfg, tau.as_ptr(), zero.as_ptr()) };
    if st == FsStatus::Ok {
        assert_eq!(unsafe { fs_config_validate(cfg) }, FsStatus::Config);
    } else {
        assert_eq!(st, FsStatus::Config);
    }
    unsafe { fs_config_free(cfg) };
}

#[test]
fn train_save_load_predict() {
    let text = CString::new(TINY).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { fs_config_parse(text.as_ptr(), &mut cfg) }, FsStatus::Ok);
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { fs_train(cfg, &mut model) }, FsStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { fs_model_num_classes(model) }, 4);

    let images = vec![0.5; 2 * 3 * 32 * 32];
    let mut probs = vec![0.0; 2 * 4 * 32 * 32];
    let st = unsafe { fs_model_predict(model, images.as_ptr(), 2, 32, 32, probs.as_mut_ptr(), probs.len()) };
    assert_eq!(st, FsStatus::Ok, "{}", last_error());
    for q in 0..32 * 32 {
        let s: f64 = (0..4).map(|c| probs[c * 1024 + q]).sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
    let st = unsafe { fs_model_predict(model, images.as_ptr(), 2, 32, 32, probs.as_mut_ptr(), 7) };
    assert_eq!(st, FsStatus::InvalidArgument);

    let mut m = 0.0;
    let mut per = [0.0; 4];
    assert_eq!(unsafe { fs_model_evaluate(model, &mut m, per.as_mut_ptr(), 4) }, FsStatus::Ok);
    assert!((0.0..=1.0).contains(&m));

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { fs_model_save(model, path.as_ptr()) }, FsStatus::Ok, "{}", last_error());
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { fs_model_load(path.as_ptr(), &mut loaded) }, FsStatus::Ok, "{}", last_error());
    let mut probs2 = vec![0.0; probs.len()];
    unsafe { fs_model_predict(loaded, images.as_ptr(), 2, 32, 32, probs2.as_mut_ptr(), probs2.len()) };
    assert_eq!(probs, probs2);

    let missing = CString::new(dir.path().join("absent").to_str().unwrap()).unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { fs_model_load(missing.as_ptr(), &mut none) }, FsStatus::Io);
    assert!(none.is_null());

    unsafe {
        fs_model_free(loaded);
        fs_model_free(model);
        fs_config_free(cfg);
    }
}

#[test]
fn header_declares_the_api() {
    let header = include_str!("../include/fuzzyseg.h");
    for sym in [
        "fs_last_error_message",
        "fs_config_new",
        "fs_train",
        "fs_model_predict",
        "fs_fuzzy_labels",
        "fs_miou",
        "FS_STATUS_NUMERICAL",
        "typedef struct FsModel FsModel",
    ] {
        assert!(header.contains(sym), "missing {sym}");
    }
}
