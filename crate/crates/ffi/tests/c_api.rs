use std::ffi::{CStr, CString};
use std::ptr;

use eventcause_ffi::*;

const TINY: &str = r#"{"seed": 2, "dataset": {"time_steps": 90},
  "causal": {"hidden": 4, "embed_dim": 3, "max_epochs": 2, "batch_frames": 8},
  "predictor": {"hidden": 4, "embed_dim": 3, "max_epochs": 2, "batch_frames": 8}}"#;

fn last_error() -> String {
    let p = ec_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn dataset() -> *mut EcDataset {
    let cfg = CString::new(TINY).unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { ec_dataset_synthetic(cfg.as_ptr(), &mut ds) }, EcStatus::Ok);
    ds
}

#[test]
fn train_save_load_predict_roundtrip() {
    let ds = dataset();
    let n = unsafe { ec_dataset_len(ds) };
    assert!(n > 0);

    let mut model = ptr::null_mut();
    assert_eq!(unsafe { ec_causal_train(ds, &mut model) }, EcStatus::Ok);
    assert_eq!(unsafe { ec_causal_event_types(model) }, 4);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("c.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { ec_causal_save(model, path.as_ptr(), ptr::null()) },
        EcStatus::Ok
    );
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { ec_causal_load(path.as_ptr(), &mut loaded) }, EcStatus::Ok);

    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    assert_eq!(
        unsafe { ec_causal_predict_ite(model, ds, 0, a.as_mut_ptr(), n) },
        EcStatus::Ok
    );
    assert_eq!(
        unsafe { ec_causal_predict_ite(loaded, ds, 0, b.as_mut_ptr(), n) },
        EcStatus::Ok
    );
    assert_eq!(a, b);
    assert!(a.iter().all(|v| v.is_finite() && v.abs() <= 1.0));

    let mut short = vec![0.0; n - 1];
    assert_eq!(
        unsafe { ec_causal_predict_ite(model, ds, 0, short.as_mut_ptr(), n - 1) },
        EcStatus::InvalidArgument
    );
    assert!(last_error().contains("needed"));
    assert_eq!(
        unsafe { ec_causal_predict_ite(model, ds, 9, a.as_mut_ptr(), n) },
        EcStatus::InvalidArgument
    );

    unsafe {
        ec_causal_free(model);
        ec_causal_free(loaded);
        ec_dataset_free(ds);
    }
}

#[test]
fn errors_map_to_codes() {
    let mut ds = ptr::null_mut();
    let bad = CString::new(r#"{"nope": 1}"#).unwrap();
    assert_eq!(unsafe { ec_dataset_synthetic(bad.as_ptr(), &mut ds) }, EcStatus::Config);
    assert!(last_error().contains("nope"));
    assert!(ds.is_null());

    assert_eq!(
        unsafe { ec_dataset_synthetic(ptr::null(), &mut ds) },
        EcStatus::InvalidArgument
    );

    let mut model = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    assert_eq!(unsafe { ec_causal_load(missing.as_ptr(), &mut model) }, EcStatus::Io);

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { ec_causal_load(junk.as_ptr(), &mut model) },
        EcStatus::Checkpoint
    );
    assert!(last_error().contains("header"));

    // Null handles are tolerated by the free functions and size queries.
    unsafe {
        ec_dataset_free(ptr::null_mut());
        ec_causal_free(ptr::null_mut());
        ec_predictor_free(ptr::null_mut());
    }
    assert_eq!(unsafe { ec_dataset_len(ptr::null()) }, 0);
}

#[test]
fn bacc_and_dataset_accessors() {
    let probs = [0.9, 0.8, 0.7, 0.1, 0.2, 0.3, 0.6, 0.55];
    let labels = [1u8, 1, 1, 1, 0, 0, 0, 0];
    let mut out = 0.0;
    assert_eq!(
        unsafe { ec_bacc(probs.as_ptr(), labels.as_ptr(), 8, &mut out) },
        EcStatus::Ok
    );
    assert_eq!(out, 0.625);
    assert_eq!(
        unsafe { ec_bacc(probs.as_ptr(), labels.as_ptr(), 0, &mut out) },
        EcStatus::UndefinedMetric
    );

    let ds = dataset();
    let n = unsafe { ec_dataset_len(ds) };
    let mut count = 0;
    assert_eq!(
        unsafe { ec_dataset_test_indices(ds, ptr::null_mut(), 0, &mut count) },
        EcStatus::Ok
    );
    let mut idx = vec![0usize; count];
    assert_eq!(
        unsafe { ec_dataset_test_indices(ds, idx.as_mut_ptr(), count, &mut count) },
        EcStatus::Ok
    );
    assert!(idx.iter().all(|&i| i < n));
    let mut labels = vec![7u8; n];
    assert_eq!(unsafe { ec_dataset_labels(ds, labels.as_mut_ptr(), n) }, EcStatus::Ok);
    assert!(labels.iter().all(|&l| l <= 1));
    unsafe { ec_dataset_free(ds) };
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(ec_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
