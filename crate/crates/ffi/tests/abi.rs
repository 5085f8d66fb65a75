use std::ffi::{CStr, CString};
use std::ptr;

use esgnn_ffi::*;

fn last_error() -> String {
    let p = esgnn_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_dataset() -> *mut EsgnnDataset {
    let mut ds = ptr::null_mut();
    assert_eq!(
        unsafe { esgnn_dataset_generate(0.9, 60, 3, &mut ds) },
        EsgnnStatus::Ok
    );
    assert!(!ds.is_null());
    ds
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(esgnn_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_reported() {
    assert_eq!(
        unsafe { esgnn_dataset_load(ptr::null(), ptr::null_mut()) },
        EsgnnStatus::NullPointer
    );
    assert!(last_error().contains("null"));
    let mut h = 0.0;
    assert_eq!(
        unsafe { esgnn_dataset_homophily(ptr::null(), &mut h) },
        EsgnnStatus::NullPointer
    );
    unsafe {
        esgnn_dataset_free(ptr::null_mut());
        esgnn_model_free(ptr::null_mut());
    }
}

#[test]
fn missing_bundle_is_io_error() {
    let path = CString::new("/nonexistent/bundle").unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(
        unsafe { esgnn_dataset_load(path.as_ptr(), &mut ds) },
        EsgnnStatus::Io
    );
    assert!(ds.is_null());
    assert!(last_error().contains("/nonexistent/bundle"));
}

#[test]
fn off_grid_target_is_contract_error() {
    let mut ds = ptr::null_mut();
    assert_eq!(
        unsafe { esgnn_dataset_generate(0.33, 60, 0, &mut ds) },
        EsgnnStatus::Contract
    );
    assert_eq!(
        unsafe { esgnn_dataset_generate(0.3, 61, 0, &mut ds) },
        EsgnnStatus::Contract
    );
}

#[test]
fn dataset_round_trip() {
    let ds = small_dataset();
    let (mut n, mut m, mut f, mut c) = (0, 0, 0, 0);
    unsafe {
        assert_eq!(
            esgnn_dataset_shape(ds, &mut n, &mut m, &mut f, &mut c),
            EsgnnStatus::Ok
        );
        assert_eq!(
            esgnn_dataset_shape(
                ds,
                ptr::null_mut(),
                ptr::null_mut(),
                ptr::null_mut(),
                ptr::null_mut()
            ),
            EsgnnStatus::Ok
        );
    }
    assert_eq!((n, f, c), (60, 500, 3));
    assert!(m > 0);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut back = ptr::null_mut();
    let (mut h1, mut h2) = (0.0, 0.0);
    unsafe {
        assert_eq!(esgnn_dataset_save(ds, path.as_ptr()), EsgnnStatus::Ok);
        assert_eq!(
            esgnn_dataset_load(path.as_ptr(), &mut back),
            EsgnnStatus::Ok
        );
        assert_eq!(esgnn_dataset_homophily(ds, &mut h1), EsgnnStatus::Ok);
        assert_eq!(esgnn_dataset_homophily(back, &mut h2), EsgnnStatus::Ok);
        esgnn_dataset_free(back);
        esgnn_dataset_free(ds);
    }
    assert_eq!(h1, h2);
}

#[test]
fn train_predict_checkpoint() {
    let ds = small_dataset();
    unsafe {
        assert_eq!(
            esgnn_dataset_normalize(ds, EsgnnFeatureNorm::RowL2),
            EsgnnStatus::Ok
        )
    };
    let (mut n, mut m, mut c) = (0, 0, 0);
    unsafe { esgnn_dataset_shape(ds, &mut n, &mut m, ptr::null_mut(), &mut c) };

    let config = CString::new("epochs = 5\npatience = 5\nhidden = 8\n").unwrap();
    let scheme = CString::new("dense").unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { esgnn_train(ds, config.as_ptr(), scheme.as_ptr(), 0, &mut model) },
        EsgnnStatus::Ok
    );
    let (mut val, mut test) = (-1.0, -1.0);
    unsafe { esgnn_model_accuracy(model, &mut val, &mut test) };
    assert!((0.0..=1.0).contains(&val) && (0.0..=1.0).contains(&test));

    let mut logits = vec![0.0; n * c];
    assert_eq!(
        unsafe { esgnn_model_logits(model, ds, logits.as_mut_ptr(), logits.len() - 1) },
        EsgnnStatus::BufferTooSmall
    );
    assert_eq!(
        unsafe { esgnn_model_logits(model, ds, logits.as_mut_ptr(), logits.len()) },
        EsgnnStatus::Ok
    );
    assert!(logits.iter().all(|v| v.is_finite()));

    let mut a_r = vec![0.0; m];
    assert_eq!(
        unsafe { esgnn_model_edge_split(model, ds, a_r.as_mut_ptr(), m) },
        EsgnnStatus::Ok
    );
    assert!(a_r.iter().all(|&a| a > 0.0 && a < 1.0));

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut loaded = ptr::null_mut();
    let mut again = vec![0.0; n * c];
    unsafe {
        assert_eq!(esgnn_model_save(model, path.as_ptr()), EsgnnStatus::Ok);
        assert_eq!(
            esgnn_model_load(path.as_ptr(), &mut loaded),
            EsgnnStatus::Ok
        );
        assert_eq!(
            esgnn_model_logits(loaded, ds, again.as_mut_ptr(), again.len()),
            EsgnnStatus::Ok
        );
        esgnn_model_accuracy(loaded, &mut val, ptr::null_mut());
        esgnn_model_free(loaded);
        esgnn_model_free(model);
        esgnn_dataset_free(ds);
    }
    assert_eq!(logits, again);
    assert!(val.is_nan());
}

#[test]
fn baseline_has_no_edge_split() {
    let ds = small_dataset();
    let config = CString::new("model = gcn\nepochs = 2\npatience = 2\nhidden = 4").unwrap();
    let scheme = CString::new("rate:0.5").unwrap();
    let mut model = ptr::null_mut();
    let mut buf = vec![0.0; 4096];
    unsafe {
        assert_eq!(
            esgnn_train(ds, config.as_ptr(), scheme.as_ptr(), 1, &mut model),
            EsgnnStatus::Ok
        );
        assert_eq!(
            esgnn_model_edge_split(model, ds, buf.as_mut_ptr(), buf.len()),
            EsgnnStatus::InvalidArgument
        );
        esgnn_model_free(model);
        esgnn_dataset_free(ds);
    }
    assert!(last_error().contains("gcn"));
}

#[test]
fn bad_config_and_scheme() {
    let ds = small_dataset();
    let bad = CString::new("learning_rate = 3").unwrap();
    let dense = CString::new("dense").unwrap();
    let weird = CString::new("half").unwrap();
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(
            esgnn_train(ds, bad.as_ptr(), dense.as_ptr(), 0, &mut model),
            EsgnnStatus::Contract
        );
        assert!(last_error().contains("learning_rate"));
        assert_eq!(
            esgnn_train(ds, ptr::null(), weird.as_ptr(), 0, &mut model),
            EsgnnStatus::InvalidArgument
        );
        esgnn_dataset_free(ds);
    }
    assert!(model.is_null());
}

#[test]
fn lemma_check_through_abi() {
    let mut dev = f64::NAN;
    assert_eq!(
        unsafe { esgnn_lemma_check(7, 12, 4, 10, &mut dev) },
        EsgnnStatus::Ok
    );
    assert!(dev <= 1e-10);
    assert_eq!(
        unsafe { esgnn_lemma_check(7, 1, 4, 1, &mut dev) },
        EsgnnStatus::Contract
    );
}
