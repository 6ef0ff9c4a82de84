use std::ffi::{CStr, CString};
use std::ptr;

use ivmkit_ffi::*;

fn blobs(n: usize) -> (Vec<f64>, Vec<u8>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let c = (i % 2) as f64;
        let jitter = ((i * 37 % 17) as f64 / 17.0 - 0.5) * 1.5;
        x.extend([2.0 * c + jitter, -c + 0.3 * jitter]);
        y.push((i % 2) as u8);
    }
    (x, y)
}

fn last_error() -> String {
    let p = ivmkit_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn ivm_fit_predict_save_load() {
    let (x, y) = blobs(40);
    let mut model = ptr::null_mut();
    let st = unsafe {
        ivmkit_fit_ivm(x.as_ptr(), y.as_ptr(), 40, 2, IvmkitKernel::Radial, 0.5, 1.0, IvmkitMode::Exact, 1e-4, 0, &mut model)
    };
    assert_eq!(st, IvmkitStatus::Ok);
    let mut nv = 0usize;
    let mut dim = 0usize;
    let mut is_ivm = -1;
    unsafe {
        assert_eq!(ivmkit_model_n_vectors(model, &mut nv), IvmkitStatus::Ok);
        assert_eq!(ivmkit_model_dim(model, &mut dim), IvmkitStatus::Ok);
        assert_eq!(ivmkit_model_is_ivm(model, &mut is_ivm), IvmkitStatus::Ok);
    }
    assert!((1..40).contains(&nv));
    assert_eq!((dim, is_ivm), (2, 1));

    let mut scores = vec![0.0; 40];
    assert_eq!(unsafe { ivmkit_predict(model, x.as_ptr(), 40, 2, scores.as_mut_ptr()) }, IvmkitStatus::Ok);
    assert!(scores.iter().all(|p| (0.0..=1.0).contains(p)));
    let mut auc = 0.0;
    assert_eq!(unsafe { ivmkit_auc(scores.as_ptr(), y.as_ptr(), 40, &mut auc) }, IvmkitStatus::Ok);
    assert!(auc > 0.9, "auc {auc}");

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.model").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ivmkit_model_save(model, path.as_ptr()) }, IvmkitStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { ivmkit_model_load(path.as_ptr(), &mut back) }, IvmkitStatus::Ok);
    let mut again = vec![0.0; 40];
    assert_eq!(unsafe { ivmkit_predict(back, x.as_ptr(), 40, 2, again.as_mut_ptr()) }, IvmkitStatus::Ok);
    for (a, b) in scores.iter().zip(&again) {
        assert!((a - b).abs() < 1e-12);
    }
    unsafe {
        ivmkit_model_free(model);
        ivmkit_model_free(back);
        ivmkit_model_free(ptr::null_mut());
    }
}

#[test]
fn svm_fit_and_score() {
    let (x, y) = blobs(30);
    let mut model = ptr::null_mut();
    let st = unsafe { ivmkit_fit_svm(x.as_ptr(), y.as_ptr(), 30, 2, IvmkitKernel::Linear, 0.0, 1.0, &mut model) };
    assert_eq!(st, IvmkitStatus::Ok);
    let mut is_ivm = -1;
    unsafe { ivmkit_model_is_ivm(model, &mut is_ivm) };
    assert_eq!(is_ivm, 0);
    let mut scores = vec![0.0; 30];
    assert_eq!(unsafe { ivmkit_predict(model, x.as_ptr(), 30, 2, scores.as_mut_ptr()) }, IvmkitStatus::Ok);
    let mut auc = 0.0;
    unsafe { ivmkit_auc(scores.as_ptr(), y.as_ptr(), 30, &mut auc) };
    assert!(auc > 0.9);
    unsafe { ivmkit_model_free(model) };
}

#[test]
fn errors_are_reported_not_panicked() {
    let (x, mut y) = blobs(10);
    let mut model = ptr::null_mut();
    let st = unsafe { ivmkit_fit_ivm(ptr::null(), y.as_ptr(), 10, 2, IvmkitKernel::Linear, 0.0, 1.0, IvmkitMode::Auto, 0.0, 0, &mut model) };
    assert_eq!(st, IvmkitStatus::NullPointer);
    assert!(last_error().contains('x'));
    assert!(model.is_null());

    y.iter_mut().for_each(|v| *v = 1);
    let st = unsafe { ivmkit_fit_svm(x.as_ptr(), y.as_ptr(), 10, 2, IvmkitKernel::Linear, 0.0, 1.0, &mut model) };
    assert_eq!(st, IvmkitStatus::DataError);

    y[0] = 0;
    let st = unsafe { ivmkit_fit_ivm(x.as_ptr(), y.as_ptr(), 10, 2, IvmkitKernel::Radial, -1.0, 1.0, IvmkitMode::Auto, 0.0, 0, &mut model) };
    assert_eq!(st, IvmkitStatus::InvalidArgument);

    let missing = CString::new("/nonexistent/dir/m.model").unwrap();
    assert_eq!(unsafe { ivmkit_model_load(missing.as_ptr(), &mut model) }, IvmkitStatus::IoError);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.model");
    std::fs::write(&bad, "not a model\n").unwrap();
    let bad = CString::new(bad.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ivmkit_model_load(bad.as_ptr(), &mut model) }, IvmkitStatus::FormatError);
    assert!(!last_error().is_empty());

    let mut out = 0.0;
    assert_eq!(unsafe { ivmkit_auc([0.1, 0.2].as_ptr(), [1u8, 1].as_ptr(), 2, &mut out) }, IvmkitStatus::DataError);
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(ivmkit_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// The generated header must parse as C when a compiler is available.
#[test]
fn header_compiles() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/ivmkit.h");
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", "-std=c99", "-Wall", "-Werror", header])
        .status()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(status.success());
}
