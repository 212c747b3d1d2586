use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use rls_prune_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = rls_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_trainer(text: &str) -> *mut RlsTrainer {
    let mut h = ptr::null_mut();
    let status = unsafe { rls_trainer_new(cstr(text).as_ptr(), &mut h) };
    assert_eq!(status, RlsStatus::Ok, "{}", last_error());
    h
}

fn write_idx(dir: &Path, prefix: &str, n: usize) {
    let mut img = Vec::new();
    img.extend_from_slice(&0x0803u32.to_be_bytes());
    for v in [n as u32, 28, 28] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend((0..n * 784).map(|i| ((i / 784) % 10 * 20 + i % 13) as u8));
    let mut lbl = Vec::new();
    lbl.extend_from_slice(&0x0801u32.to_be_bytes());
    lbl.extend_from_slice(&(n as u32).to_be_bytes());
    lbl.extend((0..n).map(|i| (i % 10) as u8));
    std::fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), img).unwrap();
    std::fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), lbl).unwrap();
}

#[test]
fn predict_save_load_free() {
    let h = new_trainer("seed=4\n");
    let x = vec![0.5f64; 2 * 784];
    let mut y = vec![0.0f64; 20];
    let status = unsafe { rls_trainer_predict(h, x.as_ptr(), 2, 784, y.as_mut_ptr(), y.len()) };
    assert_eq!(status, RlsStatus::Ok);
    assert!(y.iter().any(|&v| v != 0.0));
    assert_eq!(&y[..10], &y[10..]);

    let dir = tempfile::tempdir().unwrap();
    let path = cstr(dir.path().join("a.ckpt").to_str().unwrap());
    assert_eq!(unsafe { rls_trainer_save(h, path.as_ptr()) }, RlsStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { rls_trainer_load(path.as_ptr(), &mut back) }, RlsStatus::Ok);
    let mut y2 = vec![0.0f64; 20];
    unsafe { rls_trainer_predict(back, x.as_ptr(), 2, 784, y2.as_mut_ptr(), y2.len()) };
    assert_eq!(y, y2);
    unsafe {
        rls_trainer_free(h);
        rls_trainer_free(back);
        rls_trainer_free(ptr::null_mut());
    }
}

#[test]
fn errors_carry_status_and_message() {
    let mut h = ptr::null_mut();
    let status = unsafe { rls_trainer_new(cstr("xi=7").as_ptr(), &mut h) };
    assert_eq!(status, RlsStatus::Config);
    assert!(last_error().contains("xi"));
    assert!(h.is_null());

    assert_eq!(
        unsafe { rls_trainer_new(ptr::null(), &mut h) },
        RlsStatus::NullPointer
    );

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"NOTACKPT and some more bytes").unwrap();
    let status = unsafe { rls_trainer_load(cstr(bad.to_str().unwrap()).as_ptr(), &mut h) };
    assert_eq!(status, RlsStatus::Format);
    assert!(h.is_null());

    let t = new_trainer("");
    let x = [0.0f64; 10];
    let mut y = [0.0f64; 10];
    let status = unsafe { rls_trainer_predict(t, x.as_ptr(), 1, 10, y.as_mut_ptr(), 10) };
    assert_eq!(status, RlsStatus::InvalidArgument);
    unsafe { rls_trainer_free(t) };
}

#[test]
fn trains_on_a_data_directory() {
    let dir = tempfile::tempdir().unwrap();
    write_idx(dir.path(), "train", 64);
    write_idx(dir.path(), "t10k", 20);
    let h = new_trainer(&format!(
        "data-dir={}\nepochs=3\nbatch-size=16\nq=1\n",
        dir.path().display()
    ));
    assert_eq!(unsafe { rls_trainer_train(h, 2) }, RlsStatus::Ok, "{}", last_error());
    let (mut epochs, mut weights, mut n, mut w) = (0usize, 0usize, 0.0f64, 0.0f64);
    let status = unsafe { rls_trainer_progress(h, &mut epochs, &mut weights, &mut n, &mut w) };
    assert_eq!(status, RlsStatus::Ok);
    assert_eq!(epochs, 2);
    assert!(weights > 0 && n <= 100.0 && w <= 100.0);
    // capped at the configured total
    assert_eq!(unsafe { rls_trainer_train(h, 5) }, RlsStatus::Ok);
    unsafe { rls_trainer_progress(h, &mut epochs, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(epochs, 3);
    let csv = dir.path().join("m.csv");
    let status = unsafe { rls_trainer_write_metrics(h, cstr(csv.to_str().unwrap()).as_ptr()) };
    assert_eq!(status, RlsStatus::Ok);
    assert_eq!(std::fs::read_to_string(csv).unwrap().lines().count(), 1 + 3 * 4);
    unsafe { rls_trainer_free(h) };
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("include/rls_prune.h"),
    )
    .unwrap();
    for name in [
        "typedef struct RlsTrainer RlsTrainer",
        "RLS_STATUS_SINGULARITY",
        "rls_trainer_new",
        "rls_trainer_load",
        "rls_trainer_save",
        "rls_trainer_train",
        "rls_trainer_predict",
        "rls_trainer_progress",
        "rls_trainer_write_metrics",
        "rls_trainer_free",
        "rls_last_error_message",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
