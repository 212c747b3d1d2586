//! C ABI over the training driver.
//!
//! Every function returns an [`RlsStatus`]; on failure a description is
//! available from [`rls_last_error_message`] on the same thread. Handles are
//! opaque and must be released with [`rls_trainer_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use rls_prune::checkpoint;
use rls_prune::data::{load_dataset, Dataset};
use rls_prune::metrics::emit_metrics;
use rls_prune::tensor::{Float, Tensor};
use rls_prune::train::limit_datasets;
use rls_prune::{Error, TrainConfig, Trainer};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Format = 4,
    Singularity = 5,
    Io = 6,
    Dimension = 7,
    State = 8,
    Panic = 9,
}

/// Opaque training run: configuration, network, optimizer state, metrics.
pub struct RlsTrainer {
    trainer: Trainer,
    data: Option<(Dataset, Dataset)>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RlsStatus {
    match e {
        Error::Config(_) => RlsStatus::Config,
        Error::Format { .. } => RlsStatus::Format,
        Error::Singularity { .. } => RlsStatus::Singularity,
        Error::Io { .. } => RlsStatus::Io,
        Error::Dimension(_) => RlsStatus::Dimension,
        Error::State(_) | Error::Contract(_) => RlsStatus::State,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (RlsStatus, String)>) -> RlsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RlsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RlsStatus::Panic
        }
    }
}

fn lib<T>(r: rls_prune::Result<T>) -> Result<T, (RlsStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (RlsStatus, String) {
    (RlsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (RlsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (RlsStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn trainer_ref<'a>(h: *const RlsTrainer) -> Result<&'a RlsTrainer, (RlsStatus, String)> {
    h.as_ref().ok_or_else(|| null("trainer"))
}

unsafe fn trainer_mut<'a>(h: *mut RlsTrainer) -> Result<&'a mut RlsTrainer, (RlsStatus, String)> {
    h.as_mut().ok_or_else(|| null("trainer"))
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rls_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Creates a fresh run from `key=value` configuration text (may be empty
/// for all defaults).
///
/// # Safety
/// `config_text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rls_trainer_new(config_text: *const c_char, out: *mut *mut RlsTrainer) -> RlsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(config_text, "config_text")?;
        let config = lib(TrainConfig::from_text(text))?;
        let trainer = lib(Trainer::new(config))?;
        *out = Box::into_raw(Box::new(RlsTrainer {
            trainer,
            data: None,
        }));
        Ok(())
    })
}

/// Restores a run from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rls_trainer_load(path: *const c_char, out: *mut *mut RlsTrainer) -> RlsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = PathBuf::from(str_arg(path, "path")?);
        let trainer = lib(checkpoint::load(&path))?;
        *out = Box::into_raw(Box::new(RlsTrainer {
            trainer,
            data: None,
        }));
        Ok(())
    })
}

/// # Safety
/// `trainer` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rls_trainer_save(trainer: *const RlsTrainer, path: *const c_char) -> RlsStatus {
    guard(|| {
        let t = trainer_ref(trainer)?;
        let path = PathBuf::from(str_arg(path, "path")?);
        lib(checkpoint::save(&t.trainer, &path))
    })
}

/// Trains up to `epochs` more epochs (never past the configured total),
/// loading the configured dataset on first use.
///
/// # Safety
/// `trainer` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn rls_trainer_train(trainer: *mut RlsTrainer, epochs: u32) -> RlsStatus {
    guard(|| {
        let t = trainer_mut(trainer)?;
        if t.data.is_none() {
            let c = &t.trainer.config;
            let (train, test) = lib(load_dataset(c.dataset, &c.data_dir))?;
            t.data = Some(limit_datasets(c, train, test));
        }
        let (train, test) = t.data.as_ref().expect("loaded above");
        let target = t.trainer.epochs_done + epochs as usize;
        lib(t.trainer.run_until(target, train, test, |_| Ok(())))
    })
}

/// Network outputs for `n_samples` inputs of `sample_len` values each, in
/// the original (unmasked) feature space. `out` receives
/// `n_samples × num_classes` values.
///
/// # Safety
/// `inputs` must hold `n_samples * sample_len` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rls_trainer_predict(
    trainer: *const RlsTrainer,
    inputs: *const f64,
    n_samples: usize,
    sample_len: usize,
    out: *mut f64,
    out_len: usize,
) -> RlsStatus {
    guard(|| {
        let t = trainer_ref(trainer)?;
        if inputs.is_null() || out.is_null() {
            return Err(null("buffer"));
        }
        let net = &t.trainer.network;
        let original = t.trainer.config.arch.spec().input;
        if n_samples == 0 || sample_len != original.len() {
            return Err((
                RlsStatus::InvalidArgument,
                format!("expected samples of {} values", original.len()),
            ));
        }
        let classes = net.spec.num_classes();
        if out_len < n_samples * classes {
            return Err((
                RlsStatus::InvalidArgument,
                format!("output buffer needs {} values", n_samples * classes),
            ));
        }
        let data: Vec<Float> = std::slice::from_raw_parts(inputs, n_samples * sample_len)
            .iter()
            .map(|&v| v as Float)
            .collect();
        let mut shape = vec![n_samples];
        match original {
            rls_prune::network::SampleShape::Flat(n) => shape.push(n),
            rls_prune::network::SampleShape::Spatial {
                channels,
                height,
                width,
            } => shape.extend([channels, height, width]),
        }
        let batch = lib(Tensor::new(shape, data))?;
        let input = lib(net.prepare_input(&batch))?;
        let y = lib(net.predict(&input))?;
        let dst = std::slice::from_raw_parts_mut(out, y.len());
        for (d, &v) in dst.iter_mut().zip(y.data()) {
            *d = v as f64;
        }
        Ok(())
    })
}

/// Completed epochs, total weight count, and the retained node / weight
/// percentages of the latest epoch (100 before the first epoch).
///
/// # Safety
/// `trainer` must come from this library; every out pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn rls_trainer_progress(
    trainer: *const RlsTrainer,
    epochs_done: *mut usize,
    weight_count: *mut usize,
    retained_nodes_pct: *mut f64,
    retained_weights_pct: *mut f64,
) -> RlsStatus {
    guard(|| {
        let t = &trainer_ref(trainer)?.trainer;
        let (n, w) = t
            .metrics
            .epochs
            .last()
            .map_or((100.0, 100.0), |e| (e.total_nodes_pct, e.total_weights_pct));
        if let Some(p) = epochs_done.as_mut() {
            *p = t.epochs_done;
        }
        if let Some(p) = weight_count.as_mut() {
            *p = t.network.weight_count();
        }
        if let Some(p) = retained_nodes_pct.as_mut() {
            *p = n;
        }
        if let Some(p) = retained_weights_pct.as_mut() {
            *p = w;
        }
        Ok(())
    })
}

/// Writes the metrics CSV and its summary / prune-event companions.
///
/// # Safety
/// `trainer` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rls_trainer_write_metrics(trainer: *const RlsTrainer, path: *const c_char) -> RlsStatus {
    guard(|| {
        let t = &trainer_ref(trainer)?.trainer;
        let path = PathBuf::from(str_arg(path, "path")?);
        lib(emit_metrics(&t.metrics, &t.report, &t.original_counts, &path))
    })
}

/// # Safety
/// `trainer` must come from this library and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn rls_trainer_free(trainer: *mut RlsTrainer) {
    if !trainer.is_null() {
        drop(Box::from_raw(trainer));
    }
}
