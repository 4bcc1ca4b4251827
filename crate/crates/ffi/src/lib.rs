//! C interface to the estimator, the trained reconstruction network and the
//! point-cloud metrics.
//!
//! Every function returns an [`IsacStatus`]. On failure the message is kept
//! per thread and can be read with [`isac_last_error_message`]. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use isac_recon::channel::ComplexCir;
use isac_recon::config::RunConfig;
use isac_recon::geometry::Point3;
use isac_recon::model::{load_mscr, MscrNet, NormStats};
use isac_recon::numkit::ParamStore;
use isac_recon::sage::{filter_outliers, pad_snapshot, ChannelSnapshot, PathComponent, Sage};
use isac_recon::{metrics, Error, NumError};
use num_complex::Complex64;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IsacStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad configuration, file contents or argument values.
    InvalidInput = 2,
    /// Inputs that violate a documented size or content rule.
    Contract = 3,
    Io = 4,
    /// The output buffer is smaller than the required length, which is
    /// still written to the length argument.
    BufferTooSmall = 5,
    Internal = 6,
}

/// One multipath component.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IsacPath {
    pub delay_s: f64,
    pub azimuth_rad: f64,
    pub elevation_rad: f64,
    pub power_db: f64,
}

/// SAGE estimator bound to one waveform and array.
pub struct IsacEstimator {
    config: RunConfig,
    sage: Sage,
}

/// Trained three-stage network.
pub struct IsacModel {
    config: RunConfig,
    net: MscrNet,
    store: ParamStore,
    norm: NormStats,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: IsacStatus, msg: impl Into<String>) -> IsacStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn from_error(e: Error) -> IsacStatus {
    let status = match &e {
        Error::Config(_) | Error::Format(_) | Error::Json(_) | Error::Num(NumError::Config(_)) | Error::Num(NumError::Format(_)) => {
            IsacStatus::InvalidInput
        }
        Error::Contract(_) | Error::Num(NumError::Contract(_)) | Error::Num(NumError::Dimension { .. }) => IsacStatus::Contract,
        Error::Io(_) | Error::Num(NumError::Io(_)) => IsacStatus::Io,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), IsacStatus>) -> IsacStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IsacStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(IsacStatus::Internal, "internal panic"),
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), IsacStatus> {
    if p.is_null() {
        Err(fail(IsacStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, IsacStatus> {
    non_null(p, what)?;
    CStr::from_ptr(p).to_str().map_err(|_| fail(IsacStatus::InvalidInput, format!("{what} is not UTF-8")))
}

/// Defaults when `json` is null, otherwise the parsed configuration.
unsafe fn config_arg(json: *const c_char) -> Result<RunConfig, IsacStatus> {
    let cfg = if json.is_null() {
        RunConfig::default()
    } else {
        serde_json::from_str(str_arg(json, "config")?).map_err(|e| fail(IsacStatus::InvalidInput, format!("config: {e}")))?
    };
    cfg.validate().map_err(from_error)?;
    Ok(cfg)
}

unsafe fn points_arg(p: *const f64, n: usize, what: &str) -> Result<Vec<Point3>, IsacStatus> {
    non_null(p, what)?;
    let flat = std::slice::from_raw_parts(p, 3 * n);
    Ok(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn isac_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn isac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Create an estimator from a JSON run configuration (null for defaults).
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn isac_estimator_new(config_json: *const c_char, out: *mut *mut IsacEstimator) -> IsacStatus {
    guard(|| {
        non_null(out, "out")?;
        let config = config_arg(config_json)?;
        let sage = Sage::new(&config.channel.waveform, &config.channel.geometry(), &config.sage).map_err(from_error)?;
        *out = Box::into_raw(Box::new(IsacEstimator { config, sage }));
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle from [`isac_estimator_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn isac_estimator_free(h: *mut IsacEstimator) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Estimate paths from a tone-major response given as interleaved
/// `(re, im)` pairs, `2 * n_tones * n_elements` values. Paths are written
/// strongest first; `out_len` receives their number.
///
/// # Safety
/// `cir` must hold the stated number of values and `out` room for
/// `capacity` paths.
#[no_mangle]
pub unsafe extern "C" fn isac_estimator_extract(
    h: *const IsacEstimator,
    cir: *const f64,
    n_tones: usize,
    n_elements: usize,
    out: *mut IsacPath,
    capacity: usize,
    out_len: *mut usize,
) -> IsacStatus {
    guard(|| {
        non_null(h, "estimator")?;
        non_null(cir, "cir")?;
        non_null(out_len, "out_len")?;
        let est = &*h;
        let wf = &est.config.channel.waveform;
        let elements = est.config.channel.rows * est.config.channel.cols;
        if n_tones != wf.n_tones || n_elements != elements {
            return Err(fail(
                IsacStatus::Contract,
                format!("response is {n_tones}x{n_elements}, the estimator expects {}x{elements}", wf.n_tones),
            ));
        }
        let raw = std::slice::from_raw_parts(cir, 2 * n_tones * n_elements);
        let data = raw.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        let snap = est.sage.extract(&ComplexCir { n_tones, n_elements, data }).map_err(from_error)?;
        *out_len = snap.len();
        if snap.len() > capacity {
            return Err(fail(IsacStatus::BufferTooSmall, format!("{} paths, room for {capacity}", snap.len())));
        }
        non_null(out, "out")?;
        for (i, c) in snap.components.iter().enumerate() {
            *out.add(i) = IsacPath { delay_s: c.delay, azimuth_rad: c.azimuth, elevation_rad: c.elevation, power_db: c.power_db };
        }
        Ok(())
    })
}

/// Load the stage-3 checkpoint `<models_dir>/mscr_stage3` trained under the
/// given configuration (null for defaults).
///
/// # Safety
/// String arguments must be null-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn isac_model_load(config_json: *const c_char, models_dir: *const c_char, out: *mut *mut IsacModel) -> IsacStatus {
    guard(|| {
        non_null(out, "out")?;
        let config = config_arg(config_json)?;
        let dir = str_arg(models_dir, "models_dir")?;
        let (net, store, meta) =
            load_mscr(&Path::new(dir).join("mscr_stage3"), &config.model, &config.hash()).map_err(from_error)?;
        *out = Box::into_raw(Box::new(IsacModel { config, net, store, norm: meta.norm }));
        Ok(())
    })
}

/// # Safety
/// `h` must be null or a handle from [`isac_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn isac_model_free(h: *mut IsacModel) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Points produced per reconstruction, or 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn isac_model_n_points(h: *const IsacModel) -> usize {
    if h.is_null() {
        0
    } else {
        (*h).config.model.n_points
    }
}

/// Reconstruct a point cloud from `n` estimated paths. Paths are filtered
/// and padded as during dataset generation. Writes `3 * n_points` values to
/// `out_xyz` and the predicted scene class (0 single, 1 mixed) to
/// `out_label` when it is not null.
///
/// # Safety
/// `paths` must hold `n` entries and `out_xyz` room for `capacity` points.
#[no_mangle]
pub unsafe extern "C" fn isac_model_reconstruct(
    h: *const IsacModel,
    paths: *const IsacPath,
    n: usize,
    out_xyz: *mut f64,
    capacity: usize,
    out_label: *mut u8,
) -> IsacStatus {
    guard(|| {
        non_null(h, "model")?;
        non_null(paths, "paths")?;
        non_null(out_xyz, "out_xyz")?;
        let m = &*h;
        let cfg = &m.config;
        if capacity < cfg.model.n_points {
            return Err(fail(IsacStatus::BufferTooSmall, format!("{} points, room for {capacity}", cfg.model.n_points)));
        }
        let snap = ChannelSnapshot {
            components: std::slice::from_raw_parts(paths, n)
                .iter()
                .map(|p| PathComponent { delay: p.delay_s, azimuth: p.azimuth_rad, elevation: p.elevation_rad, power_db: p.power_db })
                .collect(),
        };
        let snap = filter_outliers(&snap, &cfg.sage);
        if snap.is_empty() {
            return Err(fail(IsacStatus::Contract, "no usable path after filtering"));
        }
        let snap = pad_snapshot(&snap, cfg.model.n_paths, cfg.sage.pad_floor_db);
        let input = m.norm.encode(&snap, cfg.model.n_paths).map_err(from_error)?;
        let pred = m.net.predict(&m.store, &m.norm, &input).map_err(from_error)?;
        for (i, p) in pred.cloud.iter().enumerate() {
            std::ptr::copy_nonoverlapping(p.as_ptr(), out_xyz.add(3 * i), 3);
        }
        if !out_label.is_null() {
            *out_label = pred.label.class() as u8;
        }
        Ok(())
    })
}

/// Chamfer distance between two `[n, 3]` point arrays.
///
/// # Safety
/// `a` and `b` must hold `3 * na` and `3 * nb` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn isac_chamfer(a: *const f64, na: usize, b: *const f64, nb: usize, out: *mut f64) -> IsacStatus {
    guard(|| {
        non_null(out, "out")?;
        let (pa, pb) = (points_arg(a, na, "a")?, points_arg(b, nb, "b")?);
        *out = metrics::chamfer(&pa, &pb).map_err(from_error)?;
        Ok(())
    })
}

/// F-score, precision and recall of `pred` against `gt` at `threshold`
/// metres. `out` receives the three values in that order.
///
/// # Safety
/// `pred` and `gt` must hold `3 * n_pred` and `3 * n_gt` values; `out` must
/// have room for 3 values.
#[no_mangle]
pub unsafe extern "C" fn isac_fscore(
    pred: *const f64,
    n_pred: usize,
    gt: *const f64,
    n_gt: usize,
    threshold: f64,
    out: *mut f64,
) -> IsacStatus {
    guard(|| {
        non_null(out, "out")?;
        let (p, g) = (points_arg(pred, n_pred, "pred")?, points_arg(gt, n_gt, "gt")?);
        let (f, precision, recall) = metrics::fscore(&p, &g, threshold).map_err(from_error)?;
        *out = f;
        *out.add(1) = precision;
        *out.add(2) = recall;
        Ok(())
    })
}
