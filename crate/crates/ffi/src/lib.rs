//! C ABI over `sar-core`.
//!
//! Every function returns a [`SarStatus`]; on failure a message is available
//! from [`sar_last_error`] on the same thread. Objects are opaque handles
//! released with their `_free` function. Poses are passed as flat `f64`
//! arrays of `frames × joints × 3` axis-angle values.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sar_core::depgraph::{
    build_binary_search, build_original_ar, build_three_stage, derive_fdam, Fdam, Schedule,
};
use sar_core::inference::{interpolate_slerp, run_schedule, run_without_smoothing};
use sar_core::metrics;
use sar_core::model::{ModelConfig, SarModel};
use sar_core::motion::Pose;
use sar_core::SarError;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SarStatus {
    Ok = 0,
    InvalidInput = 1,
    EmptyGraph = 2,
    Cycle = 3,
    InvalidMask = 4,
    UndefinedMetric = 5,
    State = 6,
    Parse = 7,
    Io = 8,
    Internal = 9,
    NullPointer = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

/// Graph families accepted by [`sar_schedule_build`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SarGraphKind {
    OriginalAr = 0,
    BinarySearch = 1,
    ThreeStage = 2,
}

/// A generation schedule together with its attention masks.
pub struct SarSchedule {
    schedule: Schedule,
    fdam: Fdam,
}

/// A trained or freshly initialized model.
pub struct SarModelHandle {
    model: SarModel,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &SarError) -> SarStatus {
    match e {
        SarError::InvalidInput(_) => SarStatus::InvalidInput,
        SarError::EmptyGraph => SarStatus::EmptyGraph,
        SarError::Cycle(_) => SarStatus::Cycle,
        SarError::InvalidMask(_) => SarStatus::InvalidMask,
        SarError::Internal(_) => SarStatus::Internal,
        SarError::UndefinedMetric(_) => SarStatus::UndefinedMetric,
        SarError::State(_) | SarError::Diverged { .. } => SarStatus::State,
        SarError::Parse { .. } => SarStatus::Parse,
        SarError::Io { .. } => SarStatus::Io,
    }
}

enum Fail {
    Core(SarError),
    Null(&'static str),
    Small { needed: usize },
}

impl From<SarError> for Fail {
    fn from(e: SarError) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SarStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            SarStatus::Ok
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SarStatus::NullPointer
        }
        Ok(Err(Fail::Small { needed })) => {
            set_error(format!("output buffer too small: {needed} elements needed"));
            SarStatus::BufferTooSmall
        }
        Err(_) => {
            set_error("internal panic".into());
            SarStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Core(SarError::InvalidInput(format!("{what} is not UTF-8"))))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn put<T>(out: *mut T, v: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    out.write(v);
    Ok(())
}

fn poses(flat: &[f64], joints: usize) -> Vec<Pose> {
    flat.chunks(joints * 3).map(Pose::from_flat).collect()
}

fn check_dims(frames: usize, joints: usize) -> Result<usize, Fail> {
    if joints == 0 {
        return Err(SarError::InvalidInput("joints must be positive".into()).into());
    }
    frames
        .checked_mul(joints)
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| SarError::InvalidInput("pose array size overflows".into()).into())
}

fn write_out(values: &[f64], out: &mut [f64]) -> Result<(), Fail> {
    if out.len() < values.len() {
        return Err(Fail::Small { needed: values.len() });
    }
    out[..values.len()].copy_from_slice(values);
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `cap`). Returns the full message length in bytes
/// excluding the terminator.
///
/// # Safety
/// `buf` must be valid for `cap` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn sar_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sar_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Builds a graph with `frames` in-between frames and orders it.
/// `keyframes` is only read for [`SarGraphKind::ThreeStage`].
///
/// # Safety
/// `keyframes` must be valid for `n_keyframes` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sar_schedule_build(
    kind: SarGraphKind,
    frames: usize,
    keyframes: *const usize,
    n_keyframes: usize,
    out: *mut *mut SarSchedule,
) -> SarStatus {
    guard(|| {
        let graph = match kind {
            SarGraphKind::OriginalAr => build_original_ar(frames)?,
            SarGraphKind::BinarySearch => build_binary_search(frames)?,
            SarGraphKind::ThreeStage => build_three_stage(frames, slice(keyframes, n_keyframes, "keyframes")?)?,
        };
        let schedule = sar_core::depgraph::topological_schedule(&graph)?;
        let fdam = derive_fdam(&schedule, schedule.n_positions)?;
        put(out, Box::into_raw(Box::new(SarSchedule { schedule, fdam })), "out")
    })
}

/// Parses and validates a schedule JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sar_schedule_from_json(json: *const c_char, out: *mut *mut SarSchedule) -> SarStatus {
    guard(|| {
        let schedule = Schedule::from_json(string(json, "json")?)?;
        let fdam = derive_fdam(&schedule, schedule.n_positions)?;
        put(out, Box::into_raw(Box::new(SarSchedule { schedule, fdam })), "out")
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sar_schedule_free(s: *mut SarSchedule) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Number of positions N = T + 2, or 0 for a null handle.
///
/// # Safety
/// `s` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn sar_schedule_positions(s: *const SarSchedule) -> usize {
    s.as_ref().map_or(0, |s| s.schedule.n_positions)
}

/// Writes the generation order (T entries) into `out`.
///
/// # Safety
/// `s` must be valid; `out` must be valid for `cap` elements.
#[no_mangle]
pub unsafe extern "C" fn sar_schedule_order(s: *const SarSchedule, out: *mut usize, cap: usize) -> SarStatus {
    guard(|| {
        let s = handle(s, "schedule")?;
        let order = &s.schedule.order;
        if cap < order.len() {
            return Err(Fail::Small { needed: order.len() });
        }
        slice_mut(out, cap, "out")?[..order.len()].copy_from_slice(order);
        Ok(())
    })
}

/// Writes the staged and smoothing masks as row-major `N × N` bytes (1 =
/// attend). Either output may be null.
///
/// # Safety
/// `s` must be valid; non-null outputs must be valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn sar_schedule_masks(
    s: *const SarSchedule,
    staged: *mut u8,
    smoothing: *mut u8,
    cap: usize,
) -> SarStatus {
    guard(|| {
        let s = handle(s, "schedule")?;
        let n = s.fdam.n();
        if cap < n * n {
            return Err(Fail::Small { needed: n * n });
        }
        for (dst, m) in [(staged, &s.fdam.staged), (smoothing, &s.fdam.smoothing)] {
            if !dst.is_null() {
                let out = slice_mut(dst, n * n, "mask")?;
                for (o, &b) in out.iter_mut().zip(m.as_slice()) {
                    *o = b as u8;
                }
            }
        }
        Ok(())
    })
}

/// Serializes the schedule to JSON. `needed` receives the byte length
/// excluding the terminator; when `cap` is too small nothing is written and
/// `BufferTooSmall` is returned.
///
/// # Safety
/// `s` and `needed` must be valid; `buf` must be valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn sar_schedule_to_json(
    s: *const SarSchedule,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> SarStatus {
    guard(|| {
        let json = handle(s, "schedule")?.schedule.to_json();
        put(needed, json.len(), "needed")?;
        if cap < json.len() + 1 {
            return Err(Fail::Small { needed: json.len() + 1 });
        }
        let out = slice_mut(buf as *mut u8, cap, "buf")?;
        out[..json.len()].copy_from_slice(json.as_bytes());
        out[json.len()] = 0;
        Ok(())
    })
}

/// SLERP between two poses of `joints` joints, writing `frames` in-between
/// poses to `out`.
///
/// # Safety
/// `start`/`end` must hold `joints × 3` values; `out` must be valid for `cap`.
#[no_mangle]
pub unsafe extern "C" fn sar_slerp(
    start: *const f64,
    end: *const f64,
    joints: usize,
    frames: usize,
    out: *mut f64,
    cap: usize,
) -> SarStatus {
    guard(|| {
        let w = check_dims(1, joints)?;
        let a = Pose::from_flat(slice(start, w, "start")?);
        let b = Pose::from_flat(slice(end, w, "end")?);
        let flat: Vec<f64> = interpolate_slerp(&a, &b, frames)?.iter().flat_map(Pose::flat).collect();
        write_out(&flat, slice_mut(out, cap, "out")?)
    })
}

/// Metric selector for [`sar_metric`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SarMetric {
    Mpjae = 0,
    Npss = 1,
    NeighborGap = 2,
}

/// Compares two motions of `frames × joints × 3` values.
///
/// # Safety
/// `generated` and `truth` must hold `frames × joints × 3` values; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sar_metric(
    metric: SarMetric,
    generated: *const f64,
    truth: *const f64,
    frames: usize,
    joints: usize,
    out: *mut f64,
) -> SarStatus {
    guard(|| {
        let len = check_dims(frames, joints)?;
        let g = poses(slice(generated, len, "generated")?, joints);
        let t = poses(slice(truth, len, "truth")?, joints);
        let v = match metric {
            SarMetric::Mpjae => metrics::mpjae(&g, &t)?,
            SarMetric::Npss => metrics::npss(&g, &t)?,
            SarMetric::NeighborGap => metrics::neighbor_gap(&g, &t)?,
        };
        put(out, v, "out")
    })
}

/// Neighbor L2 distance of one motion.
///
/// # Safety
/// `motion` must hold `frames × joints × 3` values; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sar_neighbor_l2(motion: *const f64, frames: usize, joints: usize, out: *mut f64) -> SarStatus {
    guard(|| {
        let len = check_dims(frames, joints)?;
        let m = poses(slice(motion, len, "motion")?, joints);
        put(out, metrics::neighbor_l2(&m)?, "out")
    })
}

/// Creates a randomly initialized model from a configuration JSON document.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sar_model_new(config_json: *const c_char, seed: u64, out: *mut *mut SarModelHandle) -> SarStatus {
    guard(|| {
        let cfg = ModelConfig::from_json(string(config_json, "config_json")?)?;
        let model = SarModel::new(cfg, seed)?;
        put(out, Box::into_raw(Box::new(SarModelHandle { model })), "out")
    })
}

/// Loads a checkpoint (and its `.json` configuration alongside).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sar_model_load(path: *const c_char, out: *mut *mut SarModelHandle) -> SarStatus {
    guard(|| {
        let model = SarModel::load(Path::new(string(path, "path")?))?;
        put(out, Box::into_raw(Box::new(SarModelHandle { model })), "out")
    })
}

/// # Safety
/// `m` must be valid; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sar_model_save(m: *const SarModelHandle, path: *const c_char) -> SarStatus {
    guard(|| {
        let m = handle(m, "model")?;
        m.model.save(Path::new(string(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `m` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sar_model_free(m: *mut SarModelHandle) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Joint count of the model, or 0 for a null handle.
///
/// # Safety
/// `m` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn sar_model_joints(m: *const SarModelHandle) -> usize {
    m.as_ref().map_or(0, |m| m.model.config().joints)
}

/// Number of scalar parameters, or 0 for a null handle.
///
/// # Safety
/// `m` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn sar_model_num_params(m: *const SarModelHandle) -> usize {
    m.as_ref().map_or(0, |m| m.model.store().num_params())
}

/// Generates the T = N − 2 in-between poses from `start` to `end`, with or
/// without the final smoothing pass.
///
/// # Safety
/// `m`, `s` valid; `start`/`end` hold `joints × 3` values; `out` valid for
/// `cap` values.
#[no_mangle]
pub unsafe extern "C" fn sar_model_infer(
    m: *const SarModelHandle,
    s: *const SarSchedule,
    start: *const f64,
    end: *const f64,
    smoothing: bool,
    out: *mut f64,
    cap: usize,
) -> SarStatus {
    guard(|| {
        let m = &handle(m, "model")?.model;
        let s = handle(s, "schedule")?;
        let w = check_dims(1, m.config().joints)?;
        let a = Pose::from_flat(slice(start, w, "start")?);
        let b = Pose::from_flat(slice(end, w, "end")?);
        let frames = if smoothing {
            run_schedule(&a, &b, m, &s.schedule, &s.fdam)?
        } else {
            run_without_smoothing(&a, &b, m, &s.schedule, &s.fdam)?
        };
        let flat: Vec<f64> = frames.iter().flat_map(Pose::flat).collect();
        write_out(&flat, slice_mut(out, cap, "out")?)
    })
}
