//! C ABI for nocguard.
//!
//! Every fallible call returns an [`NgStatus`]; on failure a message is kept
//! per thread and read back with [`ng_last_error`]. Handles are opaque and
//! released with their `_free` function; passing NULL to a `_free` is a no-op.
//!
//! Frames cross the boundary as node-indexed `R x R` planes, where
//! `index = row * R + col`. Calls taking all directions expect four planes in
//! E, N, W, S order. Ports that do not exist hold 0.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nocguard::bench::detector_input;
use nocguard::cnn::{load_detector, load_segmentor, DetectorModel, SegmentorModel, Tensor};
use nocguard::config::{scenario_from_kv, KeyValues};
use nocguard::localize::{localize, LocalizationReport, LocalizeConfig, LocalizeError};
use nocguard::sim::Simulator;
use nocguard::telemetry::{build_frames, FeatureFrame, FeatureKind};
use nocguard::{Direction, Error, NodeId};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NgStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Model = 5,
    Shape = 6,
    /// Localization ran but could not confirm an attacker.
    Inconclusive = 7,
    Internal = 8,
}

/// Simulator with its own scenario configuration.
pub struct NgSimulator {
    sim: Simulator,
    windows: usize,
}

pub struct NgDetector {
    model: DetectorModel,
}

pub struct NgSegmentor {
    model: SegmentorModel,
}

pub struct NgReport {
    report: LocalizationReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(NgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => NgStatus::Io,
            Error::Parse(_) => NgStatus::Parse,
            Error::Model(_) => NgStatus::Model,
            Error::Shape(_) => NgStatus::Shape,
            Error::Localize(LocalizeError::Shape(_)) => NgStatus::Shape,
            Error::Localize(_) => NgStatus::Inconclusive,
            _ => NgStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: NgStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Run `f`, record any failure or panic, and return the status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NgStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(NgStatus::NullArgument, format!("`{name}` is NULL")))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(NgStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(
    p: *const T,
    len: usize,
    want: usize,
    name: &str,
) -> Result<&'a [T], Failure> {
    non_null(p, name)?;
    if len != want {
        return Err(fail(
            NgStatus::Shape,
            format!("`{name}` has {len} entries, expected {want}"),
        ));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut_arg<'a, T>(
    p: *mut T,
    len: usize,
    want: usize,
    name: &str,
) -> Result<&'a mut [T], Failure> {
    non_null(p, name)?;
    if len != want {
        return Err(fail(
            NgStatus::Shape,
            format!("`{name}` has {len} entries, expected {want}"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ng_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ng_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build a simulator from scenario text in `key = value` form and run its
/// warmup.
///
/// # Safety
/// `config` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ng_simulator_new(
    config: *const c_char,
    out: *mut *mut NgSimulator,
) -> NgStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let text = str_arg(config, "config")?;
        let cfg = scenario_from_kv(&KeyValues::parse(text)?)?;
        let mut sim = Simulator::new(&cfg)?;
        sim.warm_up();
        *out = Box::into_raw(Box::new(NgSimulator { sim, windows: 0 }));
        Ok(())
    })
}

/// # Safety
/// `sim` must be NULL or a handle from [`ng_simulator_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ng_simulator_free(sim: *mut NgSimulator) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Mesh radix of the simulator, 0 for NULL.
///
/// # Safety
/// `sim` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ng_simulator_radix(sim: *const NgSimulator) -> usize {
    sim.as_ref().map_or(0, |s| s.sim.config().mesh.radix)
}

/// Current cycle, 0 for NULL.
///
/// # Safety
/// `sim` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ng_simulator_cycle(sim: *const NgSimulator) -> u64 {
    sim.as_ref().map_or(0, |s| s.sim.cycle())
}

fn write_planes(frames: &[FeatureFrame; 4], out: &mut [f64], r: usize) {
    for (d, f) in frames.iter().enumerate() {
        out[d * r * r..(d + 1) * r * r].copy_from_slice(&f.padded());
    }
}

/// Run one sampling window and write its padded VCO and raw BOC planes, each
/// `4 * R * R` long. `attack` (may be NULL) receives 1 if malicious buffer
/// operations occurred in the window.
///
/// # Safety
/// `vco` and `boc` must point to `len` writable doubles each.
#[no_mangle]
pub unsafe extern "C" fn ng_simulator_window(
    sim: *mut NgSimulator,
    vco: *mut f64,
    boc: *mut f64,
    len: usize,
    attack: *mut u8,
) -> NgStatus {
    guard(|| {
        non_null(sim, "sim")?;
        let s = &mut *sim;
        let r = s.sim.config().mesh.radix;
        let vco = slice_mut_arg(vco, len, 4 * r * r, "vco")?;
        let boc = slice_mut_arg(boc, len, 4 * r * r, "boc")?;
        let snap = s.sim.advance_window();
        write_planes(&build_frames(&snap, FeatureKind::Vco)?, vco, r);
        write_planes(&build_frames(&snap, FeatureKind::Boc)?, boc, r);
        if !attack.is_null() {
            *attack = u8::from(snap.is_attack());
        }
        s.windows += 1;
        Ok(())
    })
}

/// Halt new malicious packets from `node`. Writes 1 to `changed` (may be
/// NULL) if the node was an active attacker.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ng_simulator_quarantine(
    sim: *mut NgSimulator,
    node: usize,
    changed: *mut u8,
) -> NgStatus {
    guard(|| {
        non_null(sim, "sim")?;
        let s = &mut *sim;
        let r = s.sim.config().mesh.radix;
        if node >= r * r {
            return Err(fail(
                NgStatus::InvalidArgument,
                format!("node {node} outside a {r}x{r} mesh"),
            ));
        }
        let c = s.sim.quarantine(NodeId(node));
        if !changed.is_null() {
            *changed = u8::from(c);
        }
        Ok(())
    })
}

/// Load a detector saved for mesh radix `radix`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ng_detector_load(
    path: *const c_char,
    radix: usize,
    out: *mut *mut NgDetector,
) -> NgStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let model = load_detector(Path::new(str_arg(path, "path")?), radix)?;
        *out = Box::into_raw(Box::new(NgDetector { model }));
        Ok(())
    })
}

/// # Safety
/// `det` must be NULL or a handle from [`ng_detector_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ng_detector_free(det: *mut NgDetector) {
    if !det.is_null() {
        drop(Box::from_raw(det));
    }
}

/// Attack probability for four padded VCO planes (`4 * R * R` doubles).
///
/// # Safety
/// `vco` must point to `len` readable doubles and `prob` be writable.
#[no_mangle]
pub unsafe extern "C" fn ng_detector_predict(
    det: *const NgDetector,
    vco: *const f64,
    len: usize,
    prob: *mut f64,
) -> NgStatus {
    guard(|| {
        non_null(det, "det")?;
        non_null(prob, "prob")?;
        let m = &(*det).model;
        let r = m.radix;
        let planes = slice_arg(vco, len, 4 * r * r, "vco")?;
        let frames: Vec<FeatureFrame> = Direction::ALL
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                FeatureFrame::from_padded(
                    d,
                    FeatureKind::Vco,
                    r,
                    0,
                    &planes[i * r * r..(i + 1) * r * r],
                )
            })
            .collect::<nocguard::Result<_>>()?;
        let frames: [FeatureFrame; 4] = frames
            .try_into()
            .map_err(|_| fail(NgStatus::Internal, "frame count"))?;
        *prob = m.forward(&detector_input(&frames)?)?;
        Ok(())
    })
}

/// Load a segmentor saved for mesh radix `radix`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ng_segmentor_load(
    path: *const c_char,
    radix: usize,
    out: *mut *mut NgSegmentor,
) -> NgStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let model = load_segmentor(Path::new(str_arg(path, "path")?), radix)?;
        *out = Box::into_raw(Box::new(NgSegmentor { model }));
        Ok(())
    })
}

/// # Safety
/// `seg` must be NULL or a handle from [`ng_segmentor_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ng_segmentor_free(seg: *mut NgSegmentor) {
    if !seg.is_null() {
        drop(Box::from_raw(seg));
    }
}

/// Per-node attack-route probabilities for one normalized, padded BOC plane.
/// Both buffers hold `R * R` doubles.
///
/// # Safety
/// `boc` must point to `len` readable doubles and `probs` to `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn ng_segmentor_predict(
    seg: *const NgSegmentor,
    boc: *const f64,
    probs: *mut f64,
    len: usize,
) -> NgStatus {
    guard(|| {
        non_null(seg, "seg")?;
        let m = &(*seg).model;
        let r = m.radix;
        let input = slice_arg(boc, len, r * r, "boc")?;
        let out = slice_mut_arg(probs, len, r * r, "probs")?;
        let y = m.forward(&Tensor::from_vec(1, r, r, input.to_vec())?)?;
        out.copy_from_slice(y.plane(0));
        Ok(())
    })
}

/// Localize from per-direction probability maps (`4 * R * R` doubles, E, N,
/// W, S). Only directions whose `present` flag is nonzero are used.
/// `Inconclusive` means no attacker survived route validation.
///
/// # Safety
/// `maps` must point to `len` readable doubles, `present` to 4 bytes and
/// `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn ng_localize(
    radix: usize,
    maps: *const f64,
    len: usize,
    present: *const u8,
    threshold: f64,
    vce: u8,
    out: *mut *mut NgReport,
) -> NgStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        if radix < 2 {
            return Err(fail(
                NgStatus::InvalidArgument,
                format!("radix {radix} too small"),
            ));
        }
        let planes = slice_arg(maps, len, 4 * radix * radix, "maps")?;
        let present = slice_arg(present, 4, 4, "present")?;
        let n = radix * radix;
        let maps: [Option<Vec<f64>>; 4] =
            std::array::from_fn(|d| (present[d] != 0).then(|| planes[d * n..(d + 1) * n].to_vec()));
        let cfg = LocalizeConfig {
            threshold,
            vce: vce != 0,
        };
        let report = localize(radix, 0, &maps, &cfg).map_err(Error::from)?;
        *out = Box::into_raw(Box::new(NgReport { report }));
        Ok(())
    })
}

/// # Safety
/// `report` must be NULL or a handle from [`ng_localize`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ng_report_free(report: *mut NgReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Target victim node id, or `SIZE_MAX` for NULL.
///
/// # Safety
/// `report` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ng_report_target_victim(report: *const NgReport) -> usize {
    report
        .as_ref()
        .map_or(usize::MAX, |r| r.report.target_victim.0)
}

unsafe fn copy_ids(
    ids: impl ExactSizeIterator<Item = NodeId>,
    out: *mut usize,
    cap: usize,
) -> usize {
    let n = ids.len();
    if !out.is_null() {
        for (i, id) in ids.take(cap).enumerate() {
            *out.add(i) = id.0;
        }
    }
    n
}

/// Copy up to `cap` confirmed attacker ids into `out` (may be NULL) and
/// return how many there are.
///
/// # Safety
/// `report` must be NULL or a live handle; `out` must hold `cap` entries.
#[no_mangle]
pub unsafe extern "C" fn ng_report_attackers(
    report: *const NgReport,
    out: *mut usize,
    cap: usize,
) -> usize {
    match report.as_ref() {
        Some(r) => copy_ids(r.report.attackers.iter().copied(), out, cap),
        None => 0,
    }
}

/// Copy up to `cap` victim ids, ascending, into `out` (may be NULL) and
/// return how many there are.
///
/// # Safety
/// `report` must be NULL or a live handle; `out` must hold `cap` entries.
#[no_mangle]
pub unsafe extern "C" fn ng_report_victims(
    report: *const NgReport,
    out: *mut usize,
    cap: usize,
) -> usize {
    match report.as_ref() {
        Some(r) => copy_ids(r.report.victims.iter().copied(), out, cap),
        None => 0,
    }
}
