//! C ABI over `offload-core`.
//!
//! Every function returns an [`OffloadStatus`]. On failure the message is
//! available from [`offload_last_error`] on the same thread until the next
//! call. Strings handed out by the library must be released with
//! [`offload_string_free`], programs with [`offload_program_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use offload_core::fpga::{fpga_pipeline, FpgaConfig};
use offload_core::ga::{run_ga, GaConfig, GaError};
use offload_core::loop_model::{parse_descriptor, parse_source, LoopProgram};
use offload_core::measurement::{integrate_energy, parse_power_csv, DeviceProfile, MeasurementCache, SimulatedEvaluator};
use offload_core::measurement::trace::combined_span;
use offload_core::pattern::Device;
use offload_core::score::{score, ScoreConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffloadStatus {
    Ok = 0,
    Config = 2,
    Evaluator = 3,
    Parse = 4,
    NullArgument = 10,
    InvalidUtf8 = 11,
    Panic = 12,
}

/// Opaque analyzed program.
pub struct OffloadProgram {
    inner: LoopProgram,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(OffloadStatus, String);

fn fail<T>(status: OffloadStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OffloadStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OffloadStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            OffloadStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(OffloadStatus::NullArgument, format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(OffloadStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn program<'a>(p: *const OffloadProgram) -> Result<&'a LoopProgram, Failure> {
    p.as_ref()
        .map(|p| &p.inner)
        .ok_or_else(|| Failure(OffloadStatus::NullArgument, "program is null".into()))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return fail(OffloadStatus::NullArgument, "output pointer is null");
    }
    out.write(value);
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).or_else(|_| fail(OffloadStatus::Panic, "output contains a nul byte"))?;
    write_out(out, c.into_raw())
}

fn ga_failure(e: GaError) -> Failure {
    match e {
        GaError::Evaluator { .. } => Failure(OffloadStatus::Evaluator, e.to_string()),
        _ => Failure(OffloadStatus::Config, e.to_string()),
    }
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next library call on the same thread.
#[no_mangle]
pub extern "C" fn offload_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Analyzes loop-language source text.
///
/// # Safety
/// `source` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn offload_program_parse_source(
    source: *const c_char,
    out: *mut *mut OffloadProgram,
) -> OffloadStatus {
    guard(|| {
        let src = text(source, "source")?;
        let inner = parse_source(src).or_else(|e| fail(OffloadStatus::Parse, e.to_string()))?;
        write_out(out, Box::into_raw(Box::new(OffloadProgram { inner })))
    })
}

/// Reads a JSON loop descriptor.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn offload_program_parse_json(
    json: *const c_char,
    out: *mut *mut OffloadProgram,
) -> OffloadStatus {
    guard(|| {
        let src = text(json, "json")?;
        let inner = parse_descriptor(src).or_else(|e| fail(OffloadStatus::Parse, e.to_string()))?;
        write_out(out, Box::into_raw(Box::new(OffloadProgram { inner })))
    })
}

/// Releases a program. Null is ignored.
///
/// # Safety
/// `program` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn offload_program_free(program: *mut OffloadProgram) {
    if !program.is_null() {
        drop(Box::from_raw(program));
    }
}

/// Number of loops in the program.
///
/// # Safety
/// `program_handle` must be a live program handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn offload_program_loop_count(
    program_handle: *const OffloadProgram,
    out: *mut usize,
) -> OffloadStatus {
    guard(|| write_out(out, program(program_handle)?.loops().len()))
}

/// Number of parallelizable loops, which is the gene length.
///
/// # Safety
/// `program_handle` must be a live program handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn offload_program_parallel_count(
    program_handle: *const OffloadProgram,
    out: *mut usize,
) -> OffloadStatus {
    guard(|| write_out(out, program(program_handle)?.parallelizable_ids().len()))
}

/// The program as a JSON loop descriptor.
///
/// # Safety
/// `program_handle` must be a live program handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn offload_program_to_json(
    program_handle: *const OffloadProgram,
    out: *mut *mut c_char,
) -> OffloadStatus {
    guard(|| {
        let p = program(program_handle)?;
        let json = serde_json::to_string(p).or_else(|e| fail(OffloadStatus::Panic, e.to_string()))?;
        write_string(out, json)
    })
}

/// Watt-seconds over the combined span of `count` power traces given as
/// CSV texts.
///
/// # Safety
/// `labels` and `csv_texts` must each point to `count` nul-terminated
/// strings; `out_ws` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn offload_energy_from_csv(
    labels: *const *const c_char,
    csv_texts: *const *const c_char,
    count: usize,
    out_ws: *mut f64,
) -> OffloadStatus {
    guard(|| {
        if count == 0 {
            return fail(OffloadStatus::Config, "no traces given");
        }
        if labels.is_null() || csv_texts.is_null() {
            return fail(OffloadStatus::NullArgument, "trace arrays are null");
        }
        let mut traces = Vec::with_capacity(count);
        for i in 0..count {
            let label = text(*labels.add(i), "label")?;
            let csv = text(*csv_texts.add(i), "csv text")?;
            traces.push(parse_power_csv(label, csv).or_else(|e| fail(OffloadStatus::Parse, format!("{label}: {e}")))?);
        }
        let (start, end) = combined_span(&traces)
            .ok_or_else(|| Failure(OffloadStatus::Parse, "traces contain no samples".into()))?;
        let ws = integrate_energy(&traces, start, end).or_else(|e| fail(OffloadStatus::Parse, e.to_string()))?;
        write_out(out_ws, ws)
    })
}

/// Default score `time^-1/2 * energy^-1/2`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn offload_fitness(time_s: f64, energy_ws: f64, out: *mut f64) -> OffloadStatus {
    guard(|| {
        let s = score(time_s, energy_ws, &ScoreConfig::default())
            .or_else(|e| fail(OffloadStatus::Config, e.to_string()))?;
        write_out(out, s)
    })
}

/// Searches the program against a simulated device profile (JSON). GA
/// devices take an optional GA config and return the search history; FPGA
/// takes an optional FPGA config and returns its report. Both as JSON.
///
/// # Safety
/// `program_handle` must be a live handle, `profile_json` a nul-terminated string,
/// `config_json` null or a nul-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn offload_search_json(
    program_handle: *const OffloadProgram,
    profile_json: *const c_char,
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> OffloadStatus {
    guard(|| {
        let p = program(program_handle)?;
        let profile: DeviceProfile = serde_json::from_str(text(profile_json, "profile")?)
            .or_else(|e| fail(OffloadStatus::Config, format!("profile: {e}")))?;
        let config = if config_json.is_null() { None } else { Some(text(config_json, "config")?) };
        let evaluator = SimulatedEvaluator::new(p, profile.clone())
            .or_else(|e| fail(OffloadStatus::Config, e.to_string()))?;
        let json = if profile.device == Device::Fpga {
            let cfg: FpgaConfig = match config {
                Some(c) => serde_json::from_str(c).or_else(|e| fail(OffloadStatus::Config, format!("config: {e}")))?,
                None => FpgaConfig::default(),
            };
            let (_, report) = fpga_pipeline(p, &evaluator, &cfg, &MeasurementCache::new()).map_err(ga_failure)?;
            report.to_json()
        } else {
            let cfg: GaConfig = match config {
                Some(c) => serde_json::from_str(c).or_else(|e| fail(OffloadStatus::Config, format!("config: {e}")))?,
                None => GaConfig::default(),
            };
            let (_, history) = run_ga(p, &evaluator, profile.device, &cfg).map_err(ga_failure)?;
            history.to_json()
        };
        write_string(out, json)
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn offload_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
