//! C ABI over the simulator.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_from_*`
//! functions and released by the matching `*_free`. Every fallible function
//! returns a [`PsflStatus`]; on failure the message is kept per thread and
//! can be read with [`psfl_last_error_message`]. Strings returned by the
//! library are freed with [`psfl_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use parallel_sfl::clustering::ClusterPlan;
use parallel_sfl::config::{ExperimentConfig, Strategy};
use parallel_sfl::engine::{write_metrics_csv, RoundMetrics, Simulation};
use parallel_sfl::error::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsflStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Invalid configuration, scenario or input file.
    Config = 3,
    /// Failure while simulating or writing outputs.
    Runtime = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
}

/// Experiment configuration.
pub struct PsflConfig(ExperimentConfig);

/// A simulation in progress together with the metrics of its finished rounds.
pub struct PsflSimulation {
    sim: Simulation,
    metrics: Vec<RoundMetrics>,
}

/// Cluster plan of one round.
pub struct PsflPlan(ClusterPlan);

/// Metrics of one finished round.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsflRoundMetrics {
    /// 1-based round index.
    pub round: u64,
    pub sim_time: f64,
    pub intra_waiting: f64,
    pub inter_waiting: f64,
    pub traffic_bytes: u64,
    pub test_accuracy: f64,
}

/// Summary of one cluster of a plan.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PsflClusterInfo {
    pub top_worker: usize,
    /// Number of bottom workers; 0 for a worker training alone.
    pub num_members: usize,
    pub tau: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: PsflStatus, msg: impl Into<String>) -> PsflStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> PsflStatus {
    let status = if e.is_config() { PsflStatus::Config } else { PsflStatus::Runtime };
    fail(status, e.to_string())
}

/// Runs `f`, mapping panics to [`PsflStatus::Panic`] and clearing the last
/// error on success.
fn guard(f: impl FnOnce() -> PsflStatus) -> PsflStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == PsflStatus::Ok {
                clear_error();
            }
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(PsflStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

/// # Safety
/// `s` must be null or a valid nul-terminated string.
unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, PsflStatus> {
    if s.is_null() {
        return Err(fail(PsflStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(PsflStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn write_string(s: String, out: *mut *mut c_char) -> PsflStatus {
    match CString::new(s) {
        Ok(c) => {
            // SAFETY: callers check `out` for null before calling.
            unsafe { *out = c.into_raw() };
            PsflStatus::Ok
        }
        Err(_) => fail(PsflStatus::Runtime, "string contains a nul byte"),
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(PsflStatus::NullPointer, concat!(stringify!($p), " is null"));
        })+
    };
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn psfl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes of the calling thread's last error message, excluding the
/// terminating nul; 0 when the last call succeeded.
#[no_mangle]
pub extern "C" fn psfl_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes().len()))
}

/// Copies the last error message, truncated to fit and nul-terminated, into
/// `buf` of `len` bytes. Returns the number of bytes written without the nul.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn psfl_last_error_message(buf: *mut c_char, len: usize) -> usize {
    if buf.is_null() || len == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[][..], |c| c.as_bytes());
        let n = bytes.len().min(len - 1);
        ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
        *buf.add(n) = 0;
        n
    })
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must be null or a string obtained from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn psfl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a JSON configuration.
///
/// # Safety
/// `json` must be a valid nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn psfl_config_from_json(json: *const c_char, out: *mut *mut PsflConfig) -> PsflStatus {
    guard(|| {
        non_null!(out);
        let text = match read_str(json, "json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ExperimentConfig::from_json(text).and_then(|c| c.validate().map(|()| c)) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(PsflConfig(cfg)));
                PsflStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Named scenario: `iid` or `noniid-p<level>`.
///
/// # Safety
/// `name` must be a valid nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn psfl_config_preset(name: *const c_char, out: *mut *mut PsflConfig) -> PsflStatus {
    guard(|| {
        non_null!(out);
        let name = match read_str(name, "name") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ExperimentConfig::preset(name) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(PsflConfig(cfg)));
                PsflStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Serializes the configuration; free the result with [`psfl_string_free`].
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn psfl_config_to_json(cfg: *const PsflConfig, out: *mut *mut c_char) -> PsflStatus {
    guard(|| {
        non_null!(cfg, out);
        match (*cfg).0.to_json() {
            Ok(s) => write_string(s, out),
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn psfl_config_set_seed(cfg: *mut PsflConfig, seed: u64) -> PsflStatus {
    guard(|| {
        non_null!(cfg);
        (*cfg).0.seed = seed;
        PsflStatus::Ok
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn psfl_config_set_rounds(cfg: *mut PsflConfig, rounds: u64) -> PsflStatus {
    guard(|| {
        non_null!(cfg);
        if rounds == 0 {
            return fail(PsflStatus::InvalidArgument, "rounds must be at least 1");
        }
        (*cfg).0.rounds = rounds;
        PsflStatus::Ok
    })
}

/// Strategy by name: `parallel-sfl`, `random-cluster`, `fixed-frequency`
/// or `single-cluster-sfl`.
///
/// # Safety
/// `cfg` must be a live handle; `name` a valid nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn psfl_config_set_strategy(cfg: *mut PsflConfig, name: *const c_char) -> PsflStatus {
    guard(|| {
        non_null!(cfg);
        let name = match read_str(name, "name") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match name.parse::<Strategy>() {
            Ok(s) => {
                (*cfg).0.strategy = s;
                PsflStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn psfl_config_free(cfg: *mut PsflConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Builds the dataset, partition and fleet of a configuration. The
/// configuration handle stays owned by the caller.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn psfl_simulation_new(cfg: *const PsflConfig, out: *mut *mut PsflSimulation) -> PsflStatus {
    guard(|| {
        non_null!(cfg, out);
        match Simulation::new(&(*cfg).0) {
            Ok(sim) => {
                *out = Box::into_raw(Box::new(PsflSimulation { sim, metrics: Vec::new() }));
                PsflStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Runs one round. `metrics` receives its metrics; when `plan` is not null
/// it receives a new plan handle to free with [`psfl_plan_free`].
///
/// # Safety
/// `sim` must be a live handle; `metrics` writable; `plan` null or writable.
#[no_mangle]
pub unsafe extern "C" fn psfl_simulation_step(
    sim: *mut PsflSimulation,
    metrics: *mut PsflRoundMetrics,
    plan: *mut *mut PsflPlan,
) -> PsflStatus {
    guard(|| {
        non_null!(sim, metrics);
        let s = &mut *sim;
        match s.sim.step() {
            Ok((m, p)) => {
                *metrics = PsflRoundMetrics {
                    round: m.round,
                    sim_time: m.sim_time,
                    intra_waiting: m.intra_waiting,
                    inter_waiting: m.inter_waiting,
                    traffic_bytes: m.traffic_bytes,
                    test_accuracy: m.test_accuracy,
                };
                s.metrics.push(m);
                if !plan.is_null() {
                    *plan = Box::into_raw(Box::new(PsflPlan(p)));
                }
                PsflStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Number of rounds finished so far.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn psfl_simulation_rounds_completed(sim: *const PsflSimulation) -> u64 {
    if sim.is_null() {
        return 0;
    }
    (*sim).metrics.len() as u64
}

/// Writes the metrics of the finished rounds as CSV.
///
/// # Safety
/// `sim` must be a live handle; `path` a valid nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn psfl_simulation_write_metrics_csv(sim: *const PsflSimulation, path: *const c_char) -> PsflStatus {
    guard(|| {
        non_null!(sim);
        let path = match read_str(path, "path") {
            Ok(t) => PathBuf::from(t),
            Err(s) => return s,
        };
        let result = std::fs::File::create(&path)
            .map_err(Error::from)
            .and_then(|f| write_metrics_csv(f, &(*sim).metrics));
        match result {
            Ok(()) => PsflStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `sim` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn psfl_simulation_free(sim: *mut PsflSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Number of clusters in the plan; 0 for a null handle.
///
/// # Safety
/// `plan` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn psfl_plan_cluster_count(plan: *const PsflPlan) -> usize {
    if plan.is_null() {
        return 0;
    }
    (*plan).0.clusters.len()
}

/// # Safety
/// `plan` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn psfl_plan_cluster(plan: *const PsflPlan, index: usize, out: *mut PsflClusterInfo) -> PsflStatus {
    guard(|| {
        non_null!(plan, out);
        match (*plan).0.clusters.as_slice().get(index) {
            Some(c) => {
                *out = PsflClusterInfo {
                    top_worker: c.top_worker,
                    num_members: c.size(),
                    tau: c.tau,
                };
                PsflStatus::Ok
            }
            None => fail(PsflStatus::InvalidArgument, format!("cluster index {index} out of range")),
        }
    })
}

/// Copies up to `len` member ids of cluster `index` into `buf` and stores
/// the full member count in `count`.
///
/// # Safety
/// `plan` must be a live handle; `buf` null or `len` writable slots;
/// `count` writable.
#[no_mangle]
pub unsafe extern "C" fn psfl_plan_members(
    plan: *const PsflPlan,
    index: usize,
    buf: *mut usize,
    len: usize,
    count: *mut usize,
) -> PsflStatus {
    guard(|| {
        non_null!(plan, count);
        let Some(c) = (*plan).0.clusters.as_slice().get(index) else {
            return fail(PsflStatus::InvalidArgument, format!("cluster index {index} out of range"));
        };
        *count = c.members.len();
        if !buf.is_null() {
            let n = len.min(c.members.len());
            ptr::copy_nonoverlapping(c.members.as_ptr(), buf, n);
        }
        PsflStatus::Ok
    })
}

/// Serializes the plan; free the result with [`psfl_string_free`].
///
/// # Safety
/// `plan` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn psfl_plan_to_json(plan: *const PsflPlan, out: *mut *mut c_char) -> PsflStatus {
    guard(|| {
        non_null!(plan, out);
        match (*plan).0.to_json() {
            Ok(s) => write_string(s, out),
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `plan` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn psfl_plan_free(plan: *mut PsflPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}
