//! C interface to `demo2prog`.
//!
//! Every fallible function returns a [`D2pStatus`]. On failure a message is
//! kept per thread and can be read with [`d2p_last_error`] until the next
//! failing call on that thread. Objects are passed as opaque handles that the
//! caller releases with the matching `*_free` function; strings returned
//! through out-parameters are released with [`d2p_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use demo2prog::config::{Config, PriorKind};
use demo2prog::control::Demonstration;
use demo2prog::induce::induce_program;
use demo2prog::net::MicroNet;
use demo2prog::pipeline;
use demo2prog::smc::{effective_sample_size, InferenceTrace};
use demo2prog::symbolize::symbolize;
use demo2prog::{ControllerLibrary, Error, ProgramAst, SymbolId};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum D2pStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    MissingInput = 4,
    Numeric = 5,
    Grounding = 6,
    Format = 7,
    Io = 8,
    Syntax = 9,
    /// The caller's buffer is too short; the required length was written.
    BufferTooSmall = 10,
    Panic = 11,
}

/// Summary of an N_eff series.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct D2pStats {
    pub mean: f64,
    pub max: f64,
    pub min: f64,
    pub iqr: f64,
}

pub struct D2pConfig(Config);
pub struct D2pDemo(Demonstration);
pub struct D2pNet(MicroNet);
pub struct D2pTrace(InferenceTrace);
pub struct D2pProgram(ProgramAst);
pub struct D2pLibrary(ControllerLibrary);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: D2pStatus,
    message: String,
}

impl Failure {
    fn new(status: D2pStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::Statistics(_) => {
                D2pStatus::InvalidArgument
            }
            Error::Config(_) => D2pStatus::Config,
            Error::MissingInput(_) => D2pStatus::MissingInput,
            Error::UnreachableTarget { .. }
            | Error::Convergence { .. }
            | Error::Unstable(_)
            | Error::Divergence { .. }
            | Error::DegenerateWeights { .. }
            | Error::Unnormalized(_) => D2pStatus::Numeric,
            Error::GroundingFailure { .. } | Error::MatchNotFound { .. } | Error::PartialGrounding(_) => {
                D2pStatus::Grounding
            }
            Error::Syntax { .. } => D2pStatus::Syntax,
            Error::Format { .. } => D2pStatus::Format,
            Error::Io(_) => D2pStatus::Io,
        };
        Failure::new(status, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Outcome) -> D2pStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => D2pStatus::Ok,
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            D2pStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(D2pStatus::NullPointer, format!("{name} is null")))
}

unsafe fn get_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(D2pStatus::NullPointer, format!("{name} is null")))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    let s = get(p, name)?;
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure::new(D2pStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Outcome {
    let slot = get_mut(out, "out")?;
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Outcome {
    let slot = get_mut(out, "out")?;
    let c = CString::new(s).map_err(|_| Failure::new(D2pStatus::InvalidArgument, "string contains nul"))?;
    *slot = c.into_raw();
    Ok(())
}

/// Copies `values` into `buf` when `cap` is large enough; always reports the
/// full length through `out_len`.
unsafe fn fill<T: Copy>(values: &[T], buf: *mut T, cap: usize, out_len: *mut usize) -> Outcome {
    *get_mut(out_len, "out_len")? = values.len();
    if values.len() > cap {
        return Err(Failure::new(
            D2pStatus::BufferTooSmall,
            format!("buffer holds {cap} values, {} needed", values.len()),
        ));
    }
    if !values.is_empty() {
        let dst = get_mut(buf, "buf")?;
        std::ptr::copy_nonoverlapping(values.as_ptr(), dst, values.len());
    }
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn d2p_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn d2p_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub unsafe extern "C" fn d2p_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub unsafe extern "C" fn d2p_config_default(out: *mut *mut D2pConfig) -> D2pStatus {
    guard(|| put(out, D2pConfig(Config::default())))
}

#[no_mangle]
pub unsafe extern "C" fn d2p_config_from_json(json: *const c_char, out: *mut *mut D2pConfig) -> D2pStatus {
    guard(|| put(out, D2pConfig(Config::from_json(text(json, "json")?)?)))
}

#[no_mangle]
pub unsafe extern "C" fn d2p_config_load(path: *const c_char, out: *mut *mut D2pConfig) -> D2pStatus {
    guard(|| put(out, D2pConfig(Config::load(Path::new(text(path, "path")?))?)))
}

#[no_mangle]
pub unsafe extern "C" fn d2p_config_to_json(cfg: *const D2pConfig, out: *mut *mut c_char) -> D2pStatus {
    guard(|| put_string(out, get(cfg, "cfg")?.0.to_json()))
}

#[no_mangle]
pub unsafe extern "C" fn d2p_config_set_seed(cfg: *mut D2pConfig, seed: u64) -> D2pStatus {
    guard(|| {
        get_mut(cfg, "cfg")?.0.seed = seed;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn d2p_config_free(cfg: *mut D2pConfig) {
    free(cfg)
}

/// Generates the configured demonstration.
#[no_mangle]
pub unsafe extern "C" fn d2p_demo_generate(cfg: *const D2pConfig, out: *mut *mut D2pDemo) -> D2pStatus {
    guard(|| {
        let (demo, _, _) = pipeline::generate(&get(cfg, "cfg")?.0)?;
        put(out, D2pDemo(demo))
    })
}

#[no_mangle]
pub unsafe extern "C" fn d2p_demo_load(dir: *const c_char, out: *mut *mut D2pDemo) -> D2pStatus {
    guard(|| put(out, D2pDemo(pipeline::load_demo(Path::new(text(dir, "dir")?))?)))
}

#[no_mangle]
pub unsafe extern "C" fn d2p_demo_save(demo: *const D2pDemo, dir: *const c_char) -> D2pStatus {
    guard(|| Ok(pipeline::save_demo(&get(demo, "demo")?.0, Path::new(text(dir, "dir")?))?))
}

#[no_mangle]
pub unsafe extern "C" fn d2p_demo_len(demo: *const D2pDemo, out: *mut usize) -> D2pStatus {
    guard(|| {
        *get_mut(out, "out")? = get(demo, "demo")?.0.len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn d2p_demo_free(demo: *mut D2pDemo) {
    free(demo)
}

/// Trains the visuomotor network; `final_loss` may be null.
#[no_mangle]
pub unsafe extern "C" fn d2p_net_train(
    cfg: *const D2pConfig,
    demo: *const D2pDemo,
    out: *mut *mut D2pNet,
    final_loss: *mut f64,
) -> D2pStatus {
    guard(|| {
        let (net, curve) = pipeline::train_network(&get(cfg, "cfg")?.0, &get(demo, "demo")?.0)?;
        if let Some(l) = final_loss.as_mut() {
            *l = curve.0.last().copied().unwrap_or(f64::NAN);
        }
        put(out, D2pNet(net))
    })
}

#[no_mangle]
pub unsafe extern "C" fn d2p_net_load(path: *const c_char, out: *mut *mut D2pNet) -> D2pStatus {
    guard(|| put(out, D2pNet(MicroNet::load(Path::new(text(path, "path")?))?)))
}

#[no_mangle]
pub unsafe extern "C" fn d2p_net_save(net: *const D2pNet, path: *const c_char) -> D2pStatus {
    guard(|| Ok(get(net, "net")?.0.save(Path::new(text(path, "path")?))?))
}

#[no_mangle]
pub unsafe extern "C" fn d2p_net_free(net: *mut D2pNet) {
    free(net)
}

/// Runs the particle filter. With a network the attribution prior is used,
/// with a null `net` the baseline prior. `rep` selects the inference seed.
#[no_mangle]
pub unsafe extern "C" fn d2p_infer(
    cfg: *const D2pConfig,
    demo: *const D2pDemo,
    net: *const D2pNet,
    rep: u64,
    out: *mut *mut D2pTrace,
) -> D2pStatus {
    guard(|| {
        let cfg = &get(cfg, "cfg")?.0;
        let demo = &get(demo, "demo")?.0;
        let seed = pipeline::inference_seed(cfg, rep);
        let trace = match net.as_ref() {
            Some(net) => {
                let saliency = pipeline::network_saliency(&net.0, demo)?;
                pipeline::infer(cfg, demo, Some(&saliency), PriorKind::Attribution, seed)?
            }
            None => pipeline::infer(cfg, demo, None, PriorKind::Baseline, seed)?,
        };
        put(out, D2pTrace(trace))
    })
}

#[no_mangle]
pub unsafe extern "C" fn d2p_trace_len(trace: *const D2pTrace, out: *mut usize) -> D2pStatus {
    guard(|| {
        *get_mut(out, "out")? = get(trace, "trace")?.0.len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn d2p_trace_n_eff(
    trace: *const D2pTrace,
    buf: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> D2pStatus {
    guard(|| fill(&get(trace, "trace")?.0.n_eff(), buf, cap, out_len))
}

#[no_mangle]
pub unsafe extern "C" fn d2p_trace_stats(trace: *const D2pTrace, out: *mut D2pStats) -> D2pStatus {
    guard(|| {
        let s = get(trace, "trace")?.0.stats()?;
        *get_mut(out, "out")? = D2pStats {
            mean: s.mean,
            max: s.max,
            min: s.min,
            iqr: s.iqr,
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn d2p_trace_free(trace: *mut D2pTrace) {
    free(trace)
}

/// Symbolizes an inference trace and compresses the symbols into a program.
/// Either output may be null when it is not needed.
#[no_mangle]
pub unsafe extern "C" fn d2p_induce(
    cfg: *const D2pConfig,
    trace: *const D2pTrace,
    out_program: *mut *mut D2pProgram,
    out_library: *mut *mut D2pLibrary,
) -> D2pStatus {
    guard(|| {
        let cfg = &get(cfg, "cfg")?.0;
        let (library, symbols) = symbolize(&get(trace, "trace")?.0, cfg.smc.particles, &cfg.symbolizer)?;
        if !out_program.is_null() {
            put(out_program, D2pProgram(induce_program(&symbols.symbols)))?;
        }
        if !out_library.is_null() {
            put(out_library, D2pLibrary(library))?;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn d2p_program_parse(source: *const c_char, out: *mut *mut D2pProgram) -> D2pStatus {
    guard(|| put(out, D2pProgram(ProgramAst::parse(text(source, "source")?)?)))
}

/// Compresses a symbol trace into loops, palindromes and plain steps.
#[no_mangle]
pub unsafe extern "C" fn d2p_program_from_symbols(
    symbols: *const u32,
    len: usize,
    out: *mut *mut D2pProgram,
) -> D2pStatus {
    guard(|| {
        let trace: &[SymbolId] = if len == 0 {
            &[]
        } else {
            std::slice::from_raw_parts(get(symbols, "symbols")?, len)
        };
        put(out, D2pProgram(induce_program(trace)))
    })
}

#[no_mangle]
pub unsafe extern "C" fn d2p_program_expand(
    program: *const D2pProgram,
    buf: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> D2pStatus {
    guard(|| fill(&get(program, "program")?.0.expand(), buf, cap, out_len))
}

#[no_mangle]
pub unsafe extern "C" fn d2p_program_to_dsl(program: *const D2pProgram, out: *mut *mut c_char) -> D2pStatus {
    guard(|| put_string(out, get(program, "program")?.0.to_dsl()))
}

#[no_mangle]
pub unsafe extern "C" fn d2p_program_free(program: *mut D2pProgram) {
    free(program)
}

#[no_mangle]
pub unsafe extern "C" fn d2p_library_len(library: *const D2pLibrary, out: *mut usize) -> D2pStatus {
    guard(|| {
        *get_mut(out, "out")? = get(library, "library")?.0.len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn d2p_library_goal(
    library: *const D2pLibrary,
    id: u32,
    buf: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> D2pStatus {
    guard(|| {
        let c = get(library, "library")?.0.require(id)?;
        fill(&c.goal.0, buf, cap, out_len)
    })
}

#[no_mangle]
pub unsafe extern "C" fn d2p_library_gain(library: *const D2pLibrary, id: u32, out: *mut f64) -> D2pStatus {
    guard(|| {
        *get_mut(out, "out")? = get(library, "library")?.0.require(id)?.gain;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn d2p_library_free(library: *mut D2pLibrary) {
    free(library)
}

/// `1 / Σ w²` of normalized weights.
#[no_mangle]
pub unsafe extern "C" fn d2p_effective_sample_size(weights: *const f64, len: usize, out: *mut f64) -> D2pStatus {
    guard(|| {
        if len == 0 {
            return Err(Failure::new(D2pStatus::InvalidArgument, "no weights"));
        }
        let w = std::slice::from_raw_parts(get(weights, "weights")?, len);
        *get_mut(out, "out")? = effective_sample_size(w)?;
        Ok(())
    })
}
