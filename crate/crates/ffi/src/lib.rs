//! C ABI over the `coxplore` library.
//!
//! Objects cross the boundary as opaque handles created by `*_from_json`
//! constructors and released with the matching `*_free`. Every fallible call
//! returns a [`CoxStatus`]; on failure a message is available from
//! [`cox_last_error`] until the next failing call on the same thread.
//! Strings returned by the library are released with [`cox_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use coxplore::accel::{AcceleratorConfig, ParamSpace};
use coxplore::batchtile::{batch_search, map_subnet};
use coxplore::costmodel::{estimate_cost, hw_cost, CostBreakdown, CostConstants, CostWeights, TilingPlan};
use coxplore::error::Error;
use coxplore::hwsearch::{anneal_search, exhaustive_search, train_generator, GeneratorNet, SearchBudget};
use coxplore::joint::Engine;
use coxplore::workload::{load_subnet, SubnetDescriptor};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoxStatus {
    Ok = 0,
    NullArgument = 1,
    Parse = 2,
    InvalidArgument = 3,
    Infeasible = 4,
    SpaceTooLarge = 5,
    Internal = 6,
}

pub struct CoxSubnet(SubnetDescriptor);
pub struct CoxAccel(AcceleratorConfig);
pub struct CoxConstants(CostConstants);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CoxCost {
    pub energy_mj: f64,
    pub latency_ms: f64,
    pub cycles: u64,
    pub dram_bytes: u64,
    pub area_mm2: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CoxTiling {
    pub t_oc: u32,
    pub t_ic: u32,
    pub t_ow: u32,
    pub t_oh: u32,
}

impl From<CostBreakdown> for CoxCost {
    fn from(b: CostBreakdown) -> Self {
        CoxCost {
            energy_mj: b.energy_mj,
            latency_ms: b.latency_ms,
            cycles: b.cycles,
            dram_bytes: b.dram_bytes,
            area_mm2: b.area_mm2,
        }
    }
}

impl From<CoxCost> for CostBreakdown {
    fn from(c: CoxCost) -> Self {
        CostBreakdown {
            energy_mj: c.energy_mj,
            latency_ms: c.latency_ms,
            cycles: c.cycles,
            dram_bytes: c.dram_bytes,
            area_mm2: c.area_mm2,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CoxStatus {
    match e {
        Error::Parse(_) | Error::InvalidOperator { .. } | Error::EmptySubnet => CoxStatus::Parse,
        Error::NoFeasibleTiling { .. } | Error::InfeasibleTiling(_) | Error::NoFeasibleConfig => CoxStatus::Infeasible,
        Error::SpaceTooLarge { .. } => CoxStatus::SpaceTooLarge,
        Error::Io(_) => CoxStatus::Internal,
        _ => CoxStatus::InvalidArgument,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Run `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CoxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CoxStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for {what}"));
            CoxStatus::NullArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            CoxStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::Parse(format!("{what} is not valid UTF-8"))))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

/// Last error message on this thread, or null. Owned by the library.
#[no_mangle]
pub extern "C" fn cox_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn cox_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cox_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse a workload document `{"operators": [...]}`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cox_subnet_from_json(json: *const c_char, out: *mut *mut CoxSubnet) -> CoxStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let s = load_subnet(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(CoxSubnet(s)));
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a handle from [`cox_subnet_from_json`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cox_subnet_free(s: *mut CoxSubnet) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Operator count, or 0 for a null handle.
///
/// # Safety
/// `s` must be null or a live subnet handle.
#[no_mangle]
pub unsafe extern "C" fn cox_subnet_len(s: *const CoxSubnet) -> usize {
    s.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cox_accel_from_json(json: *const c_char, out: *mut *mut CoxAccel) -> CoxStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let a = AcceleratorConfig::from_json(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(CoxAccel(a)));
        Ok(())
    })
}

/// # Safety
/// `a` must be null or a handle from [`cox_accel_from_json`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cox_accel_free(a: *mut CoxAccel) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}

/// Constants from JSON; a null `json` gives the defaults.
///
/// # Safety
/// `json` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cox_constants_new(json: *const c_char, out: *mut *mut CoxConstants) -> CoxStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let c = if json.is_null() {
            CostConstants::default()
        } else {
            CostConstants::from_json(str_arg(json, "json")?)?
        };
        *out = Box::into_raw(Box::new(CoxConstants(c)));
        Ok(())
    })
}

/// # Safety
/// `c` must be null or a handle from [`cox_constants_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cox_constants_free(c: *mut CoxConstants) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

fn op_at(s: &CoxSubnet, i: usize) -> Result<&coxplore::workload::OperatorDescriptor, Failure> {
    s.0.operators()
        .get(i)
        .ok_or_else(|| Failure::Lib(Error::InvalidArgument(format!("operator index {i} out of range for {} operators", s.0.len()))))
}

/// Cost of operator `op_index` under an explicit tiling.
///
/// # Safety
/// All pointers must be live handles or writable structs.
#[no_mangle]
pub unsafe extern "C" fn cox_estimate_cost(
    subnet: *const CoxSubnet,
    op_index: usize,
    accel: *const CoxAccel,
    tiling: *const CoxTiling,
    constants: *const CoxConstants,
    out: *mut CoxCost,
) -> CoxStatus {
    guard(|| {
        let op = op_at(ref_arg(subnet, "subnet")?, op_index)?;
        let t = ref_arg(tiling, "tiling")?;
        let plan = TilingPlan::new(t.t_oc, t.t_ic, t.t_ow, t.t_oh)?;
        let b = estimate_cost(op, &ref_arg(accel, "accel")?.0, &plan, &ref_arg(constants, "constants")?.0)?;
        *out_arg(out, "out")? = b.into();
        Ok(())
    })
}

/// Best tiling of operator `op_index`, weighting energy and latency equally.
///
/// # Safety
/// All pointers must be live handles or writable structs.
#[no_mangle]
pub unsafe extern "C" fn cox_batch_search(
    subnet: *const CoxSubnet,
    op_index: usize,
    accel: *const CoxAccel,
    constants: *const CoxConstants,
    out_tiling: *mut CoxTiling,
    out_cost: *mut CoxCost,
) -> CoxStatus {
    guard(|| {
        let op = op_at(ref_arg(subnet, "subnet")?, op_index)?;
        let r = batch_search(op, &ref_arg(accel, "accel")?.0, &ref_arg(constants, "constants")?.0, &CostWeights::default())?;
        *out_arg(out_tiling, "out_tiling")? = CoxTiling {
            t_oc: r.best.t_oc,
            t_ic: r.best.t_ic,
            t_ow: r.best.t_ow,
            t_oh: r.best.t_oh,
        };
        *out_arg(out_cost, "out_cost")? = r.cost.into();
        Ok(())
    })
}

/// Total cost of the whole subnet with the best tiling per operator.
///
/// # Safety
/// All pointers must be live handles or writable structs.
#[no_mangle]
pub unsafe extern "C" fn cox_map_subnet(
    subnet: *const CoxSubnet,
    accel: *const CoxAccel,
    constants: *const CoxConstants,
    out: *mut CoxCost,
) -> CoxStatus {
    guard(|| {
        let m = map_subnet(
            &ref_arg(subnet, "subnet")?.0,
            &ref_arg(accel, "accel")?.0,
            &ref_arg(constants, "constants")?.0,
            &CostWeights::default(),
        )?;
        *out_arg(out, "out")? = m.total.into();
        Ok(())
    })
}

/// Weighted hardware cost; NaN for a null `cost`.
///
/// # Safety
/// `cost` must be null or point to a valid struct.
#[no_mangle]
pub unsafe extern "C" fn cox_hw_cost(cost: *const CoxCost, lambda_e: f64, lambda_l: f64, lambda_a: f64) -> f64 {
    match cost.as_ref() {
        Some(c) => hw_cost(
            &(*c).into(),
            &CostWeights {
                lambda_e,
                lambda_l,
                lambda_a,
            },
        ),
        None => f64::NAN,
    }
}

/// Search accelerator configs for a subnet. `space_json` may be null for the
/// full space; `engine` is "anneal", "generator" or "exhaustive". On success
/// `*out_json` receives the chosen config as an accelerator document, to be
/// released with [`cox_string_free`].
///
/// # Safety
/// Strings must be NUL-terminated; handles live; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn cox_search_accel(
    subnet: *const CoxSubnet,
    space_json: *const c_char,
    constants: *const CoxConstants,
    engine: *const c_char,
    seed: u64,
    out_json: *mut *mut c_char,
) -> CoxStatus {
    guard(|| {
        let out = out_arg(out_json, "out_json")?;
        *out = ptr::null_mut();
        let subnet = &ref_arg(subnet, "subnet")?.0;
        let constants = &ref_arg(constants, "constants")?.0;
        let engine: Engine = str_arg(engine, "engine")?.parse()?;
        let space = if space_json.is_null() {
            ParamSpace::full()
        } else {
            ParamSpace::from_json(str_arg(space_json, "space_json")?)?
        };
        let weights = CostWeights::default();
        let budget = SearchBudget {
            seed,
            ..Default::default()
        };
        let cfg = match engine {
            Engine::Exhaustive => exhaustive_search(subnet, &space, constants, &weights)?.config,
            Engine::Anneal => anneal_search(subnet, &space, constants, &weights, &budget)?.best.config,
            Engine::Generator => {
                let mut net = GeneratorNet::for_space(&space, budget.hidden, seed);
                train_generator(&mut net, subnet, &space, constants, &weights, &budget)?.best.config
            }
        };
        *out = CString::new(cfg.to_json()).expect("json has no nul").into_raw();
        Ok(())
    })
}
