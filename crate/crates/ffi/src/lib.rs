//! C ABI over `expabs_lm`.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `*_new`/`*_load` call and released with the matching `*_free`. Fallible
//! calls return an [`ExpabsStatus`]; the message of the last failure on the
//! calling thread is available from [`expabs_last_error_message`].
//!
//! The generated header lives in `include/expabs_lm.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use expabs_lm::data::{load_delimited, prepare, SchemaConfig, SplitData, SplitSpec};
use expabs_lm::measures::{err_expabs, Tau};
use expabs_lm::network::{init_network, Network, NetworkSpec};
use expabs_lm::trainer::{evaluate, train, Metrics, Mode, ResidualForm, Speedups, SupersabRule, TrainOutcome};
use expabs_lm::{Error, TrainerConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpabsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Training = 4,
    Panic = 5,
}

pub const EXPABS_MODE_FIXED: u32 = 0;
pub const EXPABS_MODE_DYNAMIC: u32 = 1;

pub const EXPABS_SPEEDUPS_NONE: u32 = 0;
pub const EXPABS_SPEEDUPS_MOMENTUM: u32 = 1;
pub const EXPABS_SPEEDUPS_FULL: u32 = 2;

pub const EXPABS_SUPERSAB_PROSE: u32 = 0;
pub const EXPABS_SUPERSAB_PSEUDOCODE: u32 = 1;

pub const EXPABS_RESIDUAL_PER_OUTPUT: u32 = 0;
pub const EXPABS_RESIDUAL_SQUARE_ROOT: u32 = 1;
pub const EXPABS_RESIDUAL_ERROR_SUM: u32 = 2;

/// Trainer settings. Enumerated fields take the `EXPABS_*` constants above.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpabsTrainerConfig {
    pub mu_init: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub alpha: f64,
    pub eta_init: f64,
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub tau_init: f64,
    pub tau_guard: f64,
    pub m_max: usize,
    pub max_iterations: usize,
    pub patience: usize,
    pub mode: u32,
    pub speedups: u32,
    pub supersab_rule: u32,
    pub residual: u32,
}

/// Final measures on one data part. CE and recognition rate are NaN for
/// regression data.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpabsMetrics {
    pub e_expabs: f64,
    pub mse: f64,
    pub ce: f64,
    pub rec_rate: f64,
}

/// Opaque network handle.
pub struct ExpabsNetwork {
    inner: Network,
}

/// Opaque handle to a loaded, scaled and split dataset.
pub struct ExpabsDataset {
    inner: SplitData,
}

/// Opaque handle to the outcome of one training run.
pub struct ExpabsTrainResult {
    outcome: TrainOutcome,
    test: Metrics,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &Error) -> ExpabsStatus {
    match err {
        Error::Io { .. } | Error::Parse { .. } | Error::Schema(_) => ExpabsStatus::Io,
        Error::Training(_) => ExpabsStatus::Training,
        _ => ExpabsStatus::InvalidArgument,
    }
}

/// Runs `f`, turning errors and panics into a status plus a stored message.
fn guarded(f: impl FnOnce() -> Result<(), (ExpabsStatus, String)>) -> ExpabsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ExpabsStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside expabs_lm");
            ExpabsStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (ExpabsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (ExpabsStatus, String) {
    (ExpabsStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> (ExpabsStatus, String) {
    (ExpabsStatus::InvalidArgument, msg)
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (ExpabsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn expabs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Creates a network with weights drawn uniformly from [-0.5, 0.5].
///
/// # Safety
/// `layer_sizes` must point to `n_layers` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn expabs_network_new(
    layer_sizes: *const usize,
    n_layers: usize,
    seed: u64,
    out: *mut *mut ExpabsNetwork,
) -> ExpabsStatus {
    guarded(|| {
        if layer_sizes.is_null() {
            return Err(null("layer_sizes"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let sizes = std::slice::from_raw_parts(layer_sizes, n_layers).to_vec();
        let net = init_network(NetworkSpec::new(sizes, seed)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(ExpabsNetwork { inner: net }));
        Ok(())
    })
}

/// # Safety
/// `net` must come from this library and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn expabs_network_free(net: *mut ExpabsNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of weights including biases; 0 for NULL.
///
/// # Safety
/// `net` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn expabs_network_weight_count(net: *const ExpabsNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.inner.weight_count())
}

/// # Safety
/// `net` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn expabs_network_input_dim(net: *const ExpabsNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.inner.input_dim())
}

/// # Safety
/// `net` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn expabs_network_output_dim(net: *const ExpabsNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.inner.output_dim())
}

/// Forward pass for one pattern.
///
/// # Safety
/// `input` must hold `n_in` values and `output` must have room for `n_out`.
#[no_mangle]
pub unsafe extern "C" fn expabs_network_forward(
    net: *const ExpabsNetwork,
    input: *const f64,
    n_in: usize,
    output: *mut f64,
    n_out: usize,
) -> ExpabsStatus {
    guarded(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        if input.is_null() {
            return Err(null("input"));
        }
        if output.is_null() {
            return Err(null("output"));
        }
        if n_out != net.inner.output_dim() {
            return Err(invalid(format!(
                "output buffer holds {n_out} values, network has {} outputs",
                net.inner.output_dim()
            )));
        }
        let x = std::slice::from_raw_parts(input, n_in);
        let trace = net.inner.forward(x).map_err(lib_err)?;
        std::slice::from_raw_parts_mut(output, n_out).copy_from_slice(trace.output().as_slice());
        Ok(())
    })
}

/// Per-pattern error |τ| exp(Σ e² / |τ|) for the `n` output errors in `e`.
///
/// # Safety
/// `e` must hold `n` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn expabs_err_expabs(e: *const f64, n: usize, tau: f64, out: *mut f64) -> ExpabsStatus {
    guarded(|| {
        if e.is_null() && n > 0 {
            return Err(null("e"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let tau = Tau::new(tau).map_err(lib_err)?;
        let errors: &[f64] = if n == 0 { &[] } else { std::slice::from_raw_parts(e, n) };
        if errors.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite error value".into()));
        }
        *out = err_expabs(errors, tau);
        Ok(())
    })
}

/// Loads a delimited file with its TOML schema, splits it 50/25/25 with
/// `split_seed` and scales it on the training part.
///
/// # Safety
/// Both paths must be NUL-terminated strings and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn expabs_dataset_load(
    data_path: *const c_char,
    schema_path: *const c_char,
    split_seed: u64,
    out: *mut *mut ExpabsDataset,
) -> ExpabsStatus {
    guarded(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let data_path = path_arg(data_path, "data_path")?;
        let schema_path = path_arg(schema_path, "schema_path")?;
        let schema = SchemaConfig::load(schema_path).map_err(lib_err)?;
        let raw = load_delimited(data_path, &schema).map_err(lib_err)?;
        let split = prepare(&raw, SplitSpec::default(), split_seed).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(ExpabsDataset { inner: split }));
        Ok(())
    })
}

/// # Safety
/// `data` must come from this library and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn expabs_dataset_free(data: *mut ExpabsDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Patterns over all three parts; 0 for NULL.
///
/// # Safety
/// `data` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn expabs_dataset_pattern_count(data: *const ExpabsDataset) -> usize {
    data.as_ref()
        .map_or(0, |d| d.inner.train.len() + d.inner.validation.len() + d.inner.test.len())
}

/// Input width after categorical expansion; 0 for NULL.
///
/// # Safety
/// `data` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn expabs_dataset_input_dim(data: *const ExpabsDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.train.inputs.ncols())
}

/// Target width (classes or regression outputs); 0 for NULL.
///
/// # Safety
/// `data` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn expabs_dataset_output_dim(data: *const ExpabsDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.train.targets.ncols())
}

fn to_c(cfg: &TrainerConfig) -> ExpabsTrainerConfig {
    ExpabsTrainerConfig {
        mu_init: cfg.mu_init,
        mu_min: cfg.mu_min,
        mu_max: cfg.mu_max,
        alpha: cfg.alpha,
        eta_init: cfg.eta_init,
        eta_plus: cfg.eta_plus,
        eta_minus: cfg.eta_minus,
        tau_init: cfg.tau_init,
        tau_guard: cfg.tau_guard,
        m_max: cfg.m_max,
        max_iterations: cfg.max_iterations,
        patience: cfg.patience,
        mode: match cfg.mode {
            Mode::Fixed => EXPABS_MODE_FIXED,
            Mode::Dynamic => EXPABS_MODE_DYNAMIC,
        },
        speedups: match cfg.speedups {
            Speedups::None => EXPABS_SPEEDUPS_NONE,
            Speedups::Momentum => EXPABS_SPEEDUPS_MOMENTUM,
            Speedups::Full => EXPABS_SPEEDUPS_FULL,
        },
        supersab_rule: match cfg.supersab_rule {
            SupersabRule::Prose => EXPABS_SUPERSAB_PROSE,
            SupersabRule::Pseudocode => EXPABS_SUPERSAB_PSEUDOCODE,
        },
        residual: match cfg.residual {
            ResidualForm::PerOutput => EXPABS_RESIDUAL_PER_OUTPUT,
            ResidualForm::SquareRoot => EXPABS_RESIDUAL_SQUARE_ROOT,
            ResidualForm::ErrorSum => EXPABS_RESIDUAL_ERROR_SUM,
        },
    }
}

fn from_c(c: &ExpabsTrainerConfig) -> Result<TrainerConfig, (ExpabsStatus, String)> {
    let pick = |v: u32, what: &str, n: u32| {
        if v < n {
            Ok(v)
        } else {
            Err(invalid(format!("{what} = {v} is out of range")))
        }
    };
    Ok(TrainerConfig {
        mu_init: c.mu_init,
        mu_min: c.mu_min,
        mu_max: c.mu_max,
        alpha: c.alpha,
        eta_init: c.eta_init,
        eta_plus: c.eta_plus,
        eta_minus: c.eta_minus,
        tau_init: c.tau_init,
        tau_guard: c.tau_guard,
        m_max: c.m_max,
        max_iterations: c.max_iterations,
        patience: c.patience,
        mode: [Mode::Fixed, Mode::Dynamic][pick(c.mode, "mode", 2)? as usize],
        speedups: [Speedups::None, Speedups::Momentum, Speedups::Full][pick(c.speedups, "speedups", 3)? as usize],
        supersab_rule: [SupersabRule::Prose, SupersabRule::Pseudocode]
            [pick(c.supersab_rule, "supersab_rule", 2)? as usize],
        residual: [ResidualForm::PerOutput, ResidualForm::SquareRoot, ResidualForm::ErrorSum]
            [pick(c.residual, "residual", 3)? as usize],
        ..TrainerConfig::default()
    })
}

#[no_mangle]
pub extern "C" fn expabs_trainer_config_default() -> ExpabsTrainerConfig {
    to_c(&TrainerConfig::default())
}

/// Trains a copy of `net` on the training part of `data`, early-stopping
/// on the validation part. `net` itself is left untouched.
///
/// # Safety
/// `net`, `data` and `cfg` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn expabs_train(
    net: *const ExpabsNetwork,
    data: *const ExpabsDataset,
    cfg: *const ExpabsTrainerConfig,
    out: *mut *mut ExpabsTrainResult,
) -> ExpabsStatus {
    guarded(|| {
        let net = net.as_ref().ok_or_else(|| null("net"))?;
        let data = data.as_ref().ok_or_else(|| null("data"))?;
        let cfg = from_c(cfg.as_ref().ok_or_else(|| null("cfg"))?)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let d = &data.inner;
        let outcome = train(net.inner.clone(), &d.train, &d.validation, &cfg).map_err(lib_err)?;
        let test = evaluate(&outcome.network, outcome.tau, &d.test).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(ExpabsTrainResult { outcome, test }));
        Ok(())
    })
}

/// # Safety
/// `result` must come from this library and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn expabs_result_free(result: *mut ExpabsTrainResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// τ of the returned snapshot; NaN for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn expabs_result_final_tau(result: *const ExpabsTrainResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.outcome.tau.value())
}

/// Logged iterations; 0 for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn expabs_result_iterations(result: *const ExpabsTrainResult) -> usize {
    result.as_ref().map_or(0, |r| r.outcome.log.iterations())
}

/// 1 when the run ended by early stopping, 0 at the iteration cap or for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn expabs_result_early_stopped(result: *const ExpabsTrainResult) -> i32 {
    result.as_ref().map_or(0, |r| {
        i32::from(r.outcome.log.stop_reason == expabs_lm::trainer::StopReason::EarlyStop)
    })
}

/// Measures of the returned snapshot on the test part.
///
/// # Safety
/// `result` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn expabs_result_test_metrics(
    result: *const ExpabsTrainResult,
    out: *mut ExpabsMetrics,
) -> ExpabsStatus {
    guarded(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ExpabsMetrics {
            e_expabs: r.test.e_expabs,
            mse: r.test.mse,
            ce: r.test.ce,
            rec_rate: r.test.rec_rate,
        };
        Ok(())
    })
}

/// Copies the trained network into a new handle owned by the caller.
///
/// # Safety
/// `result` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn expabs_result_network(
    result: *const ExpabsTrainResult,
    out: *mut *mut ExpabsNetwork,
) -> ExpabsStatus {
    guarded(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(ExpabsNetwork {
            inner: r.outcome.network.clone(),
        }));
        Ok(())
    })
}
