//! C ABI over the castgan library.
//!
//! Models and tables are opaque handles owned by the caller and released
//! with the matching `*_free` function. Every fallible call returns a
//! [`CastganStatus`]; on failure the message is available from
//! [`castgan_last_error`] on the same thread until the next failing call.
//! Strings returned through `char **` out-parameters are released with
//! [`castgan_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use castgan::attack::{attack_distances, whitebox_attack, AttackConfig};
use castgan::gan::{CasTgan, TrainConfig};
use castgan::gbdt::PerturbationConfig;
use castgan::metrics::evaluate;
use castgan::schema::{load_csv, DataTable, DatasetSchema};
use castgan::Error;

/// Result codes shared by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CastganStatus {
    Ok = 0,
    /// A pointer was null or an argument was out of range.
    InvalidArgument = 1,
    /// A file could not be read or written.
    Io = 2,
    /// A CSV or schema did not match expectations.
    Data = 3,
    /// A configuration value was rejected.
    Config = 4,
    /// A model container was corrupt or of an unsupported version.
    Format = 5,
    /// Shapes of inputs did not agree.
    Shape = 6,
    /// An internal panic was caught at the boundary.
    Panic = 7,
}

/// Trained model handle.
pub struct CastganModel(CasTgan);

/// Table handle.
pub struct CastganTable(DataTable);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let text = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn status_of(e: &Error) -> CastganStatus {
    match e {
        Error::Io { .. } => CastganStatus::Io,
        Error::Csv(_)
        | Error::EmptyFile(_)
        | Error::MissingColumn(_)
        | Error::ParseNumeric { .. }
        | Error::MissingValue { .. }
        | Error::UnseenCategory { .. }
        | Error::Schema(_) => CastganStatus::Data,
        Error::Config(_) => CastganStatus::Config,
        Error::Format(_) => CastganStatus::Format,
        Error::Shape(_) => CastganStatus::Shape,
        Error::InvalidArgument(_) => CastganStatus::InvalidArgument,
    }
}

struct Failure(CastganStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Failure {
    Failure(CastganStatus::InvalidArgument, msg.to_string())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CastganStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CastganStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            CastganStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{name} is not valid UTF-8")))
}

unsafe fn path(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    text(p, name).map(PathBuf::from)
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| invalid(&format!("{name} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| invalid("string contains NUL"))?;
    *out = c.into_raw();
    Ok(())
}

fn check_out<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        Err(invalid("output pointer is null"))
    } else {
        Ok(())
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn castgan_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread (empty if none). The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn castgan_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn castgan_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a CSV whose columns follow the schema file (TOML).
///
/// # Safety
/// Paths must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn castgan_table_load_csv(
    schema_path: *const c_char,
    csv_path: *const c_char,
    out: *mut *mut CastganTable,
) -> CastganStatus {
    guard(|| {
        check_out(out)?;
        let schema = DatasetSchema::load(path(schema_path, "schema_path")?)?;
        let table = load_csv(path(csv_path, "csv_path")?, &schema)?;
        put(out, CastganTable(table));
        Ok(())
    })
}

/// Writes a table as CSV with a header row.
///
/// # Safety
/// `table` must be a live handle; `csv_path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn castgan_table_write_csv(table: *const CastganTable, csv_path: *const c_char) -> CastganStatus {
    guard(|| {
        let t = handle(table, "table")?;
        t.0.write_csv(path(csv_path, "csv_path")?)?;
        Ok(())
    })
}

/// Number of data rows, or 0 for a null handle.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn castgan_table_rows(table: *const CastganTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.row_count())
}

/// Number of columns, or 0 for a null handle.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn castgan_table_columns(table: *const CastganTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.schema().len())
}

/// Releases a table. Null is ignored.
///
/// # Safety
/// `table` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn castgan_table_free(table: *mut CastganTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Trains a model on `table`. `config_json` holds training overrides as a
/// JSON object (null or "{}" keeps every default); `epsilon` is the
/// auxiliary-label perturbation fraction; `threads` of 0 means one.
///
/// # Safety
/// `table` must be a live handle; `config_json` null or NUL-terminated;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn castgan_model_fit(
    table: *const CastganTable,
    config_json: *const c_char,
    epsilon: f64,
    perturbation_seed: u64,
    threads: usize,
    out: *mut *mut CastganModel,
) -> CastganStatus {
    guard(|| {
        check_out(out)?;
        let t = handle(table, "table")?;
        let config: TrainConfig = if config_json.is_null() {
            TrainConfig::default()
        } else {
            serde_json::from_str(text(config_json, "config_json")?)
                .map_err(|e| Failure(CastganStatus::Config, format!("invalid configuration: {e}")))?
        };
        let perturbation = PerturbationConfig {
            epsilon,
            seed: perturbation_seed,
        };
        let (model, _) = CasTgan::fit(&t.0, config, perturbation, threads.max(1))?;
        put(out, CastganModel(model));
        Ok(())
    })
}

/// Loads a model container.
///
/// # Safety
/// `model_path` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn castgan_model_load(model_path: *const c_char, out: *mut *mut CastganModel) -> CastganStatus {
    guard(|| {
        check_out(out)?;
        let model = CasTgan::load(&path(model_path, "model_path")?)?;
        put(out, CastganModel(model));
        Ok(())
    })
}

/// Saves a model container.
///
/// # Safety
/// `model` must be a live handle; `model_path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn castgan_model_save(model: *const CastganModel, model_path: *const c_char) -> CastganStatus {
    guard(|| {
        let m = handle(model, "model")?;
        m.0.save(&path(model_path, "model_path")?)?;
        Ok(())
    })
}

/// Number of columns the model generates, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn castgan_model_columns(model: *const CastganModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.schema.len())
}

/// Samples `rows` synthetic rows; identical seeds give identical tables.
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn castgan_model_sample(
    model: *const CastganModel,
    rows: usize,
    seed: u64,
    out: *mut *mut CastganTable,
) -> CastganStatus {
    guard(|| {
        check_out(out)?;
        let m = handle(model, "model")?;
        if rows == 0 {
            return Err(invalid("rows must be positive"));
        }
        put(out, CastganTable(m.0.sample(rows, seed)?));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn castgan_model_free(model: *mut CastganModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Scores `synth` against `real` and returns the report as JSON. `train`
/// may be null, in which case `real` is the reference for UPCC and pair
/// rules.
///
/// # Safety
/// Handles must be live (or null for `train`); `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn castgan_evaluate(
    synth: *const CastganTable,
    real: *const CastganTable,
    train: *const CastganTable,
    seed: u64,
    out_json: *mut *mut c_char,
) -> CastganStatus {
    guard(|| {
        check_out(out_json)?;
        let s = handle(synth, "synth")?;
        let r = handle(real, "real")?;
        let t = train.as_ref().map(|t| &t.0);
        let report = evaluate(&s.0, &r.0, t, seed)?;
        put_string(out_json, report.to_json())
    })
}

/// Runs the white-box attack on `synth` with the model's auxiliary learners
/// and returns the distance report as JSON.
///
/// # Safety
/// Handles must be live; `out_json` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn castgan_attack(
    model: *const CastganModel,
    synth: *const CastganTable,
    train: *const CastganTable,
    iterations: usize,
    fraction: f64,
    access_preprocessors: bool,
    seed: u64,
    out_json: *mut *mut c_char,
) -> CastganStatus {
    guard(|| {
        check_out(out_json)?;
        let m = handle(model, "model")?;
        let s = handle(synth, "synth")?;
        let t = handle(train, "train")?;
        let config = AttackConfig {
            iterations,
            fraction,
            access_preprocessors,
            seed,
        };
        let outcome = whitebox_attack(&s.0, &m.0.learners, &m.0.encoder, &config)?;
        let report = attack_distances(&outcome, &s.0, &t.0, &config, m.0.perturbation.epsilon)?;
        put_string(out_json, report.to_json())
    })
}
