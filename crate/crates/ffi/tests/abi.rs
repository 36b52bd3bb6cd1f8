use std::ffi::{c_char, CStr, CString};
use std::fs;
use std::path::Path;
use std::ptr;

use castgan::fixtures;
use castgan_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn c_path(p: &Path) -> CString {
    c(p.to_str().unwrap())
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(castgan_last_error()) }.to_str().unwrap().to_string()
}

unsafe fn take_string(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    castgan_string_free(p);
    s
}

fn write_fixture(dir: &Path) -> (CString, CString) {
    let t = fixtures::city_country(400, 5);
    let schema = dir.join("schema.toml");
    fs::write(&schema, t.schema().to_toml_string()).unwrap();
    let data = dir.join("data.csv");
    t.write_csv(&data).unwrap();
    (c_path(&schema), c_path(&data))
}

const SMALL: &str = r#"{"epochs": 2, "batch_size": 128, "noise_dim": 16,
    "generator_hidden": [16], "secondary_hidden": [8], "discriminator_hidden": [32, 16],
    "seed": 3}"#;

#[test]
fn fit_sample_save_load_evaluate_attack() {
    let dir = tempfile::tempdir().unwrap();
    let (schema, data) = write_fixture(dir.path());
    unsafe {
        let mut table = ptr::null_mut();
        assert_eq!(castgan_table_load_csv(schema.as_ptr(), data.as_ptr(), &mut table), CastganStatus::Ok);
        assert_eq!(castgan_table_rows(table), 400);
        assert_eq!(castgan_table_columns(table), 4);

        let mut model = ptr::null_mut();
        let cfg = c(SMALL);
        assert_eq!(castgan_model_fit(table, cfg.as_ptr(), 0.0, 0, 1, &mut model), CastganStatus::Ok, "{}", last_error());
        assert_eq!(castgan_model_columns(model), 4);

        let path = c_path(&dir.path().join("m.ctgm"));
        assert_eq!(castgan_model_save(model, path.as_ptr()), CastganStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(castgan_model_load(path.as_ptr(), &mut loaded), CastganStatus::Ok);

        let mut a = ptr::null_mut();
        let mut b = ptr::null_mut();
        assert_eq!(castgan_model_sample(model, 50, 9, &mut a), CastganStatus::Ok);
        assert_eq!(castgan_model_sample(loaded, 50, 9, &mut b), CastganStatus::Ok);
        let pa = dir.path().join("a.csv");
        let pb = dir.path().join("b.csv");
        assert_eq!(castgan_table_write_csv(a, c_path(&pa).as_ptr()), CastganStatus::Ok);
        assert_eq!(castgan_table_write_csv(b, c_path(&pb).as_ptr()), CastganStatus::Ok);
        assert_eq!(fs::read(&pa).unwrap(), fs::read(&pb).unwrap());

        let mut json = ptr::null_mut();
        assert_eq!(castgan_evaluate(a, table, ptr::null(), 0, &mut json), CastganStatus::Ok, "{}", last_error());
        let report: serde_json::Value = serde_json::from_str(&take_string(json)).unwrap();
        assert!(report["invalid_ratio"].as_f64().unwrap() >= 0.0);

        let mut json = ptr::null_mut();
        assert_eq!(castgan_attack(model, a, table, 2, 0.2, true, 1, &mut json), CastganStatus::Ok, "{}", last_error());
        let report: serde_json::Value = serde_json::from_str(&take_string(json)).unwrap();
        assert_eq!(report["rows_attacked"], 10);
        assert_eq!(report["access_preprocessors"], true);

        let mut json = ptr::null_mut();
        assert_eq!(castgan_attack(model, a, table, 0, 0.2, true, 1, &mut json), CastganStatus::Config);
        assert!(json.is_null());

        castgan_table_free(a);
        castgan_table_free(b);
        castgan_table_free(table);
        castgan_model_free(model);
        castgan_model_free(loaded);
    }
}

#[test]
fn error_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let (schema, _) = write_fixture(dir.path());
    unsafe {
        let mut table = ptr::null_mut();
        let missing = c("/nonexistent/data.csv");
        assert_eq!(castgan_table_load_csv(schema.as_ptr(), missing.as_ptr(), &mut table), CastganStatus::Io);
        assert!(last_error().contains("/nonexistent/data.csv"));
        assert!(table.is_null());

        let bogus = dir.path().join("bogus.ctgm");
        fs::write(&bogus, b"not a model").unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(castgan_model_load(c_path(&bogus).as_ptr(), &mut model), CastganStatus::Format);
        assert!(last_error().contains("magic"));

        assert_eq!(castgan_model_sample(ptr::null(), 5, 0, &mut table), CastganStatus::InvalidArgument);
        assert_eq!(castgan_table_load_csv(schema.as_ptr(), missing.as_ptr(), ptr::null_mut()), CastganStatus::InvalidArgument);

        let (_, data) = write_fixture(dir.path());
        assert_eq!(castgan_table_load_csv(schema.as_ptr(), data.as_ptr(), &mut table), CastganStatus::Ok);
        let bad = c(r#"{"epochs": 1, "not_a_field": 3}"#);
        assert_eq!(castgan_model_fit(table, bad.as_ptr(), 0.0, 0, 1, &mut model), CastganStatus::Config);
        assert!(last_error().contains("not_a_field"));
        let zero_tau = c(r#"{"tau": 0.0}"#);
        assert_eq!(castgan_model_fit(table, zero_tau.as_ptr(), 0.0, 0, 1, &mut model), CastganStatus::Config);
        assert_eq!(castgan_model_fit(table, ptr::null(), 2.0, 0, 1, &mut model), CastganStatus::Config);
        assert!(model.is_null());
        castgan_table_free(table);
        castgan_table_free(ptr::null_mut());
        castgan_model_free(ptr::null_mut());
        castgan_string_free(ptr::null_mut());
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(castgan_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/castgan.h")).unwrap();
    let src = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15, "{exports:?}");
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "header lacks {name}");
    }
    assert!(header.contains("typedef struct CastganModel CastganModel;"));
    assert!(header.contains("CASTGAN_STATUS_PANIC = 7"));
}
