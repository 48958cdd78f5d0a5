use std::ffi::{c_char, CStr, CString};
use std::ptr;

use stoch_stokes_ffi::*;

const TINY: &str = r#"
[problem]
domain = [0.0, 1.0, 0.0, 1.0]

[noise]
truncation = 2
eigenvalues = "inverse_norm"

[levels.temporal]
cells_per_unit = 2
k = [0.25, 0.125, 0.0625]
k0 = 0.03125

[monte_carlo]
n_p = 3
seed = 5
"#;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    unsafe { ss_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn tiny() -> *mut SsConfig {
    let text = CString::new(TINY).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { ss_config_from_toml(text.as_ptr(), &mut cfg) }, SsStatus::Ok, "{}", last_error());
    cfg
}

#[test]
fn null_pointers_are_reported() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { ss_config_from_preset(ptr::null(), &mut cfg) }, SsStatus::NullPointer);
    assert!(last_error().contains("name"));
    let name = CString::new("test1").unwrap();
    assert_eq!(unsafe { ss_config_from_preset(name.as_ptr(), ptr::null_mut()) }, SsStatus::NullPointer);
    assert_eq!(unsafe { ss_config_set_seed(ptr::null_mut(), 1) }, SsStatus::NullPointer);
    assert_eq!(unsafe { ss_study_level_count(ptr::null()) }, 0);
    unsafe {
        ss_config_free(ptr::null_mut());
        ss_study_free(ptr::null_mut());
    }
}

#[test]
fn bad_configurations_map_to_config_error() {
    let mut cfg = ptr::null_mut();
    let name = CString::new("nope").unwrap();
    assert_eq!(unsafe { ss_config_from_preset(name.as_ptr(), &mut cfg) }, SsStatus::ConfigError);
    assert!(last_error().contains("nope"));
    let text = CString::new("[levels.temporal]\ncells_per_unit = 2\nk = [0.3]\nk0 = 0.1\n").unwrap();
    assert_eq!(unsafe { ss_config_from_toml(text.as_ptr(), &mut cfg) }, SsStatus::ConfigError);
    assert!(last_error().contains("levels.temporal"));
    assert!(cfg.is_null());
}

#[test]
fn config_hash_and_toml_round_trip() {
    let cfg = tiny();
    let mut hash = [0 as c_char; 17];
    assert_eq!(unsafe { ss_config_hash(cfg, hash.as_mut_ptr(), hash.len()) }, SsStatus::Ok);
    let h1 = unsafe { CStr::from_ptr(hash.as_ptr()) }.to_str().unwrap().to_string();
    assert_eq!(h1.len(), 16);
    let mut short = [0 as c_char; 8];
    assert_eq!(unsafe { ss_config_hash(cfg, short.as_mut_ptr(), short.len()) }, SsStatus::InvalidArgument);

    let mut needed = 0usize;
    assert_eq!(unsafe { ss_config_to_toml(cfg, ptr::null_mut(), 0, &mut needed) }, SsStatus::Ok);
    let mut buf = vec![0 as c_char; needed + 1];
    assert_eq!(unsafe { ss_config_to_toml(cfg, buf.as_mut_ptr(), buf.len(), ptr::null_mut()) }, SsStatus::Ok);
    let mut again = ptr::null_mut();
    assert_eq!(unsafe { ss_config_from_toml(buf.as_ptr(), &mut again) }, SsStatus::Ok);
    let mut hash2 = [0 as c_char; 17];
    unsafe { ss_config_hash(again, hash2.as_mut_ptr(), hash2.len()) };
    assert_eq!(h1, unsafe { CStr::from_ptr(hash2.as_ptr()) }.to_str().unwrap());

    assert_eq!(unsafe { ss_config_set_seed(cfg, 99) }, SsStatus::Ok);
    unsafe { ss_config_hash(cfg, hash2.as_mut_ptr(), hash2.len()) };
    assert_ne!(h1, unsafe { CStr::from_ptr(hash2.as_ptr()) }.to_str().unwrap());
    assert_eq!(unsafe { ss_config_set_realizations(cfg, 0) }, SsStatus::InvalidArgument);
    unsafe {
        ss_config_free(cfg);
        ss_config_free(again);
    }
}

#[test]
fn temporal_study_through_the_c_api() {
    let cfg = tiny();
    let mut study = ptr::null_mut();
    assert_eq!(unsafe { ss_study_run(cfg, SsStudyKind::Temporal, 2, &mut study) }, SsStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { ss_study_level_count(study) }, 3);
    let mut l = SsLevelStats::default();
    assert_eq!(unsafe { ss_study_level(study, 0, &mut l) }, SsStatus::Ok);
    assert_eq!((l.k, l.h, l.n_p), (0.25, 0.5, 3));
    assert!(l.au > 0.0 && l.ap > 0.0);
    assert_eq!(unsafe { ss_study_level(study, 3, &mut l) }, SsStatus::InvalidArgument);
    let mut slope = f64::NAN;
    assert_eq!(unsafe { ss_study_slope(study, SsStatistic::Au, &mut slope) }, SsStatus::Ok);
    assert!(slope.is_finite() && slope > 0.0);

    let dir = std::env::temp_dir().join(format!("ss_ffi_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("temporal.csv");
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ss_study_write_csv(study, cpath.as_ptr()) }, SsStatus::Ok);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# stoch-stokes seed=5"));
    assert!(text.contains("slope_AU"));
    std::fs::remove_dir_all(&dir).unwrap();

    let mut other = ptr::null_mut();
    assert_eq!(unsafe { ss_study_run(cfg, SsStudyKind::Balanced, 1, &mut other) }, SsStatus::ConfigError);
    assert!(last_error().contains("balanced"));
    unsafe {
        ss_study_free(study);
        ss_config_free(cfg);
    }
}

#[test]
fn infsup_is_positive() {
    let cfg = tiny();
    let mut gamma = 0.0;
    assert_eq!(unsafe { ss_infsup(cfg, 4, &mut gamma) }, SsStatus::Ok, "{}", last_error());
    assert!(gamma > 0.1 && gamma < 1.0);
    unsafe { ss_config_free(cfg) };
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(ss_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/stoch_stokes.h")).unwrap();
    for sym in [
        "SS_STATUS_OK",
        "SS_STATUS_CONFIG_ERROR",
        "typedef struct SsConfig SsConfig",
        "ss_config_from_preset",
        "ss_study_run",
        "ss_study_slope",
        "ss_last_error_message",
        "SsLevelStats",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}
