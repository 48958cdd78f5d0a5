//! C ABI for the stochastic Stokes experiments.
//!
//! Configurations and study results are opaque heap handles released with
//! their `_free` function. Every fallible call returns an [`SsStatus`]; the
//! message of the most recent failure on the calling thread is available
//! from [`ss_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use stoch_stokes::config::ExperimentConfig;
use stoch_stokes::experiment::{self, Statistic, StudyReport};
use stoch_stokes::io::{self, ArtifactHeader};
use stoch_stokes::StokesError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConfigError = 3,
    SolverError = 4,
    InvariantViolation = 5,
    IoError = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStudyKind {
    Temporal = 0,
    Balanced = 1,
    FixedH = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStatistic {
    Au = 0,
    Bu = 1,
    Ap = 2,
    Bp = 3,
}

impl From<SsStatistic> for Statistic {
    fn from(s: SsStatistic) -> Self {
        match s {
            SsStatistic::Au => Statistic::AU,
            SsStatistic::Bu => Statistic::BU,
            SsStatistic::Ap => Statistic::AP,
            SsStatistic::Bp => Statistic::BP,
        }
    }
}

/// Root-mean-square errors of one level.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SsLevelStats {
    pub k: f64,
    pub h: f64,
    pub n_p: usize,
    pub au: f64,
    pub bu: f64,
    pub ap: f64,
    pub bp: f64,
}

/// Opaque experiment configuration.
pub struct SsConfig {
    inner: ExperimentConfig,
}

/// Opaque result of a Monte Carlo study.
pub struct SsStudy {
    report: StudyReport,
    header: ArtifactHeader,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &StokesError) -> SsStatus {
    match e {
        StokesError::Config(_) | StokesError::Alignment { .. } => SsStatus::ConfigError,
        StokesError::Solver { .. } => SsStatus::SolverError,
        StokesError::Invariant(_) => SsStatus::InvariantViolation,
        StokesError::Io(_) => SsStatus::IoError,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (SsStatus, String)>) -> SsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SsStatus::Panic
        }
    }
}

fn lift(e: StokesError) -> (SsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SsStatus, String) {
    (SsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SsStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// Copies `s` into `buf` (NUL-terminated, truncated to `len - 1` bytes) and
/// returns the full length of `s`.
unsafe fn copy_out(s: &str, buf: *mut c_char, len: usize) -> usize {
    if !buf.is_null() && len > 0 {
        let n = s.len().min(len - 1);
        ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, n);
        *buf.add(n) = 0;
    }
    s.len()
}

/// Copies the last error message of this thread into `buf` and returns its
/// full length in bytes (0 if there was none).
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ss_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| copy_out(&e.borrow(), buf, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Creates a configuration from a built-in preset name.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_config_from_preset(name: *const c_char, out: *mut *mut SsConfig) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let name = read_str(name, "name")?;
        let inner = ExperimentConfig::preset(name).map_err(lift)?;
        *out = Box::into_raw(Box::new(SsConfig { inner }));
        Ok(())
    })
}

/// Parses and validates a TOML configuration.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_config_from_toml(text: *const c_char, out: *mut *mut SsConfig) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = read_str(text, "text")?;
        let inner = ExperimentConfig::parse(text).map_err(lift)?;
        *out = Box::into_raw(Box::new(SsConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_config_set_seed(cfg: *mut SsConfig, seed: u64) -> SsStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        cfg.inner.monte_carlo.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_config_set_realizations(cfg: *mut SsConfig, n_p: usize) -> SsStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        if n_p == 0 {
            return Err((SsStatus::InvalidArgument, "n_p must be at least 1".into()));
        }
        cfg.inner.monte_carlo.n_p = n_p;
        Ok(())
    })
}

/// Writes the effective configuration as TOML into `buf`; `written`
/// receives the full length. Call with a null `buf` to query the size.
///
/// # Safety
/// `cfg` must be a live handle, `buf` null or `len` writable bytes,
/// `written` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ss_config_to_toml(
    cfg: *const SsConfig,
    buf: *mut c_char,
    len: usize,
    written: *mut usize,
) -> SsStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let n = copy_out(&cfg.inner.emit(), buf, len);
        if let Some(w) = written.as_mut() {
            *w = n;
        }
        Ok(())
    })
}

/// Writes the 16-digit configuration hash (plus NUL) into `buf`.
///
/// # Safety
/// `cfg` must be a live handle and `buf` point to `len >= 17` bytes.
#[no_mangle]
pub unsafe extern "C" fn ss_config_hash(cfg: *const SsConfig, buf: *mut c_char, len: usize) -> SsStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let h = cfg.inner.hash();
        if len <= h.len() {
            return Err((SsStatus::InvalidArgument, format!("buffer of {len} bytes cannot hold the hash")));
        }
        copy_out(&h, buf, len);
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_config_free(cfg: *mut SsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs a Monte Carlo study (`threads = 0` uses all cores).
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_study_run(
    cfg: *const SsConfig,
    kind: SsStudyKind,
    threads: usize,
    out: *mut *mut SsStudy,
) -> SsStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let c = &cfg.inner;
        let report = match kind {
            SsStudyKind::Temporal => experiment::run_temporal_study(c, threads),
            SsStudyKind::Balanced => experiment::run_balanced_study(c, threads),
            SsStudyKind::FixedH => experiment::run_fixed_h_study(c, threads),
        }
        .map_err(lift)?;
        let header = ArtifactHeader {
            seed: c.monte_carlo.seed,
            config_hash: c.hash(),
        };
        *out = Box::into_raw(Box::new(SsStudy { report, header }));
        Ok(())
    })
}

/// Number of levels in a study, 0 for a null handle.
///
/// # Safety
/// `study` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_study_level_count(study: *const SsStudy) -> usize {
    study.as_ref().map_or(0, |s| s.report.stats.levels.len())
}

/// # Safety
/// `study` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_study_level(study: *const SsStudy, index: usize, out: *mut SsLevelStats) -> SsStatus {
    guard(|| {
        let s = study.as_ref().ok_or_else(|| null("study"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let levels = &s.report.stats.levels;
        let l = levels.get(index).ok_or_else(|| {
            (
                SsStatus::InvalidArgument,
                format!("level {index} out of range ({} levels)", levels.len()),
            )
        })?;
        *out = SsLevelStats {
            k: l.level.k,
            h: l.level.h(),
            n_p: l.get(Statistic::AU).count,
            au: l.estimate(Statistic::AU),
            bu: l.estimate(Statistic::BU),
            ap: l.estimate(Statistic::AP),
            bp: l.estimate(Statistic::BP),
        };
        Ok(())
    })
}

/// Log-log slope of a statistic against `k`; fails if no rate was fitted.
///
/// # Safety
/// `study` must be a live handle; `slope` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_study_slope(study: *const SsStudy, statistic: SsStatistic, slope: *mut f64) -> SsStatus {
    guard(|| {
        let s = study.as_ref().ok_or_else(|| null("study"))?;
        let slope = slope.as_mut().ok_or_else(|| null("slope"))?;
        let stat = Statistic::from(statistic);
        let r = s.report.rate(stat).ok_or_else(|| {
            (
                SsStatus::InvalidArgument,
                format!("no rate for {} (fewer than 3 levels or a zero error)", stat.name()),
            )
        })?;
        *slope = r.slope;
        Ok(())
    })
}

/// Writes the study statistics as CSV.
///
/// # Safety
/// `study` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ss_study_write_csv(study: *const SsStudy, path: *const c_char) -> SsStatus {
    guard(|| {
        let s = study.as_ref().ok_or_else(|| null("study"))?;
        let path = read_str(path, "path")?;
        io::write_csv_file(Path::new(path), &s.header, &io::study_rows(&s.report)).map_err(lift)
    })
}

/// # Safety
/// `study` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_study_free(study: *mut SsStudy) {
    if !study.is_null() {
        drop(Box::from_raw(study));
    }
}

/// Discrete inf-sup constant of the configuration's domain with `cells`
/// cells per unit length and no-slip walls.
///
/// # Safety
/// `cfg` must be a live handle; `gamma` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_infsup(cfg: *const SsConfig, cells: usize, gamma: *mut f64) -> SsStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let gamma = gamma.as_mut().ok_or_else(|| null("gamma"))?;
        let mut c = cfg.inner.clone();
        c.levels.infsup = Some(stoch_stokes::config::InfSupConfig {
            cells_per_unit: vec![cells],
        });
        c.validate().map_err(lift)?;
        let est = experiment::run_infsup(&c).map_err(lift)?;
        *gamma = est[0].1.gamma;
        Ok(())
    })
}
