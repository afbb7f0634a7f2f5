//! C ABI over `lorlab`.
//!
//! Every function returns a [`LorlabStatus`]; on failure the message is kept
//! per thread and can be fetched with [`lorlab_last_error`]. Handles are
//! opaque and must be released with the matching `_free` function. Panics
//! never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;
use std::sync::Arc;

use lorlab::causal::{build_causal_graph, time_separation, CausalGraph};
use lorlab::cone::{classify, f_norm, hamiltonian_hessian, legendre_check, CausalClass, Covector, PExponent, TangentVector};
use lorlab::config::{Experiment, ExperimentConfig};
use lorlab::experiments::run_experiment;
use lorlab::grid::Grid;
use lorlab::spacetime::{curvature_pack_richardson, default_step, MetricChart};
use lorlab::{ExtReal, LabError};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LorlabStatus {
    Ok = 0,
    Usage = 1,
    Domain = 2,
    Internal = 3,
    Config = 4,
    Io = 5,
    NullPointer = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LorlabExtKind {
    NegInf = 0,
    Finite = 1,
    PosInf = 2,
}

/// Extended real; `value` is meaningful only when `kind` is `Finite`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LorlabExtReal {
    pub kind: LorlabExtKind,
    pub value: f64,
}

impl From<ExtReal> for LorlabExtReal {
    fn from(x: ExtReal) -> Self {
        match x {
            ExtReal::NegInf => LorlabExtReal { kind: LorlabExtKind::NegInf, value: 0.0 },
            ExtReal::Finite(v) => LorlabExtReal { kind: LorlabExtKind::Finite, value: v },
            ExtReal::PosInf => LorlabExtReal { kind: LorlabExtKind::PosInf, value: 0.0 },
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LorlabCausalClass {
    Timelike = 0,
    Lightlike = 1,
    Spacelike = 2,
    PastCausal = 3,
    Zero = 4,
}

impl From<CausalClass> for LorlabCausalClass {
    fn from(c: CausalClass) -> Self {
        match c {
            CausalClass::Timelike => LorlabCausalClass::Timelike,
            CausalClass::Lightlike => LorlabCausalClass::Lightlike,
            CausalClass::Spacelike => LorlabCausalClass::Spacelike,
            CausalClass::PastCausal => LorlabCausalClass::PastCausal,
            CausalClass::Zero => LorlabCausalClass::Zero,
        }
    }
}

/// Model chart built from a config.
pub struct LorlabChart {
    chart: Arc<MetricChart>,
}

/// Causal graph on a grid over a chart.
pub struct LorlabGraph {
    graph: CausalGraph,
}

/// Parsed experiment config.
pub struct LorlabConfig {
    config: ExperimentConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &LabError) -> LorlabStatus {
    match e {
        LabError::Usage(_) => LorlabStatus::Usage,
        LabError::Domain(_) => LorlabStatus::Domain,
        LabError::Internal(_) => LorlabStatus::Internal,
        LabError::Config { .. } => LorlabStatus::Config,
        LabError::Io(_) => LorlabStatus::Io,
    }
}

enum Fail {
    Lab(LabError),
    Null(&'static str),
}

impl From<LabError> for Fail {
    fn from(e: LabError) -> Self {
        Fail::Lab(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LorlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LorlabStatus::Ok
        }
        Ok(Err(Fail::Lab(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            LorlabStatus::NullPointer
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            LorlabStatus::Panic
        }
    }
}

unsafe fn arr<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Lab(LabError::Usage(format!("{what} is not valid UTF-8"))))
}

fn dim_check(chart: &MetricChart, n: usize) -> Result<(), Fail> {
    if n != chart.dim() {
        return Err(Fail::Lab(LabError::Usage(format!("expected {} components, got {n}", chart.dim()))));
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lorlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`) and returns the full length
/// including the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lorlab_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let k = (bytes.len() - 1).min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, k);
            *buf.add(k) = 0;
        }
        bytes.len()
    })
}

/// Parses config text (`key = value` lines).
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lorlab_config_parse(text_ptr: *const c_char, out_config: *mut *mut LorlabConfig) -> LorlabStatus {
    guard(|| {
        let s = text(text_ptr, "text")?;
        let slot = out(out_config, "out")?;
        let config = ExperimentConfig::parse(s)?;
        *slot = Box::into_raw(Box::new(LorlabConfig { config }));
        Ok(())
    })
}

/// # Safety
/// `config` must come from `lorlab_config_parse` or be null.
#[no_mangle]
pub unsafe extern "C" fn lorlab_config_free(config: *mut LorlabConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Builds the model chart named in a config; `grid.lo`/`grid.hi` set the box.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lorlab_chart_from_config(config: *const LorlabConfig, out_chart: *mut *mut LorlabChart) -> LorlabStatus {
    guard(|| {
        let cfg = &handle(config, "config")?.config;
        let slot = out(out_chart, "out")?;
        let mut chart = cfg.model.build()?;
        if let (Some(lo), Some(hi)) = (&cfg.grid_lo, &cfg.grid_hi) {
            chart = chart.with_box(lo.clone(), hi.clone())?;
        }
        *slot = Box::into_raw(Box::new(LorlabChart { chart: Arc::new(chart) }));
        Ok(())
    })
}

/// # Safety
/// `chart` must come from `lorlab_chart_from_config` or be null.
#[no_mangle]
pub unsafe extern "C" fn lorlab_chart_free(chart: *mut LorlabChart) {
    if !chart.is_null() {
        drop(Box::from_raw(chart));
    }
}

/// Chart dimension, or 0 for a null handle.
///
/// # Safety
/// `chart` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn lorlab_chart_dim(chart: *const LorlabChart) -> usize {
    chart.as_ref().map_or(0, |c| c.chart.dim())
}

/// Causal class of `v` at `x`.
///
/// # Safety
/// `x` and `v` must point to `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lorlab_classify(
    chart: *const LorlabChart,
    x: *const f64,
    v: *const f64,
    n: usize,
    out_class: *mut LorlabCausalClass,
) -> LorlabStatus {
    guard(|| {
        let c = &handle(chart, "chart")?.chart;
        dim_check(c, n)?;
        let (x, v) = (arr(x, n, "x")?, arr(v, n, "v")?);
        let slot = out(out_class, "out")?;
        let g = c.metric_at(x)?;
        *slot = classify(&TangentVector::new(v), &g)?.into();
        Ok(())
    })
}

/// Finsler norm of `v` at `x`: `sqrt(g(v,v))` on the future cone, `-∞` off it.
///
/// # Safety
/// `x` and `v` must point to `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lorlab_f_norm(
    chart: *const LorlabChart,
    x: *const f64,
    v: *const f64,
    n: usize,
    out_norm: *mut LorlabExtReal,
) -> LorlabStatus {
    guard(|| {
        let c = &handle(chart, "chart")?.chart;
        dim_check(c, n)?;
        let (x, v) = (arr(x, n, "x")?, arr(v, n, "v")?);
        let slot = out(out_norm, "out")?;
        let g = c.metric_at(x)?;
        *slot = f_norm(&TangentVector::new(v), &g)?.into();
        Ok(())
    })
}

/// Hessian of the Hamiltonian at covector `w` for exponent `p`: the
/// row-major `n*n` matrix and its ascending eigenvalues.
///
/// # Safety
/// `x` and `w` must point to `n` doubles, `out_matrix` to `n*n` and
/// `out_eigenvalues` to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lorlab_hamiltonian_hessian(
    chart: *const LorlabChart,
    x: *const f64,
    w: *const f64,
    n: usize,
    p: f64,
    out_matrix: *mut f64,
    out_eigenvalues: *mut f64,
) -> LorlabStatus {
    guard(|| {
        let c = &handle(chart, "chart")?.chart;
        dim_check(c, n)?;
        let (x, w) = (arr(x, n, "x")?, arr(w, n, "w")?);
        if out_matrix.is_null() || out_eigenvalues.is_null() {
            return Err(Fail::Null("out"));
        }
        let g = c.metric_at(x)?;
        let h = hamiltonian_hessian(&Covector::new(w), PExponent::new(p)?, &g)?;
        let m = slice::from_raw_parts_mut(out_matrix, n * n);
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = h.matrix[(i, j)];
            }
        }
        slice::from_raw_parts_mut(out_eigenvalues, n).copy_from_slice(&h.eigenvalues);
        Ok(())
    })
}

/// Euclidean residual of the Legendre round trip at timelike `v`.
///
/// # Safety
/// `x` and `v` must point to `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lorlab_legendre_residual(
    chart: *const LorlabChart,
    x: *const f64,
    v: *const f64,
    n: usize,
    p: f64,
    out_residual: *mut f64,
) -> LorlabStatus {
    guard(|| {
        let c = &handle(chart, "chart")?.chart;
        dim_check(c, n)?;
        let (x, v) = (arr(x, n, "x")?, arr(v, n, "v")?);
        let slot = out(out_residual, "out")?;
        let g = c.metric_at(x)?;
        *slot = legendre_check(&TangentVector::new(v), PExponent::new(p)?, &g)?.residual;
        Ok(())
    })
}

/// Ricci tensor (row-major `n*n`) and scalar curvature at `x`, from the
/// closed-form metric derivatives when the model has them and from
/// Richardson-extrapolated differences otherwise.
///
/// # Safety
/// `x` must point to `n` doubles, `out_ricci` to `n*n` writable doubles and
/// `out_scalar` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lorlab_curvature(
    chart: *const LorlabChart,
    x: *const f64,
    n: usize,
    out_ricci: *mut f64,
    out_scalar: *mut f64,
) -> LorlabStatus {
    guard(|| {
        let c = &handle(chart, "chart")?.chart;
        dim_check(c, n)?;
        let x = arr(x, n, "x")?;
        if out_ricci.is_null() {
            return Err(Fail::Null("out_ricci"));
        }
        let scalar = out(out_scalar, "out_scalar")?;
        let rec = match c.analytic_curvature(x) {
            Some(r) => r,
            None => curvature_pack_richardson(c, x, default_step(c))?,
        };
        let m = slice::from_raw_parts_mut(out_ricci, n * n);
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = rec.ricci[i][j];
            }
        }
        *scalar = rec.scalar;
        Ok(())
    })
}

/// Causal graph on a `shape` grid over `[lo, hi]` with stencil `radius`.
///
/// # Safety
/// `shape`, `lo` and `hi` must point to `n` entries; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lorlab_graph_new(
    chart: *const LorlabChart,
    shape: *const usize,
    lo: *const f64,
    hi: *const f64,
    n: usize,
    radius: usize,
    out_graph: *mut *mut LorlabGraph,
) -> LorlabStatus {
    guard(|| {
        let c = &handle(chart, "chart")?.chart;
        dim_check(c, n)?;
        if shape.is_null() {
            return Err(Fail::Null("shape"));
        }
        let shape = slice::from_raw_parts(shape, n);
        let (lo, hi) = (arr(lo, n, "lo")?, arr(hi, n, "hi")?);
        let slot = out(out_graph, "out")?;
        let grid = Grid::over(c.clone(), lo, hi, shape)?;
        let graph = build_causal_graph(Arc::new(grid), radius)?;
        *slot = Box::into_raw(Box::new(LorlabGraph { graph }));
        Ok(())
    })
}

/// # Safety
/// `graph` must come from `lorlab_graph_new` or be null.
#[no_mangle]
pub unsafe extern "C" fn lorlab_graph_free(graph: *mut LorlabGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Time separation `ℓ(x, y)` from the grid longest path refined with
/// q-action exponent `q`. `out_grid` may be null.
///
/// # Safety
/// `x` and `y` must point to `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lorlab_time_separation(
    graph: *const LorlabGraph,
    x: *const f64,
    y: *const f64,
    n: usize,
    q: f64,
    out_value: *mut LorlabExtReal,
    out_grid: *mut LorlabExtReal,
) -> LorlabStatus {
    guard(|| {
        let g = &handle(graph, "graph")?.graph;
        dim_check(g.grid().chart(), n)?;
        let (x, y) = (arr(x, n, "x")?, arr(y, n, "y")?);
        let slot = out(out_value, "out")?;
        let r = time_separation(g, x, y, q)?;
        *slot = r.refined_value.into();
        if let Some(s) = out_grid.as_mut() {
            *s = r.value.into();
        }
        Ok(())
    })
}

/// Runs an experiment and returns its JSON report (free it with
/// `lorlab_string_free`) and the exit code the command-line tool would use.
/// `experiment` may be null to use the one named in the config. A run that
/// completes with failing checks still returns `Ok`.
///
/// # Safety
/// `config` must be a live handle, `experiment` null or NUL-terminated, and
/// both out pointers valid.
#[no_mangle]
pub unsafe extern "C" fn lorlab_run_experiment(
    config: *const LorlabConfig,
    experiment: *const c_char,
    out_report: *mut *mut c_char,
    out_exit_code: *mut i32,
) -> LorlabStatus {
    guard(|| {
        let cfg = &handle(config, "config")?.config;
        let report = out(out_report, "out_report")?;
        let code = out(out_exit_code, "out_exit_code")?;
        let exp = if experiment.is_null() {
            cfg.experiment.ok_or_else(|| LabError::Usage("config names no experiment".into()))?
        } else {
            text(experiment, "experiment")?.parse::<Experiment>().map_err(LabError::Usage)?
        };
        let outcome = run_experiment(cfg, exp);
        *code = outcome.exit_code;
        *report = CString::new(outcome.report.to_json()).map_err(|_| LabError::Internal("report contains NUL".into()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn lorlab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
