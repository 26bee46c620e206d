//! C ABI over `robust-ot`.
//!
//! Every fallible function returns a [`RotStatus`]; on failure the message is
//! available from [`rot_last_error`] on the same thread. Measures and models
//! are opaque handles released with their `_free` function. Panics never
//! cross the boundary: they are reported as [`RotStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ndarray::{Array1, Array2, ArrayView2};
use robust_ot::classifier::{predict, SoftmaxModel};
use robust_ot::data_io::make_grouping;
use robust_ot::frank_wolfe::{rot_distance as rot_distance_impl, w22_transport, FwConfig};
use robust_ot::measures::DiscreteMeasure;
use robust_ot::metric_solvers::MetricSolverConfig;
use robust_ot::sinkhorn::SinkhornConfig;
use robust_ot::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NotConverged = 4,
    Diverged = 5,
    Io = 6,
    Parse = 7,
    Numerical = 8,
    Panic = 9,
}

/// Ground-metric family for [`rot_distance`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotFamily {
    Pnorm = 0,
    Kl = 1,
    Ds = 2,
    /// Squared Euclidean cost; no adversarial metric.
    W22 = 3,
}

/// Solver settings for [`rot_distance`]. Start from
/// [`rot_distance_config_default`] and override fields.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RotDistanceConfig {
    pub family: RotFamily,
    /// Schatten exponent for the p-norm family.
    pub k: u32,
    /// Regularization weight for the KL and DS families.
    pub lambda_m: f64,
    /// Entropic weight of the Sinkhorn step.
    pub lambda_beta: f64,
    pub sinkhorn_iters: u32,
    /// Sinkhorn early-stop tolerance; 0 runs every sweep.
    pub sinkhorn_tol: f64,
    pub fw_iters: u32,
    pub gap_tol: f64,
    /// Number of feature groups; 0 disables grouping.
    pub groups: u32,
    pub seed: u64,
}

/// Output of [`rot_distance`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RotDistanceResult {
    pub value: f64,
    /// Final Frank–Wolfe gap; NaN for [`RotFamily::W22`].
    pub gap: f64,
    /// Frank–Wolfe iterations, or Sinkhorn sweeps for [`RotFamily::W22`].
    pub iterations: u32,
    /// Largest deviation of the plan's marginals from the measure weights.
    pub marginal_residual: f64,
}

/// Opaque discrete measure.
pub struct RotMeasure(DiscreteMeasure);

/// Opaque softmax classifier.
pub struct RotModel(SoftmaxModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn status_of(err: &Error) -> RotStatus {
    match err {
        Error::DimensionMismatch { .. } | Error::ModeMismatch { .. } => RotStatus::DimensionMismatch,
        Error::NotConverged { .. } => RotStatus::NotConverged,
        Error::Diverged { .. } => RotStatus::Diverged,
        Error::Io { .. } => RotStatus::Io,
        Error::Parse { .. } | Error::Format { .. } => RotStatus::Parse,
        Error::Overflow { .. } | Error::NonFinite(_) | Error::UndefinedGradient | Error::UndefinedMetric(_) => {
            RotStatus::Numerical
        }
        _ => RotStatus::InvalidArgument,
    }
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> RotStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => RotStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("null pointer: {what}"));
            RotStatus::NullPointer
        }
        Ok(Err(Failure::Invalid(message))) => {
            set_last_error(message);
            RotStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic".into());
            RotStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(())
    }
}

/// Message for the last failed call on this thread, or null if none failed.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rot_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Builds a measure from `n` row-major points of dimension `d`. A null
/// `weights` gives uniform weights; otherwise `n` nonnegative weights are
/// normalized to unit mass.
///
/// # Safety
/// `points` must hold `n * d` doubles, `weights` (if non-null) `n` doubles,
/// and `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn rot_measure_new(
    points: *const f64,
    weights: *const f64,
    n: usize,
    d: usize,
    out: *mut *mut RotMeasure,
) -> RotStatus {
    guard(|| {
        non_null(points, "points")?;
        non_null(out, "out")?;
        let len = n
            .checked_mul(d)
            .ok_or_else(|| Failure::Invalid(format!("{n} x {d} overflows")))?;
        let raw = std::slice::from_raw_parts(points, len);
        let pts = Array2::from_shape_vec((n, d), raw.to_vec()).expect("length is n * d");
        let measure = if weights.is_null() {
            DiscreteMeasure::uniform(pts)?
        } else {
            let w = Array1::from(std::slice::from_raw_parts(weights, n).to_vec());
            DiscreteMeasure::new(pts, w)?
        };
        *out = Box::into_raw(Box::new(RotMeasure(measure)));
        Ok(())
    })
}

/// Number of support points of `measure`, or 0 for null.
///
/// # Safety
/// `measure` must be null or a live handle from [`rot_measure_new`].
#[no_mangle]
pub unsafe extern "C" fn rot_measure_len(measure: *const RotMeasure) -> usize {
    measure.as_ref().map_or(0, |m| m.0.len())
}

/// Releases a measure. Null is ignored.
///
/// # Safety
/// `measure` must be null or a live handle from [`rot_measure_new`], not
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rot_measure_free(measure: *mut RotMeasure) {
    if !measure.is_null() {
        drop(Box::from_raw(measure));
    }
}

/// Defaults: p-norm with k = 1, λ_M = 1, λβ = 0.2, 1000 Sinkhorn sweeps at
/// tol 1e-10, 200 Frank–Wolfe iterations with gap tol 1e-6, no grouping.
#[no_mangle]
pub extern "C" fn rot_distance_config_default() -> RotDistanceConfig {
    RotDistanceConfig {
        family: RotFamily::Pnorm,
        k: 1,
        lambda_m: 1.0,
        lambda_beta: 0.2,
        sinkhorn_iters: 1000,
        sinkhorn_tol: 1e-10,
        fw_iters: 200,
        gap_tol: 1e-6,
        groups: 0,
        seed: 0,
    }
}

/// Robust OT distance between two measures of equal dimension. If `plan` is
/// non-null the `len(src) * len(tgt)` row-major transport plan is written to it.
///
/// # Safety
/// `src` and `tgt` must be live measure handles, `config` and `result` valid
/// pointers, and `plan` null or writable for `len(src) * len(tgt)` doubles.
#[no_mangle]
pub unsafe extern "C" fn rot_distance(
    src: *const RotMeasure,
    tgt: *const RotMeasure,
    config: *const RotDistanceConfig,
    result: *mut RotDistanceResult,
    plan: *mut f64,
) -> RotStatus {
    guard(|| {
        non_null(src, "src")?;
        non_null(tgt, "tgt")?;
        non_null(config, "config")?;
        non_null(result, "result")?;
        let (src, tgt, cfg) = (&(*src).0, &(*tgt).0, *config);
        if src.dim() != tgt.dim() {
            return Err(Error::DimensionMismatch {
                context: "source vs target dimension",
                expected: src.dim(),
                found: tgt.dim(),
            }
            .into());
        }
        let sinkhorn = SinkhornConfig::new(cfg.lambda_beta, cfg.sinkhorn_iters as usize).with_tol(cfg.sinkhorn_tol);
        let metric = match cfg.family {
            RotFamily::Pnorm => Some(MetricSolverConfig::pnorm(cfg.k)),
            RotFamily::Kl => Some(MetricSolverConfig::kl(cfg.lambda_m)),
            RotFamily::Ds => Some(MetricSolverConfig::ds(cfg.lambda_m)),
            RotFamily::W22 => None,
        };
        let (out, matrix) = match metric {
            None => {
                let (value, solved) = w22_transport(src, tgt, &sinkhorn)?;
                let out = RotDistanceResult {
                    value,
                    gap: f64::NAN,
                    iterations: solved.iterations as u32,
                    marginal_residual: solved.residual,
                };
                (out, solved.plan.into_matrix())
            }
            Some(metric) => {
                let grouping = match cfg.groups {
                    0 => None,
                    r => Some(make_grouping(src.dim(), r as usize, cfg.seed)?),
                };
                let fw = FwConfig {
                    max_iter: cfg.fw_iters as usize,
                    gap_tol: cfg.gap_tol,
                    sinkhorn,
                    metric,
                    grouping,
                    ..FwConfig::default()
                };
                let solved = rot_distance_impl(src, tgt, &fw)?;
                let out = RotDistanceResult {
                    value: solved.value,
                    gap: solved.final_gap(),
                    iterations: solved.iterations_used as u32,
                    marginal_residual: solved.plan.marginal_residual(src.weights(), tgt.weights()),
                };
                (out, solved.plan.into_matrix())
            }
        };
        if !plan.is_null() {
            let dst = std::slice::from_raw_parts_mut(plan, matrix.len());
            for (d, &v) in dst.iter_mut().zip(matrix.iter()) {
                *d = v;
            }
        }
        *result = out;
        Ok(())
    })
}

/// Loads a model checkpoint written by `robust-ot train`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rot_model_load(path: *const c_char, out: *mut *mut RotModel) -> RotStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure::Invalid("path is not UTF-8".into()))?;
        let model = SoftmaxModel::load(path)?;
        *out = Box::into_raw(Box::new(RotModel(model)));
        Ok(())
    })
}

/// Writes the model's feature dimension and label count.
///
/// # Safety
/// `model` must be a live handle; `feature_dim` and `label_count` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn rot_model_dims(
    model: *const RotModel,
    feature_dim: *mut usize,
    label_count: *mut usize,
) -> RotStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(feature_dim, "feature_dim")?;
        non_null(label_count, "label_count")?;
        *feature_dim = (*model).0.feature_dim();
        *label_count = (*model).0.label_count();
        Ok(())
    })
}

/// Softmax predictions for `n` row-major instances with `m` features each;
/// writes `n * label_count` probabilities to `out`.
///
/// # Safety
/// `model` must be a live handle, `features` readable for `n * m` doubles and
/// `out` writable for `n * label_count` doubles.
#[no_mangle]
pub unsafe extern "C" fn rot_model_predict(
    model: *const RotModel,
    features: *const f64,
    n: usize,
    m: usize,
    out: *mut f64,
) -> RotStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(features, "features")?;
        non_null(out, "out")?;
        let len = n
            .checked_mul(m)
            .ok_or_else(|| Failure::Invalid(format!("{n} x {m} overflows")))?;
        let x = ArrayView2::from_shape((n, m), std::slice::from_raw_parts(features, len)).expect("length is n * m");
        let p = predict(&(*model).0, x)?;
        let dst = std::slice::from_raw_parts_mut(out, p.len());
        for (d, &v) in dst.iter_mut().zip(p.iter()) {
            *d = v;
        }
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a live handle from [`rot_model_load`], not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rot_model_free(model: *mut RotModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
