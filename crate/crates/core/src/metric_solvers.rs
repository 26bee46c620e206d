//! Closed-form adversarial metrics `M*(γ) = argmax_M ⟨V, M⟩ − Ω(M)`.
//!
//! Three regularizers are supported:
//!
//! * **p-norm**, `‖M‖_p ≤ 1` with `p = 2k/(2k−1)`:
//!   `M* = ‖V‖_{2k}^{1−2k} V^{∘(2k−1)}` and `f = ‖V‖_{2k}` (entrywise norms).
//! * **KL** to a prior `M0`: `M* = M0 ⊙ exp∘(V/λ)` and `f = λ 1ᵀ(M* − M0)1`.
//! * **Doubly stochastic** KL: `M* = D (M0 ⊙ exp∘(V/λ)) D` with `D` from a
//!   symmetric Sinkhorn scaling, and `f = ⟨V, M*⟩ − λ KL(M*, M0)`.
//!
//! Here `KL(A, B) = Σ A ln(A/B) − A + B` with `0 ln 0 = 0`.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::measures::DisplacementMoment;
use crate::sinkhorn::symmetric_scaling;

/// Largest exponent argument accepted before reporting overflow.
pub const MAX_EXP_ARG: f64 = 700.0;

/// Default regularization weight for the KL and doubly-stochastic families.
pub const DEFAULT_LAMBDA_M: f64 = 1.0;

/// Prior metric `M0` for the KL-type families.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    /// `I`.
    Identity,
    /// `(I + 11ᵀ)/(n+1)`: PSD, entrywise positive and doubly stochastic.
    Mixed,
    /// A user-supplied symmetric matrix.
    Explicit(Array2<f64>),
}

impl Prior {
    /// The prior as an `n × n` matrix.
    pub fn resolve(&self, n: usize) -> Result<Array2<f64>> {
        match self {
            Prior::Identity => Ok(Array2::eye(n)),
            Prior::Mixed => Ok((Array2::eye(n) + 1.0) / (n as f64 + 1.0)),
            Prior::Explicit(m) => {
                if m.dim() != (n, n) {
                    return Err(Error::ModeMismatch {
                        expected: n,
                        found: m.nrows(),
                    });
                }
                Ok(m.clone())
            }
        }
    }
}

/// Regularizer family and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricSolverConfig {
    PNorm {
        k: u32,
    },
    Kl {
        prior: Prior,
        lambda_m: f64,
    },
    Ds {
        prior: Prior,
        lambda_m: f64,
        sinkhorn_tol: f64,
        sinkhorn_max_iter: usize,
    },
}

impl MetricSolverConfig {
    pub fn pnorm(k: u32) -> Self {
        MetricSolverConfig::PNorm { k }
    }

    /// KL family with the identity prior.
    pub fn kl(lambda_m: f64) -> Self {
        MetricSolverConfig::Kl {
            prior: Prior::Identity,
            lambda_m,
        }
    }

    /// Doubly-stochastic family with the [`Prior::Mixed`] prior and default
    /// scaling tolerances.
    pub fn ds(lambda_m: f64) -> Self {
        MetricSolverConfig::Ds {
            prior: Prior::Mixed,
            lambda_m,
            sinkhorn_tol: 1e-8,
            sinkhorn_max_iter: 10_000,
        }
    }

    pub fn family(&self) -> Family {
        match self {
            MetricSolverConfig::PNorm { .. } => Family::PNorm,
            MetricSolverConfig::Kl { .. } => Family::Kl,
            MetricSolverConfig::Ds { .. } => Family::Ds,
        }
    }
}

impl Default for MetricSolverConfig {
    fn default() -> Self {
        MetricSolverConfig::pnorm(1)
    }
}

/// Tag identifying which closed form produced an [`AdversarialMetric`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    PNorm,
    Kl,
    Ds,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::PNorm => "pnorm",
            Family::Kl => "kl",
            Family::Ds => "ds",
        }
    }
}

/// Maximizing metric together with the attained objective `f(γ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialMetric {
    pub matrix: Array2<f64>,
    pub family: Family,
    pub value: f64,
    /// Row-sum residual of the symmetric scaling (doubly-stochastic family only).
    pub scaling_residual: Option<f64>,
}

fn check_moment(v: &DisplacementMoment) -> Result<()> {
    if v.matrix().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("displacement moment"));
    }
    Ok(())
}

fn check_lambda(lambda_m: f64) -> Result<()> {
    if !(lambda_m > 0.0) || !lambda_m.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "lambda_m must be positive, got {lambda_m}"
        )));
    }
    Ok(())
}

fn check_prior(m0: ArrayView2<'_, f64>, n: usize, strictly_positive: bool) -> Result<()> {
    if m0.dim() != (n, n) {
        return Err(Error::ModeMismatch {
            expected: n,
            found: m0.nrows(),
        });
    }
    if m0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("prior metric"));
    }
    if let Some(&x) = m0.iter().find(|&&x| x < 0.0 || (strictly_positive && x == 0.0)) {
        let need = if strictly_positive { "positive" } else { "nonnegative" };
        return Err(Error::InvalidParameter(format!(
            "prior metric must be entrywise {need}, found {x}"
        )));
    }
    for i in 0..n {
        for j in 0..i {
            if (m0[[i, j]] - m0[[j, i]]).abs() > 1e-12 {
                return Err(Error::InvalidParameter("prior metric must be symmetric".into()));
            }
        }
    }
    Ok(())
}

/// p-norm adversary with `p = 2k/(2k−1)`; `V = 0` gives the zero metric.
pub fn pnorm_metric(v: &DisplacementMoment, k: u32) -> Result<AdversarialMetric> {
    check_moment(v)?;
    if k == 0 {
        return Err(Error::InvalidParameter("p-norm k must be >= 1".into()));
    }
    let n = v.dim();
    let mx = v.matrix().iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
    if mx == 0.0 {
        return Ok(AdversarialMetric {
            matrix: Array2::zeros((n, n)),
            family: Family::PNorm,
            value: 0.0,
            scaling_residual: None,
        });
    }
    let two_k = 2 * k as i32;
    let w = v.matrix().mapv(|x| x / mx);
    let s: f64 = w.iter().map(|x| x.powi(two_k)).sum();
    let denom = s.powf((two_k - 1) as f64 / two_k as f64);
    let matrix = w.mapv(|x| x.powi(two_k - 1) / denom);
    Ok(AdversarialMetric {
        matrix,
        family: Family::PNorm,
        value: mx * s.powf(1.0 / two_k as f64),
        scaling_residual: None,
    })
}

/// Validated `V/λ` on the support of `M0`; zero elsewhere.
fn exponent_arguments(v: ArrayView2<'_, f64>, m0: ArrayView2<'_, f64>, lambda_m: f64) -> Result<Array2<f64>> {
    let mut arg = Array2::zeros(v.dim());
    for ((a, &x), &prior) in arg.iter_mut().zip(v.iter()).zip(m0.iter()) {
        if prior == 0.0 {
            continue;
        }
        let t = x / lambda_m;
        if t.abs() > MAX_EXP_ARG {
            return Err(Error::Overflow { argument: t });
        }
        *a = t;
    }
    Ok(arg)
}

/// KL adversary `M* = M0 ⊙ exp∘(V/λ)`.
pub fn kl_metric(v: &DisplacementMoment, m0: ArrayView2<'_, f64>, lambda_m: f64) -> Result<AdversarialMetric> {
    check_moment(v)?;
    check_lambda(lambda_m)?;
    check_prior(m0, v.dim(), false)?;
    let arg = exponent_arguments(v.matrix(), m0, lambda_m)?;
    let mut matrix = Array2::zeros(m0.dim());
    let mut excess = 0.0;
    for ((out, &a), &prior) in matrix.iter_mut().zip(arg.iter()).zip(m0.iter()) {
        if prior != 0.0 {
            *out = prior * a.exp();
            excess += prior * a.exp_m1();
        }
    }
    Ok(AdversarialMetric {
        matrix,
        family: Family::Kl,
        value: lambda_m * excess,
        scaling_residual: None,
    })
}

/// Doubly-stochastic adversary `M* = D (M0 ⊙ exp∘(V/λ)) D`.
pub fn ds_metric(
    v: &DisplacementMoment,
    m0: ArrayView2<'_, f64>,
    lambda_m: f64,
    sinkhorn_tol: f64,
    sinkhorn_max_iter: usize,
) -> Result<AdversarialMetric> {
    check_moment(v)?;
    check_lambda(lambda_m)?;
    check_prior(m0, v.dim(), true)?;
    let arg = exponent_arguments(v.matrix(), m0, lambda_m)?;
    // Factor out the largest argument so the kernel stays <= max(M0).
    let shift = arg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kernel = Array2::from_shape_fn(m0.dim(), |(i, j)| m0[[i, j]] * (arg[[i, j]] - shift).exp());
    let scaling = symmetric_scaling(kernel.view(), sinkhorn_tol, sinkhorn_max_iter)?;
    let d = &scaling.scaling;
    let n = v.dim();
    let mut matrix = Array2::zeros((n, n));
    let mut linear = 0.0;
    let mut divergence = 0.0;
    for i in 0..n {
        for j in 0..n {
            let m = d[i] * kernel[[i, j]] * d[j];
            matrix[[i, j]] = m;
            linear += v.matrix()[[i, j]] * m;
            let log_ratio = d[i].ln() + d[j].ln() + arg[[i, j]] - shift;
            divergence += m * log_ratio - m + m0[[i, j]];
        }
    }
    Ok(AdversarialMetric {
        matrix,
        family: Family::Ds,
        value: linear - lambda_m * divergence,
        scaling_residual: Some(scaling.residual),
    })
}

/// `(f(γ), M*(γ))` for the configured family.
pub fn adversarial_value(v: &DisplacementMoment, config: &MetricSolverConfig) -> Result<AdversarialMetric> {
    match config {
        MetricSolverConfig::PNorm { k } => pnorm_metric(v, *k),
        MetricSolverConfig::Kl { prior, lambda_m } => {
            let m0 = prior.resolve(v.dim())?;
            kl_metric(v, m0.view(), *lambda_m)
        }
        MetricSolverConfig::Ds {
            prior,
            lambda_m,
            sinkhorn_tol,
            sinkhorn_max_iter,
        } => {
            let m0 = prior.resolve(v.dim())?;
            ds_metric(v, m0.view(), *lambda_m, *sinkhorn_tol, *sinkhorn_max_iter)
        }
    }
}

/// Feature weights `softmax(diag(V)/λ)` of the diagonal KL adversary
/// restricted to the simplex.
pub fn feature_weights(v: &DisplacementMoment, lambda_m: f64) -> Result<Array1<f64>> {
    check_lambda(lambda_m)?;
    let diag = v.matrix().diag().to_owned();
    if diag.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("moment diagonal"));
    }
    let mx = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = diag.mapv(|x| ((x - mx) / lambda_m).exp());
    let total = e.sum();
    Ok(e / total)
}

/// Simplex feature-selection objective `λ (ln Σ_i exp(v_i/λ) − (d−1))`.
pub fn feature_selection_objective(v: &DisplacementMoment, lambda_m: f64) -> Result<f64> {
    check_lambda(lambda_m)?;
    let diag = v.matrix().diag().to_owned();
    if diag.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("moment diagonal"));
    }
    let mx = diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx / lambda_m + diag.iter().map(|x| ((x - mx) / lambda_m).exp()).sum::<f64>().ln();
    Ok(lambda_m * (lse - (diag.len() as f64 - 1.0)))
}
