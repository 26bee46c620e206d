//! Robust OT loss between a predicted label distribution and a target.
//!
//! For a prediction `h` and a normalized target `ŷ` over `L` labels with
//! ground embeddings `l_p`, the loss is
//!
//! ```text
//! ℓ(h, ŷ) = min_{γ ∈ Π(h, ŷ)} f(γ) + λγ Σ γ ln γ
//! f(γ)    = max_M ⟨V(γ), M⟩ − Ω(M),   V(γ) = Σ_pq γ_pq (l_p − l_q)(l_p − l_q)ᵀ
//! ```
//!
//! and its gradient with respect to `h`, projected onto the simplex tangent
//! space, is `A1/L − (1ᵀA1/L²)1` with `A = C* + λγ(ln γ* + 11ᵀ)` and
//! `C*_pq = (l_p − l_q)ᵀ M* (l_p − l_q)`.
//!
//! The minimization runs Frank–Wolfe from `h ŷᵀ` whose oracle is an entropic
//! OT solve of `C*(γ_t)` at weight `λβ`. With `λβ = λγ` its fixed point is the
//! exact minimizer; with a single iteration it reduces to
//! `γ* = Sinkhorn_λβ(C*(h ŷᵀ))`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::frank_wolfe::{run_frank_wolfe, FwSettings, ObjectivePower};
use crate::measures::{neg_entropy, Displacements, FeatureGrouping, TransportPlan};
use crate::metric_solvers::{AdversarialMetric, MetricSolverConfig};
use crate::sinkhorn::{check_probability, SinkhornConfig};

/// Tolerance on the unit norm of label embeddings.
pub const UNIT_NORM_TOL: f64 = 1e-10;

/// Plan entries at or below this are skipped when assembling `V(γ)`.
pub const PLAN_SKIP_BELOW: f64 = 1e-15;

/// Label embeddings with precomputed pairwise displacement data.
#[derive(Debug, Clone)]
pub struct LabelSpace {
    embeddings: Array2<f64>,
    grouping: Option<FeatureGrouping>,
    displacements: Displacements,
}

impl LabelSpace {
    /// Requires every row to have unit 2-norm.
    pub fn new(embeddings: Array2<f64>, grouping: Option<FeatureGrouping>) -> Result<Self> {
        let (l, d) = embeddings.dim();
        if l == 0 {
            return Err(Error::EmptyMeasure);
        }
        if embeddings.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("label embeddings"));
        }
        for (p, row) in embeddings.outer_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::InvalidParameter(format!(
                    "embedding of label {p} has norm {norm}, expected 1"
                )));
            }
        }
        let displacements = match &grouping {
            Some(g) => {
                if g.dim() != d {
                    return Err(Error::DimensionMismatch {
                        context: "grouping vs embedding dimension",
                        expected: d,
                        found: g.dim(),
                    });
                }
                Displacements::grouped(embeddings.view(), embeddings.view(), g, true)?
            }
            None => Displacements::full(embeddings.view(), embeddings.view(), true)?,
        };
        Ok(Self {
            embeddings,
            grouping,
            displacements,
        })
    }

    /// Rescales every row to unit norm first.
    pub fn normalized(mut embeddings: Array2<f64>, grouping: Option<FeatureGrouping>) -> Result<Self> {
        for (p, mut row) in embeddings.outer_iter_mut().enumerate() {
            let norm = row.dot(&row).sqrt();
            if !(norm > 0.0) {
                return Err(Error::InvalidParameter(format!("embedding of label {p} has zero norm")));
            }
            row /= norm;
        }
        Self::new(embeddings, grouping)
    }

    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn embeddings(&self) -> ArrayView2<'_, f64> {
        self.embeddings.view()
    }

    pub fn grouping(&self) -> Option<&FeatureGrouping> {
        self.grouping.as_ref()
    }

    /// `‖l_p − l_q‖²` for every pair.
    pub fn squared_distances(&self) -> Array2<f64> {
        let l = self.len();
        Array2::from_shape_fn((l, l), |(p, q)| {
            let a = self.embeddings.row(p);
            let b = self.embeddings.row(q);
            a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
        })
    }

    /// `C_pq = (l_p − l_q)ᵀ M (l_p − l_q)`, grouped when a grouping is set.
    pub fn ground_cost(&self, metric: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.displacements.cost(metric)
    }
}

/// Settings for [`rot_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct RotLossConfig {
    pub metric: MetricSolverConfig,
    /// Weight of the entropy term.
    pub lambda_gamma: f64,
    /// Frank–Wolfe iterations per evaluation.
    pub fw_iters: usize,
    /// Oracle solver; its `lambda_beta` is the oracle's entropic weight.
    pub sinkhorn: SinkhornConfig,
    /// Weight of the uniform component mixed into targets.
    pub target_smoothing_alpha: f64,
}

impl Default for RotLossConfig {
    fn default() -> Self {
        Self {
            metric: MetricSolverConfig::default(),
            lambda_gamma: 0.02,
            fw_iters: 1,
            sinkhorn: SinkhornConfig::default(),
            target_smoothing_alpha: 1e-3,
        }
    }
}

impl RotLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_gamma > 0.0) || !self.lambda_gamma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda_gamma must be positive, got {}",
                self.lambda_gamma
            )));
        }
        if self.fw_iters == 0 {
            return Err(Error::InvalidParameter("fw_iters must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.target_smoothing_alpha) {
            return Err(Error::InvalidParameter(format!(
                "target smoothing must lie in [0, 1), got {}",
                self.target_smoothing_alpha
            )));
        }
        self.sinkhorn.validate()
    }
}

/// Output of [`rot_loss`].
#[derive(Debug, Clone)]
pub struct LossOutput {
    /// `f(γ*) + λγ Σ γ* ln γ*`.
    pub value: f64,
    /// `f(γ*)` alone.
    pub transport_cost: f64,
    pub plan: TransportPlan,
    pub metric: AdversarialMetric,
}

/// `(1 − α) y / (yᵀ1) + α / L`.
pub fn smooth_target(y: ArrayView1<'_, f64>, alpha: f64) -> Result<Array1<f64>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "target smoothing must lie in [0, 1), got {alpha}"
        )));
    }
    if y.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("label vector"));
    }
    if let Some((index, &value)) = y.iter().enumerate().find(|(_, &x)| x < 0.0) {
        return Err(Error::NegativeWeight { index, value });
    }
    let total = y.sum();
    if total <= 0.0 {
        return Err(Error::InvalidParameter("label vector has no positive entry".into()));
    }
    let uniform = alpha / y.len() as f64;
    Ok(y.mapv(|v| (1.0 - alpha) * v / total + uniform))
}

fn check_inputs(h: ArrayView1<'_, f64>, y_hat: ArrayView1<'_, f64>, labels: &LabelSpace) -> Result<()> {
    for (v, context) in [(h, "prediction length"), (y_hat, "target length")] {
        if v.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                context,
                expected: labels.len(),
                found: v.len(),
            });
        }
    }
    check_probability(h, "prediction")?;
    check_probability(y_hat, "target")
}

/// Regularized robust OT loss between `h` and `y_hat`.
pub fn rot_loss(
    h: ArrayView1<'_, f64>,
    y_hat: ArrayView1<'_, f64>,
    labels: &LabelSpace,
    cfg: &RotLossConfig,
) -> Result<LossOutput> {
    cfg.validate()?;
    check_inputs(h, y_hat, labels)?;
    let run = run_frank_wolfe(
        &labels.displacements,
        h,
        y_hat,
        &FwSettings {
            metric: &cfg.metric,
            sinkhorn: &cfg.sinkhorn,
            max_iter: cfg.fw_iters,
            gap_tol: f64::NEG_INFINITY,
            power: ObjectivePower::Norm,
            skip_below: PLAN_SKIP_BELOW,
        },
    )?;
    let transport_cost = run.metric.value;
    let value = transport_cost + cfg.lambda_gamma * neg_entropy(run.plan.view());
    Ok(LossOutput {
        value,
        transport_cost,
        plan: TransportPlan::from_matrix_unchecked(run.plan),
        metric: run.metric,
    })
}

/// `A1/L − (1ᵀA1/L²)1`: row means of `A` minus their average.
pub fn simplex_tangent_gradient(a: ArrayView2<'_, f64>) -> Array1<f64> {
    let l = a.nrows() as f64;
    let rows = a.sum_axis(Axis(1)) / l;
    let mean = rows.sum() / l;
    rows - mean
}

/// Tangent gradient for an entropic OT value with ground cost `cost`, plan
/// `plan` and entropy weight `entropy_weight`.
pub fn loss_gradient_from_plan(
    cost: ArrayView2<'_, f64>,
    plan: ArrayView2<'_, f64>,
    entropy_weight: f64,
) -> Result<Array1<f64>> {
    if cost.dim() != plan.dim() {
        return Err(Error::DimensionMismatch {
            context: "ground cost vs plan",
            expected: plan.nrows(),
            found: cost.nrows(),
        });
    }
    if plan.iter().any(|&g| !(g > 0.0)) {
        return Err(Error::UndefinedGradient);
    }
    let a = Array2::from_shape_fn(plan.dim(), |(p, q)| {
        cost[[p, q]] + entropy_weight * (plan[[p, q]].ln() + 1.0)
    });
    Ok(simplex_tangent_gradient(a.view()))
}

/// Loss value and its tangent gradient with respect to `h`.
///
/// The entropy term of the gradient uses the LMO weight `λβ`, the weight the
/// returned plan is stationary for; with `λβ = λγ` this is the exact gradient
/// of the loss.
pub fn rot_loss_with_gradient(
    h: ArrayView1<'_, f64>,
    y_hat: ArrayView1<'_, f64>,
    labels: &LabelSpace,
    cfg: &RotLossConfig,
) -> Result<(LossOutput, Array1<f64>)> {
    let out = rot_loss(h, y_hat, labels, cfg)?;
    let cost = labels.ground_cost(out.metric.matrix.view())?;
    let grad = loss_gradient_from_plan(cost.view(), out.plan.matrix(), cfg.sinkhorn.lambda_beta)?;
    Ok((out, grad))
}

/// Tangent gradient of [`rot_loss`] with respect to `h`.
pub fn rot_loss_gradient(
    h: ArrayView1<'_, f64>,
    y_hat: ArrayView1<'_, f64>,
    labels: &LabelSpace,
    cfg: &RotLossConfig,
) -> Result<Array1<f64>> {
    rot_loss_with_gradient(h, y_hat, labels, cfg).map(|(_, g)| g)
}
