//! Frank–Wolfe minimization of `f(γ) = max_M ⟨V(γ), M⟩ − Ω(M)` over the
//! transport polytope.
//!
//! Each iteration evaluates the adversarial metric `M*(γ_t)`, uses the
//! Danskin gradient `∇f(γ)_ij = (s_i − t_j)ᵀ M* (s_i − t_j)` as the cost of an
//! entropic linear minimization oracle, and steps
//! `γ_{t+1} = (1 − θ) γ_t + θ β_t` with `θ = 2/(t+2)`.

use ndarray::{Array2, ArrayView1, Zip};

use crate::error::{Error, Result};
use crate::measures::{check_plan_shape, product_plan, DiscreteMeasure, Displacements, FeatureGrouping, TransportPlan};
use crate::metric_solvers::{adversarial_value, AdversarialMetric, MetricSolverConfig};
use crate::sinkhorn::{entropic_ot, EntropicPlan, SinkhornConfig};

/// Which power of the p-norm objective the gradient is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObjectivePower {
    /// `‖V‖_{2k}`.
    #[default]
    Norm,
    /// `‖V‖_{2k}^{2k}`: same minimizers, gradient scaled by `2k ‖V‖_{2k}^{2k−1}`.
    Norm2k,
}

/// Settings for [`rot_distance`].
#[derive(Debug, Clone, PartialEq)]
pub struct FwConfig {
    pub max_iter: usize,
    /// Stop once the Frank–Wolfe gap falls to this value.
    pub gap_tol: f64,
    pub sinkhorn: SinkhornConfig,
    pub metric: MetricSolverConfig,
    /// Restrict the metric to `B ⊗ I_d1` over these feature groups.
    pub grouping: Option<FeatureGrouping>,
    pub objective_power: ObjectivePower,
}

impl Default for FwConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            gap_tol: 1e-6,
            sinkhorn: SinkhornConfig::default(),
            metric: MetricSolverConfig::default(),
            grouping: None,
            objective_power: ObjectivePower::Norm,
        }
    }
}

/// Output of [`rot_distance`].
#[derive(Debug, Clone)]
pub struct RotResult {
    /// `f(γ*)`.
    pub value: f64,
    pub plan: TransportPlan,
    /// `M*(γ*)`, or `B*(γ*)` when grouped.
    pub metric: AdversarialMetric,
    /// Gap `⟨γ_t − β_t, ∇f(γ_t)⟩` for every oracle call.
    pub gap_history: Vec<f64>,
    /// `f(γ_t)` for every visited iterate, starting at `γ_0`.
    pub value_history: Vec<f64>,
    /// Number of Frank–Wolfe updates applied.
    pub iterations_used: usize,
    /// Marginal residual of the last oracle solution.
    pub lmo_residual: f64,
}

impl RotResult {
    /// Last recorded gap, or infinity if no oracle call was made.
    pub fn final_gap(&self) -> f64 {
        self.gap_history.last().copied().unwrap_or(f64::INFINITY)
    }
}

pub(crate) struct FwRun {
    pub plan: Array2<f64>,
    pub metric: AdversarialMetric,
    pub gap_history: Vec<f64>,
    pub value_history: Vec<f64>,
    pub iterations: usize,
    pub lmo_residual: f64,
}

pub(crate) struct FwSettings<'a> {
    pub metric: &'a MetricSolverConfig,
    pub sinkhorn: &'a SinkhornConfig,
    pub max_iter: usize,
    pub gap_tol: f64,
    pub power: ObjectivePower,
    /// Plan entries at or below this are ignored when assembling moments.
    pub skip_below: f64,
}

fn gradient_scale(metric_cfg: &MetricSolverConfig, power: ObjectivePower, value: f64) -> Result<f64> {
    match (power, metric_cfg) {
        (ObjectivePower::Norm, _) => Ok(1.0),
        (ObjectivePower::Norm2k, MetricSolverConfig::PNorm { k }) => {
            let two_k = 2 * *k as i32;
            Ok(two_k as f64 * value.powi(two_k - 1))
        }
        (ObjectivePower::Norm2k, _) => Err(Error::InvalidParameter(
            "objective power 2k applies to the p-norm family only".into(),
        )),
    }
}

/// Frank–Wolfe from the product coupling `p qᵀ`.
pub(crate) fn run_frank_wolfe(
    disp: &Displacements,
    p: ArrayView1<'_, f64>,
    q: ArrayView1<'_, f64>,
    settings: &FwSettings<'_>,
) -> Result<FwRun> {
    if settings.max_iter == 0 {
        return Err(Error::InvalidParameter("Frank-Wolfe max_iter must be >= 1".into()));
    }
    gradient_scale(settings.metric, settings.power, 1.0)?;
    let mut plan = product_plan(p, q).into_matrix();
    let mut gap_history = Vec::new();
    let mut value_history = Vec::new();
    let mut lmo_residual = 0.0;
    let mut t = 0;
    loop {
        let moment = disp.moment(plan.view(), settings.skip_below);
        let metric = adversarial_value(&moment, settings.metric)?;
        value_history.push(metric.value);
        if t == settings.max_iter {
            return Ok(FwRun {
                plan,
                metric,
                gap_history,
                value_history,
                iterations: t,
                lmo_residual,
            });
        }
        let mut grad = disp.cost(metric.matrix.view())?;
        let scale = gradient_scale(settings.metric, settings.power, metric.value)?;
        if scale != 1.0 {
            grad *= scale;
        }
        let EntropicPlan {
            plan: beta, residual, ..
        } = entropic_ot(grad.view(), p, q, settings.sinkhorn)?;
        lmo_residual = residual;
        let beta = beta.into_matrix();
        let mut gap = 0.0;
        Zip::from(&plan)
            .and(&beta)
            .and(&grad)
            .for_each(|&g, &b, &c| gap += (g - b) * c);
        gap_history.push(gap);
        if gap <= settings.gap_tol {
            return Ok(FwRun {
                plan,
                metric,
                gap_history,
                value_history,
                iterations: t,
                lmo_residual,
            });
        }
        let theta = 2.0 / (t as f64 + 2.0);
        Zip::from(&mut plan)
            .and(&beta)
            .for_each(|g, &b| *g = (1.0 - theta) * *g + theta * b);
        t += 1;
    }
}

fn displacements(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    grouping: Option<&FeatureGrouping>,
    cache: bool,
) -> Result<Displacements> {
    match grouping {
        Some(g) => Displacements::grouped(src.points(), tgt.points(), g, cache),
        None => Displacements::full(src.points(), tgt.points(), cache),
    }
}

/// `∇_γ f` entrywise: `(s_i − t_j)ᵀ M* (s_i − t_j)`, or
/// `⟨(S_i − T_j) B*, S_i − T_j⟩` with a grouping.
pub fn gradient_wrt_plan(
    plan: &TransportPlan,
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    metric: &AdversarialMetric,
    grouping: Option<&FeatureGrouping>,
) -> Result<Array2<f64>> {
    check_plan_shape(plan, src, tgt)?;
    displacements(src, tgt, grouping, false)?.cost(metric.matrix.view())
}

/// `f(γ)` and `M*(γ)` for a given plan.
pub fn rot_objective(
    plan: &TransportPlan,
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    metric: &MetricSolverConfig,
    grouping: Option<&FeatureGrouping>,
) -> Result<AdversarialMetric> {
    check_plan_shape(plan, src, tgt)?;
    let disp = displacements(src, tgt, grouping, false)?;
    adversarial_value(&disp.moment(plan.matrix(), 0.0), metric)
}

/// Robust OT distance `min_γ f(γ)` by Frank–Wolfe.
pub fn rot_distance(src: &DiscreteMeasure, tgt: &DiscreteMeasure, cfg: &FwConfig) -> Result<RotResult> {
    if !(cfg.gap_tol >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gap_tol must be nonnegative, got {}",
            cfg.gap_tol
        )));
    }
    let disp = displacements(src, tgt, cfg.grouping.as_ref(), true)?;
    let run = run_frank_wolfe(
        &disp,
        src.weights(),
        tgt.weights(),
        &FwSettings {
            metric: &cfg.metric,
            sinkhorn: &cfg.sinkhorn,
            max_iter: cfg.max_iter,
            gap_tol: cfg.gap_tol,
            power: cfg.objective_power,
            skip_below: 0.0,
        },
    )?;
    Ok(RotResult {
        value: run.metric.value,
        plan: TransportPlan::from_matrix_unchecked(run.plan),
        metric: run.metric,
        gap_history: run.gap_history,
        value_history: run.value_history,
        iterations_used: run.iterations,
        lmo_residual: run.lmo_residual,
    })
}

/// `W₂²` value and the entropic plan for the squared Euclidean cost.
pub fn w22_transport(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    cfg: &SinkhornConfig,
) -> Result<(f64, EntropicPlan)> {
    let disp = Displacements::full(src.points(), tgt.points(), false)?;
    let cost = disp.cost(Array2::eye(src.dim()).view())?;
    let out = entropic_ot(cost.view(), src.weights(), tgt.weights(), cfg)?;
    Ok((out.plan.cost(cost.view()), out))
}

/// `W₂²` as `⟨γ, C⟩` with `C_ij = ‖s_i − t_j‖²` and `γ` the entropic plan.
pub fn w22_distance(src: &DiscreteMeasure, tgt: &DiscreteMeasure, cfg: &SinkhornConfig) -> Result<f64> {
    w22_transport(src, tgt, cfg).map(|(value, _)| value)
}
