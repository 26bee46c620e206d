//! Entropic optimal transport, symmetric Sinkhorn–Knopp scaling and a tiny
//! exact transport solver used as a test oracle.
//!
//! [`entropic_ot`] solves
//!
//! ```text
//! min_{γ ∈ Π(p, q)} ⟨γ, C⟩ + λ Σ γ_ij ln γ_ij
//! ```
//!
//! by alternating row and column scalings, either with multiplicative
//! updates on the kernel `exp(−C/λ)` or with log-domain potentials.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::measures::TransportPlan;

/// Regularization below which the log-domain solver is selected automatically.
pub const LOG_DOMAIN_THRESHOLD: f64 = 0.05;

/// Largest `m·n` accepted by [`exact_ot_small`].
pub const EXACT_OT_MAX_CELLS: usize = 16;

const PROB_TOL: f64 = 1e-10;

/// Settings for [`entropic_ot`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// Entropic regularization weight.
    pub lambda_beta: f64,
    /// Maximum number of row/column sweeps.
    pub iterations: usize,
    /// `None` selects the log domain when `lambda_beta < 0.05`.
    pub log_domain: Option<bool>,
    /// Stop early once the marginal residual drops to this value; 0 runs
    /// every iteration.
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            lambda_beta: 0.2,
            iterations: 10,
            log_domain: None,
            tol: 0.0,
        }
    }
}

impl SinkhornConfig {
    pub fn new(lambda_beta: f64, iterations: usize) -> Self {
        Self {
            lambda_beta,
            iterations,
            ..Self::default()
        }
    }

    /// Same settings with an early-stopping tolerance.
    pub fn with_tol(self, tol: f64) -> Self {
        Self { tol, ..self }
    }

    pub fn with_log_domain(self, log_domain: bool) -> Self {
        Self {
            log_domain: Some(log_domain),
            ..self
        }
    }

    pub fn uses_log_domain(&self) -> bool {
        self.log_domain.unwrap_or(self.lambda_beta < LOG_DOMAIN_THRESHOLD)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_beta > 0.0) || !self.lambda_beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda_beta must be positive, got {}",
                self.lambda_beta
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("sinkhorn iterations must be >= 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sinkhorn tol must be nonnegative, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Output of [`entropic_ot`].
#[derive(Debug, Clone)]
pub struct EntropicPlan {
    pub plan: TransportPlan,
    /// Largest absolute deviation of a row or column sum from its target.
    pub residual: f64,
    /// Sweeps actually performed.
    pub iterations: usize,
    /// Whether the log-domain solver produced the plan.
    pub log_domain: bool,
}

pub(crate) fn check_probability(v: ArrayView1<'_, f64>, what: &'static str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    if let Some((index, &value)) = v.iter().enumerate().find(|(_, &x)| x < 0.0) {
        return Err(Error::NegativeWeight { index, value });
    }
    let total = v.sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidParameter(format!("{what} sums to {total}, expected 1")));
    }
    Ok(())
}

fn check_problem(cost: ArrayView2<'_, f64>, p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> Result<()> {
    let (m, n) = cost.dim();
    if m == 0 || n == 0 {
        return Err(Error::EmptyMeasure);
    }
    if p.len() != m {
        return Err(Error::DimensionMismatch {
            context: "cost rows vs source marginal",
            expected: m,
            found: p.len(),
        });
    }
    if q.len() != n {
        return Err(Error::DimensionMismatch {
            context: "cost columns vs target marginal",
            expected: n,
            found: q.len(),
        });
    }
    if cost.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("cost matrix"));
    }
    check_probability(p, "source marginal")?;
    check_probability(q, "target marginal")
}

/// Entropic OT plan between `p` and `q` for `cost`.
///
/// Scalings start at one (potentials at zero) and each sweep updates rows
/// then columns, so column sums are exact after every sweep. Rows or columns
/// with zero target mass are left out and come back as zeros. If the plain
/// solver under- or overflows it is rerun in the log domain.
pub fn entropic_ot(
    cost: ArrayView2<'_, f64>,
    p: ArrayView1<'_, f64>,
    q: ArrayView1<'_, f64>,
    cfg: &SinkhornConfig,
) -> Result<EntropicPlan> {
    cfg.validate()?;
    check_problem(cost, p, q)?;
    if !cfg.uses_log_domain() {
        if let Some(out) = plain_sinkhorn(cost, p, q, cfg) {
            return Ok(out);
        }
    }
    Ok(log_sinkhorn(cost, p, q, cfg))
}

fn finish(
    matrix: Array2<f64>,
    p: ArrayView1<'_, f64>,
    q: ArrayView1<'_, f64>,
    iterations: usize,
    log_domain: bool,
) -> EntropicPlan {
    let plan = TransportPlan::from_matrix_unchecked(matrix);
    let residual = plan.marginal_residual(p, q);
    EntropicPlan {
        plan,
        residual,
        iterations,
        log_domain,
    }
}

fn plain_sinkhorn(
    cost: ArrayView2<'_, f64>,
    p: ArrayView1<'_, f64>,
    q: ArrayView1<'_, f64>,
    cfg: &SinkhornConfig,
) -> Option<EntropicPlan> {
    let (m, n) = cost.dim();
    let lambda = cfg.lambda_beta;
    let shift = cost.iter().cloned().fold(f64::INFINITY, f64::min);
    let kernel = cost.mapv(|c| (-(c - shift) / lambda).exp());
    let mut u = Array1::<f64>::from_shape_fn(m, |i| if p[i] > 0.0 { 1.0 } else { 0.0 });
    let mut v = Array1::<f64>::from_shape_fn(n, |j| if q[j] > 0.0 { 1.0 } else { 0.0 });
    let mut done = 0;
    for _ in 0..cfg.iterations {
        for i in 0..m {
            if p[i] > 0.0 {
                let kv: f64 = kernel.row(i).iter().zip(v.iter()).map(|(k, x)| k * x).sum();
                u[i] = p[i] / kv;
            }
        }
        for j in 0..n {
            if q[j] > 0.0 {
                let ku: f64 = kernel.column(j).iter().zip(u.iter()).map(|(k, x)| k * x).sum();
                v[j] = q[j] / ku;
            }
        }
        done += 1;
        if !u.iter().chain(v.iter()).all(|x| x.is_finite()) {
            return None;
        }
        if cfg.tol > 0.0 {
            let worst = (0..m)
                .map(|i| {
                    let kv: f64 = kernel.row(i).iter().zip(v.iter()).map(|(k, x)| k * x).sum();
                    (u[i] * kv - p[i]).abs()
                })
                .fold(0.0, f64::max);
            if worst <= cfg.tol {
                break;
            }
        }
    }
    let matrix = Array2::from_shape_fn((m, n), |(i, j)| u[i] * kernel[[i, j]] * v[j]);
    if matrix.iter().any(|x| !x.is_finite()) || matrix.sum() <= 0.0 {
        return None;
    }
    Some(finish(matrix, p, q, done, false))
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + values.map(|x| (x - mx).exp()).sum::<f64>().ln()
}

fn log_sinkhorn(
    cost: ArrayView2<'_, f64>,
    p: ArrayView1<'_, f64>,
    q: ArrayView1<'_, f64>,
    cfg: &SinkhornConfig,
) -> EntropicPlan {
    let (m, n) = cost.dim();
    let lambda = cfg.lambda_beta;
    let rows: Vec<usize> = (0..m).filter(|&i| p[i] > 0.0).collect();
    let cols: Vec<usize> = (0..n).filter(|&j| q[j] > 0.0).collect();
    let mut f = Array1::<f64>::zeros(m);
    let mut g = Array1::<f64>::zeros(n);
    let mut done = 0;
    for _ in 0..cfg.iterations {
        for &i in &rows {
            let lse = log_sum_exp(cols.iter().map(|&j| (g[j] - cost[[i, j]]) / lambda));
            f[i] = lambda * (p[i].ln() - lse);
        }
        for &j in &cols {
            let lse = log_sum_exp(rows.iter().map(|&i| (f[i] - cost[[i, j]]) / lambda));
            g[j] = lambda * (q[j].ln() - lse);
        }
        done += 1;
        if cfg.tol > 0.0 {
            let worst = rows
                .iter()
                .map(|&i| {
                    let s: f64 = cols
                        .iter()
                        .map(|&j| ((f[i] + g[j] - cost[[i, j]]) / lambda).exp())
                        .sum();
                    (s - p[i]).abs()
                })
                .fold(0.0, f64::max);
            if worst <= cfg.tol {
                break;
            }
        }
    }
    let mut matrix = Array2::<f64>::zeros((m, n));
    for &i in &rows {
        for &j in &cols {
            matrix[[i, j]] = ((f[i] + g[j] - cost[[i, j]]) / lambda).exp();
        }
    }
    finish(matrix, p, q, done, true)
}

/// Result of [`symmetric_scaling`].
#[derive(Debug, Clone)]
pub struct SymmetricScaling {
    /// Diagonal of `D`.
    pub scaling: Array1<f64>,
    /// Largest `|(D K D 1)_i − 1|` at exit.
    pub residual: f64,
    pub iterations: usize,
}

/// Finds a positive `d` with `diag(d)·K·diag(d)` doubly stochastic, iterating
/// `d ← sqrt(d / (K d))` from `d = 1`.
pub fn symmetric_scaling(kernel: ArrayView2<'_, f64>, tol: f64, max_iter: usize) -> Result<SymmetricScaling> {
    let (n, c) = kernel.dim();
    if n != c {
        return Err(Error::DimensionMismatch {
            context: "symmetric scaling kernel",
            expected: n,
            found: c,
        });
    }
    if n == 0 {
        return Err(Error::EmptyMeasure);
    }
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidParameter(
            "symmetric scaling needs tol > 0 and max_iter >= 1".into(),
        ));
    }
    if kernel.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("scaling kernel"));
    }
    if kernel.iter().any(|&x| x <= 0.0) {
        return Err(Error::InvalidParameter(
            "scaling kernel must be entrywise positive".into(),
        ));
    }
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (kernel[[i, j]], kernel[[j, i]]);
            if (a - b).abs() > 1e-12 * a.abs().max(b.abs()) {
                return Err(Error::InvalidParameter("scaling kernel must be symmetric".into()));
            }
        }
    }
    let mut d = Array1::<f64>::ones(n);
    let mut iterations = 0;
    loop {
        let kd = kernel.dot(&d);
        let residual = d
            .iter()
            .zip(kd.iter())
            .map(|(a, b)| (a * b - 1.0).abs())
            .fold(0.0, f64::max);
        if residual <= tol {
            return Ok(SymmetricScaling {
                scaling: d,
                residual,
                iterations,
            });
        }
        if iterations == max_iter || !residual.is_finite() {
            return Err(Error::NotConverged {
                solver: "symmetric Sinkhorn scaling",
                iterations,
                residual,
            });
        }
        d.zip_mut_with(&kd, |x, &k| *x = (*x / k).sqrt());
        iterations += 1;
    }
}

/// Exact optimal plan and cost for `m·n ≤ 16`.
///
/// Every vertex of the transport polytope is a basic solution supported on
/// a spanning tree of the bipartite row/column graph; all `m+n−1`-cell
/// subsets are enumerated, tree flows solved by leaf peeling, and the
/// cheapest feasible vertex returned.
pub fn exact_ot_small(
    cost: ArrayView2<'_, f64>,
    p: ArrayView1<'_, f64>,
    q: ArrayView1<'_, f64>,
) -> Result<(TransportPlan, f64)> {
    let (m, n) = cost.dim();
    if m * n > EXACT_OT_MAX_CELLS {
        return Err(Error::SizeLimit {
            size: m * n,
            limit: EXACT_OT_MAX_CELLS,
        });
    }
    check_problem(cost, p, q)?;
    let cells = m * n;
    let basis = m + n - 1;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut pick: Vec<usize> = (0..basis).collect();
    loop {
        if let Some(flows) = tree_flows(&pick, m, n, p, q) {
            let value: f64 = pick.iter().zip(&flows).map(|(&c, &f)| f * cost[[c / n, c % n]]).sum();
            if best.as_ref().map_or(true, |(v, _)| value < *v) {
                let mut dense = vec![0.0; cells];
                for (&c, &f) in pick.iter().zip(&flows) {
                    dense[c] = f;
                }
                best = Some((value, dense));
            }
        }
        // next combination in lexicographic order
        let mut k = basis;
        while k > 0 && pick[k - 1] == cells - basis + k - 1 {
            k -= 1;
        }
        if k == 0 {
            break;
        }
        pick[k - 1] += 1;
        for t in k..basis {
            pick[t] = pick[t - 1] + 1;
        }
    }
    let (value, dense) = best.expect("the transport polytope always has a vertex");
    let matrix = Array2::from_shape_vec((m, n), dense).expect("cells = m·n");
    Ok((TransportPlan::from_matrix_unchecked(matrix), value))
}

fn tree_flows(pick: &[usize], m: usize, n: usize, p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> Option<Vec<f64>> {
    let mut degree = vec![0usize; m + n];
    for &c in pick {
        degree[c / n] += 1;
        degree[m + c % n] += 1;
    }
    if degree.contains(&0) {
        return None;
    }
    let mut supply: Vec<f64> = p.iter().chain(q.iter()).cloned().collect();
    let mut flows = vec![0.0; pick.len()];
    let mut alive = vec![true; pick.len()];
    for _ in 0..pick.len() {
        let (e, leaf_is_row) = pick.iter().enumerate().filter(|(e, _)| alive[*e]).find_map(|(e, &c)| {
            if degree[c / n] == 1 {
                Some((e, true))
            } else if degree[m + c % n] == 1 {
                Some((e, false))
            } else {
                None
            }
        })?;
        let (row, col) = (pick[e] / n, m + pick[e] % n);
        let (leaf, other) = if leaf_is_row { (row, col) } else { (col, row) };
        let flow = supply[leaf];
        if flow < -1e-12 {
            return None;
        }
        flows[e] = flow.max(0.0);
        supply[other] -= flow;
        supply[leaf] = 0.0;
        degree[row] -= 1;
        degree[col] -= 1;
        alive[e] = false;
    }
    Some(flows)
}
