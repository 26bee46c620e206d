//! Discrete measures, transport plans and displacement second moments.
//!
//! For a plan `γ` between atoms `s_i` and `t_j` the displacement second
//! moment is
//!
//! ```text
//! V(γ) = Σ_ij γ_ij (s_i − t_j)(s_i − t_j)ᵀ            (d × d)
//! ```
//!
//! and, for a [`FeatureGrouping`] that reshapes every vector into a
//! `d1 × r` matrix `S`, the grouped moment is
//!
//! ```text
//! U(γ) = Σ_ij γ_ij (S_i − T_j)ᵀ (S_i − T_j)            (r × r)
//! ```
//!
//! so that `⟨V, B ⊗ I_d1⟩ = ⟨U, B⟩` for every symmetric `B` (with `V` taken
//! in permuted, zero-padded coordinates).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a [`TransportPlan`].
pub const PLAN_MASS_TOL: f64 = 1e-10;

/// Number of `f64`s the pair-moment cache may hold (64 MiB).
const PAIR_CACHE_BUDGET: usize = 1 << 23;

/// Finite set of weighted atoms in `R^d` with weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    points: Array2<f64>,
    weights: Array1<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure from an `m × d` point matrix and nonnegative weights,
    /// renormalizing the weights to sum to one.
    pub fn new(points: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        let (m, d) = points.dim();
        if m == 0 {
            return Err(Error::EmptyMeasure);
        }
        if d == 0 {
            return Err(Error::InvalidParameter("points must have dimension >= 1".into()));
        }
        if weights.len() != m {
            return Err(Error::DimensionMismatch {
                context: "measure weights",
                expected: m,
                found: weights.len(),
            });
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("measure points"));
        }
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite("measure weights"));
            }
            if value < 0.0 {
                return Err(Error::NegativeWeight { index, value });
            }
        }
        let total = weights.sum();
        if total <= 0.0 {
            return Err(Error::ZeroMass);
        }
        Ok(Self {
            points,
            weights: weights / total,
        })
    }

    /// Measure with equal weight on every row of `points`.
    pub fn uniform(points: Array2<f64>) -> Result<Self> {
        let m = points.nrows();
        Self::new(points, Array1::ones(m))
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn point(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }
}

/// Builds a [`DiscreteMeasure`] from row vectors.
pub fn make_measure(points: &[Vec<f64>], weights: &[f64]) -> Result<DiscreteMeasure> {
    if points.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let d = points[0].len();
    let mut flat = Vec::with_capacity(points.len() * d);
    for p in points {
        if p.len() != d {
            return Err(Error::DimensionMismatch {
                context: "measure points",
                expected: d,
                found: p.len(),
            });
        }
        flat.extend_from_slice(p);
    }
    let points = Array2::from_shape_vec((points.len(), d), flat).expect("shape checked above");
    DiscreteMeasure::new(points, Array1::from(weights.to_vec()))
}

/// Nonnegative `m × n` matrix of unit total mass together with its marginals.
///
/// The stored marginals are the actual row and column sums of the matrix;
/// use [`TransportPlan::marginal_residual`] to compare them with targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    matrix: Array2<f64>,
    row_marginal: Array1<f64>,
    col_marginal: Array1<f64>,
}

impl TransportPlan {
    pub fn from_matrix(matrix: Array2<f64>) -> Result<Self> {
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("transport plan"));
        }
        if let Some(&value) = matrix.iter().find(|&&x| x < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "transport plan has a negative entry {value}"
            )));
        }
        let total = matrix.sum();
        if (total - 1.0).abs() > PLAN_MASS_TOL {
            return Err(Error::InvalidParameter(format!(
                "transport plan has total mass {total}, expected 1"
            )));
        }
        let row_marginal = matrix.sum_axis(Axis(1));
        let col_marginal = matrix.sum_axis(Axis(0));
        Ok(Self {
            matrix,
            row_marginal,
            col_marginal,
        })
    }

    /// Wraps solver output whose mass is correct by construction.
    pub(crate) fn from_matrix_unchecked(matrix: Array2<f64>) -> Self {
        Self {
            row_marginal: matrix.sum_axis(Axis(1)),
            col_marginal: matrix.sum_axis(Axis(0)),
            matrix,
        }
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.matrix
    }

    pub fn row_marginal(&self) -> ArrayView1<'_, f64> {
        self.row_marginal.view()
    }

    pub fn col_marginal(&self) -> ArrayView1<'_, f64> {
        self.col_marginal.view()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.matrix.dim()
    }

    /// Largest absolute deviation of a row or column sum from its target.
    pub fn marginal_residual(&self, p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> f64 {
        let rows = self.row_marginal.iter().zip(p.iter()).map(|(a, b)| (a - b).abs());
        let cols = self.col_marginal.iter().zip(q.iter()).map(|(a, b)| (a - b).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }

    /// Linear cost `⟨γ, C⟩`.
    pub fn cost(&self, cost: ArrayView2<'_, f64>) -> f64 {
        (&self.matrix * &cost).sum()
    }

    /// Entropy term `Σ γ ln γ` with `0 ln 0 = 0`.
    pub fn neg_entropy(&self) -> f64 {
        neg_entropy(self.matrix.view())
    }

    pub fn transpose(&self) -> TransportPlan {
        TransportPlan {
            matrix: self.matrix.t().to_owned(),
            row_marginal: self.col_marginal.clone(),
            col_marginal: self.row_marginal.clone(),
        }
    }
}

pub(crate) fn neg_entropy(m: ArrayView2<'_, f64>) -> f64 {
    m.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum()
}

/// Product coupling `γ_ij = a_i b_j`.
pub fn independent_coupling(a: &DiscreteMeasure, b: &DiscreteMeasure) -> TransportPlan {
    product_plan(a.weights(), b.weights())
}

pub(crate) fn product_plan(p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> TransportPlan {
    TransportPlan::from_matrix_unchecked(Array2::from_shape_fn((p.len(), q.len()), |(i, j)| p[i] * q[j]))
}

/// Whether a moment lives in feature space or in group space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentKind {
    Full,
    Grouped,
}

/// Symmetric PSD second moment of displacements (`V` or `U`).
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementMoment {
    matrix: Array2<f64>,
    kind: MomentKind,
}

impl DisplacementMoment {
    /// Wraps a square matrix; only symmetry is checked here.
    pub fn new(matrix: Array2<f64>, kind: MomentKind) -> Result<Self> {
        let (r, c) = matrix.dim();
        if r != c {
            return Err(Error::DimensionMismatch {
                context: "displacement moment",
                expected: r,
                found: c,
            });
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("displacement moment"));
        }
        let scale = matrix.iter().fold(1.0_f64, |a, &x| a.max(x.abs()));
        for i in 0..r {
            for j in 0..i {
                if (matrix[[i, j]] - matrix[[j, i]]).abs() > 1e-10 * scale {
                    return Err(Error::InvalidParameter("displacement moment is not symmetric".into()));
                }
            }
        }
        Ok(Self { matrix, kind })
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.matrix
    }

    pub fn kind(&self) -> MomentKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diag().sum()
    }
}

/// Random assignment of `d` features into `r` groups of `d1` features.
///
/// Features are permuted, zero-padded to `d1·r`, then filled column-major
/// into a `d1 × r` matrix: group `g` holds padded positions
/// `g·d1 .. (g+1)·d1`. `permutation[k]` is the original feature placed at
/// padded position `k`; values `>= dim` denote padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureGrouping {
    permutation: Vec<usize>,
    dim: usize,
    group_size: usize,
    groups: usize,
    seed: Option<u64>,
}

impl FeatureGrouping {
    pub fn new(permutation: Vec<usize>, dim: usize, groups: usize, seed: Option<u64>) -> Result<Self> {
        if dim == 0 || groups == 0 {
            return Err(Error::InvalidGrouping("d and r must be positive".into()));
        }
        if groups > dim {
            return Err(Error::InvalidGrouping(format!("r = {groups} exceeds d = {dim}")));
        }
        let group_size = dim.div_ceil(groups);
        let padded = group_size * groups;
        if permutation.len() != padded {
            return Err(Error::InvalidGrouping(format!(
                "permutation has {} entries, expected d1·r = {padded}",
                permutation.len()
            )));
        }
        let mut seen = vec![false; padded];
        for &k in &permutation {
            if k >= padded || seen[k] {
                return Err(Error::InvalidGrouping(format!(
                    "permutation is not a bijection on 0..{padded} (entry {k})"
                )));
            }
            seen[k] = true;
        }
        Ok(Self {
            permutation,
            dim,
            group_size,
            groups,
            seed,
        })
    }

    /// `d1 = 1`, `r = d`, identity permutation: grouped moments equal full ones.
    pub fn identity(dim: usize) -> Result<Self> {
        Self::new((0..dim).collect(), dim, dim, None)
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Original feature dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Features per group, `d1`.
    pub fn group_size(&self) -> usize {
        self.group_size
    }

    /// Number of groups, `r`.
    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn pad(&self) -> usize {
        self.padded_dim() - self.dim
    }

    pub fn padded_dim(&self) -> usize {
        self.group_size * self.groups
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Permuted, zero-padded copy of `x` (length `d1·r`).
    pub fn permute(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.permutation
            .iter()
            .map(|&k| if k < self.dim { x[k] } else { 0.0 })
            .collect()
    }

    /// The `d1 × r` matrix obtained by column-major reshaping of [`Self::permute`].
    pub fn reshape(&self, x: ArrayView1<'_, f64>) -> Array2<f64> {
        let z = self.permute(x);
        Array2::from_shape_fn((self.group_size, self.groups), |(a, g)| z[g * self.group_size + a])
    }
}

/// `V(γ)` for a plan between `src` and `tgt`.
pub fn displacement_second_moment(
    plan: &TransportPlan,
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
) -> Result<DisplacementMoment> {
    check_plan_shape(plan, src, tgt)?;
    let disp = Displacements::full(src.points(), tgt.points(), false)?;
    Ok(disp.moment(plan.matrix(), 0.0))
}

/// `U(γ)` for a plan between `src` and `tgt` under `grouping`.
pub fn grouped_second_moment(
    plan: &TransportPlan,
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    grouping: &FeatureGrouping,
) -> Result<DisplacementMoment> {
    check_plan_shape(plan, src, tgt)?;
    let disp = Displacements::grouped(src.points(), tgt.points(), grouping, false)?;
    Ok(disp.moment(plan.matrix(), 0.0))
}

pub(crate) fn check_plan_shape(plan: &TransportPlan, src: &DiscreteMeasure, tgt: &DiscreteMeasure) -> Result<()> {
    let (m, n) = plan.shape();
    if m != src.len() {
        return Err(Error::DimensionMismatch {
            context: "plan rows vs source atoms",
            expected: src.len(),
            found: m,
        });
    }
    if n != tgt.len() {
        return Err(Error::DimensionMismatch {
            context: "plan columns vs target atoms",
            expected: tgt.len(),
            found: n,
        });
    }
    Ok(())
}

/// Pairwise displacements in working coordinates (permuted and padded when
/// grouped), shared by the Frank–Wolfe solver and the label-space loss.
///
/// Full mode is the special case `d1 = 1`, `r = d` with no permutation.
#[derive(Debug, Clone)]
pub(crate) struct Displacements {
    src: Array2<f64>,
    tgt: Array2<f64>,
    group_size: usize,
    groups: usize,
    kind: MomentKind,
    // (m·n) blocks of r×r, present when they fit in the budget
    pair_moments: Option<Vec<f64>>,
}

impl Displacements {
    pub(crate) fn full(src: ArrayView2<'_, f64>, tgt: ArrayView2<'_, f64>, cache: bool) -> Result<Self> {
        if src.ncols() != tgt.ncols() {
            return Err(Error::DimensionMismatch {
                context: "source vs target dimension",
                expected: src.ncols(),
                found: tgt.ncols(),
            });
        }
        let d = src.ncols();
        Ok(Self::build(
            src.to_owned(),
            tgt.to_owned(),
            1,
            d,
            MomentKind::Full,
            cache,
        ))
    }

    pub(crate) fn grouped(
        src: ArrayView2<'_, f64>,
        tgt: ArrayView2<'_, f64>,
        grouping: &FeatureGrouping,
        cache: bool,
    ) -> Result<Self> {
        for (context, pts) in [
            ("source vs grouping dimension", src),
            ("target vs grouping dimension", tgt),
        ] {
            if pts.ncols() != grouping.dim() {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: grouping.dim(),
                    found: pts.ncols(),
                });
            }
        }
        let work = |pts: ArrayView2<'_, f64>| {
            let mut out = Array2::zeros((pts.nrows(), grouping.padded_dim()));
            for (i, row) in pts.outer_iter().enumerate() {
                out.row_mut(i).assign(&grouping.permute(row));
            }
            out
        };
        Ok(Self::build(
            work(src),
            work(tgt),
            grouping.group_size(),
            grouping.groups(),
            MomentKind::Grouped,
            cache,
        ))
    }

    fn build(
        src: Array2<f64>,
        tgt: Array2<f64>,
        group_size: usize,
        groups: usize,
        kind: MomentKind,
        cache: bool,
    ) -> Self {
        let mut disp = Self {
            src,
            tgt,
            group_size,
            groups,
            kind,
            pair_moments: None,
        };
        let r = groups;
        let need = disp.src.nrows() * disp.tgt.nrows() * r * r;
        if cache && need <= PAIR_CACHE_BUDGET {
            let mut store = vec![0.0; need];
            let mut delta = vec![0.0; disp.src.ncols()];
            for i in 0..disp.src.nrows() {
                for j in 0..disp.tgt.nrows() {
                    disp.fill_delta(i, j, &mut delta);
                    let block = &mut store[(i * disp.tgt.nrows() + j) * r * r..][..r * r];
                    for g in 0..r {
                        for h in g..r {
                            let s = disp.group_dot(&delta, g, h);
                            block[g * r + h] = s;
                            block[h * r + g] = s;
                        }
                    }
                }
            }
            disp.pair_moments = Some(store);
        }
        disp
    }

    pub(crate) fn shape(&self) -> (usize, usize) {
        (self.src.nrows(), self.tgt.nrows())
    }

    fn fill_delta(&self, i: usize, j: usize, out: &mut [f64]) {
        let s = self.src.row(i);
        let t = self.tgt.row(j);
        for ((o, a), b) in out.iter_mut().zip(s.iter()).zip(t.iter()) {
            *o = a - b;
        }
    }

    #[inline]
    fn group_dot(&self, delta: &[f64], g: usize, h: usize) -> f64 {
        let d1 = self.group_size;
        let a = &delta[g * d1..(g + 1) * d1];
        let b = &delta[h * d1..(h + 1) * d1];
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Moment of `plan`, skipping entries `<= skip_below`.
    pub(crate) fn moment(&self, plan: ArrayView2<'_, f64>, skip_below: f64) -> DisplacementMoment {
        let (m, n) = self.shape();
        let r = self.groups;
        let mut out = Array2::<f64>::zeros((r, r));
        let mut delta = vec![0.0; self.src.ncols()];
        for i in 0..m {
            for j in 0..n {
                let w = plan[[i, j]];
                if w == 0.0 || w <= skip_below {
                    continue;
                }
                match &self.pair_moments {
                    Some(store) => {
                        let block = &store[(i * n + j) * r * r..][..r * r];
                        for g in 0..r {
                            for h in g..r {
                                out[[g, h]] += w * block[g * r + h];
                            }
                        }
                    }
                    None => {
                        self.fill_delta(i, j, &mut delta);
                        for g in 0..r {
                            for h in g..r {
                                out[[g, h]] += w * self.group_dot(&delta, g, h);
                            }
                        }
                    }
                }
            }
        }
        for g in 0..r {
            for h in 0..g {
                out[[g, h]] = out[[h, g]];
            }
        }
        DisplacementMoment {
            matrix: out,
            kind: self.kind,
        }
    }

    /// Entrywise `⟨(S_i − T_j) B, (S_i − T_j)⟩`; equals `(s_i − t_j)ᵀ M (s_i − t_j)`
    /// in full mode.
    pub(crate) fn cost(&self, metric: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let r = self.groups;
        if metric.dim() != (r, r) {
            return Err(Error::ModeMismatch {
                expected: r,
                found: metric.nrows(),
            });
        }
        let (m, n) = self.shape();
        let d1 = self.group_size;
        let mut out = Array2::zeros((m, n));
        let mut delta = vec![0.0; self.src.ncols()];
        let mut w = vec![0.0; r];
        for i in 0..m {
            for j in 0..n {
                let value = match &self.pair_moments {
                    Some(store) => {
                        let block = &store[(i * n + j) * r * r..][..r * r];
                        block.iter().zip(metric.iter()).map(|(x, y)| x * y).sum()
                    }
                    None => {
                        self.fill_delta(i, j, &mut delta);
                        let mut acc = 0.0;
                        for a in 0..d1 {
                            for (g, wg) in w.iter_mut().enumerate() {
                                *wg = delta[g * d1 + a];
                            }
                            for g in 0..r {
                                if w[g] == 0.0 {
                                    continue;
                                }
                                let row: f64 = (0..r).map(|h| metric[[g, h]] * w[h]).sum();
                                acc += w[g] * row;
                            }
                        }
                        acc
                    }
                };
                out[[i, j]] = value;
            }
        }
        Ok(out)
    }
}
