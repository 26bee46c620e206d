//! Shared fixtures for the integration suites.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use robust_ot::data_io::Dataset;
use robust_ot::measures::{DiscreteMeasure, TransportPlan};
use robust_ot::sinkhorn::{entropic_ot, SinkhornConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

pub fn simplex_point(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    let w = Array1::from_shape_fn(n, |_| rng.random_range(0.2..1.0));
    let total = w.sum();
    w / total
}

/// Gaussian points with random positive weights.
pub fn random_measure(rng: &mut ChaCha8Rng, m: usize, d: usize) -> DiscreteMeasure {
    let points = gaussian(rng, m, d);
    DiscreteMeasure::new(points, simplex_point(rng, m)).unwrap()
}

/// `A Aᵀ / d` for Gaussian `A`.
pub fn random_psd(rng: &mut ChaCha8Rng, d: usize) -> Array2<f64> {
    let a = gaussian(rng, d, d);
    a.dot(&a.t()) / d as f64
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, d: usize) -> Array2<f64> {
    let a = gaussian(rng, d, d);
    (&a + &a.t()) / 2.0
}

/// Strictly positive plan with the given marginals (converged entropic
/// plan of a random cost).
pub fn random_plan(rng: &mut ChaCha8Rng, p: &Array1<f64>, q: &Array1<f64>) -> TransportPlan {
    let cost = gaussian(rng, p.len(), q.len());
    let cfg = SinkhornConfig::new(0.7, 5000).with_tol(1e-15);
    entropic_ot(cost.view(), p.view(), q.view(), &cfg).unwrap().plan
}

pub fn min_eigenvalue(m: ArrayView2<'_, f64>) -> f64 {
    let n = m.nrows();
    let dm = DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    SymmetricEigen::new(dm).eigenvalues.min()
}

pub fn frobenius(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Brute-force `Σ γ_ij (s_i − t_j)(s_i − t_j)ᵀ`.
pub fn outer_product_moment(
    plan: ArrayView2<'_, f64>,
    src: ArrayView2<'_, f64>,
    tgt: ArrayView2<'_, f64>,
) -> Array2<f64> {
    let d = src.ncols();
    let mut v = Array2::zeros((d, d));
    for i in 0..src.nrows() {
        for j in 0..tgt.nrows() {
            let delta = &src.row(i) - &tgt.row(j);
            for a in 0..d {
                for b in 0..d {
                    v[[a, b]] += plan[[i, j]] * delta[a] * delta[b];
                }
            }
        }
    }
    v
}

/// Gaussian blobs: `per_class` instances of each of `classes` classes in
/// `features` dimensions, unit variance, class means pairwise `separation` apart.
pub fn blobs(rng: &mut ChaCha8Rng, classes: usize, per_class: usize, features: usize, separation: f64) -> Dataset {
    let n = classes * per_class;
    let offset = separation / 2f64.sqrt();
    let mut x = gaussian(rng, n, features);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        x[[i, c]] += offset;
        labels.push(vec![c]);
    }
    let names = (0..classes).map(|c| format!("class{c}")).collect();
    Dataset::new(x, labels, names).unwrap()
}
